"""Deterministic training loop with per-epoch metrics, checkpoints and resume.

All randomness is keyed by ``(seed, purpose, epoch, ...)`` through counter-based
generators, so resuming from the epoch-k checkpoint replays epoch k+1 exactly.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import read_checkpoint, save_checkpoint
from .core import PaddedBatch, backward
from .core.ops import make_rng
from .ctc import CTCInfeasibleError, ctc_loss, greedy_decode
from .data import Utterance, bucket_batches, load_manifest, utterance_features
from .features import choose_speed_factor
from .metrics import corpus_wer
from .model import Model, build
from .optim import lr_schedule, make_optimizer
from .runconfig import RunConfig

log = logging.getLogger(__name__)

METRICS_FIELDS = ("epoch", "step", "train_loss", "dev_wer", "lr", "skipped")
_CKPT = re.compile(r"epoch-(\d+)\.ckpt$")


class NumericFailure(FloatingPointError):
    """Non-finite values during training, with epoch/step/utterance context."""


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    step: int
    train_loss: float
    dev_wer: float
    lr: float
    skipped: int

    def row(self) -> list[str]:
        return [str(self.epoch), str(self.step), repr(self.train_loss), repr(self.dev_wer), repr(self.lr), str(self.skipped)]


def read_metrics(path) -> list[EpochMetrics]:
    """Parse a ``metrics.csv`` written during training."""
    with open(path, encoding="utf-8", newline="") as f:
        return [
            EpochMetrics(int(r["epoch"]), int(r["step"]), float(r["train_loss"]), float(r["dev_wer"]),
                         float(r["lr"]), int(r["skipped"]))
            for r in csv.DictReader(f)
        ]


def infer_log_probs(model: Model, feats: list[np.ndarray], batch_size: int = 8) -> list[np.ndarray]:
    """Per-utterance ``[V, T']`` log-probabilities in inference mode."""
    out = []
    for i in range(0, len(feats), batch_size):
        pb = PaddedBatch.from_list(feats[i : i + batch_size], dtype=model.dtype)
        lp, lengths = model.forward(pb, mode="infer")
        out += [lp.data[b, :, : int(lengths[b])].astype(np.float64) for b in range(pb.batch_size)]
    return out


def greedy_transcripts(model: Model, feats, alphabet, batch_size: int = 8) -> list[str]:
    return [greedy_decode(lp[None], [lp.shape[1]], alphabet)[0] for lp in infer_log_probs(model, feats, batch_size)]


class Trainer:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.alphabet = cfg.alphabet()
        self.fcfg = cfg.feature_config()
        self.model_cfg = cfg.model_config()
        if not cfg.data.train_manifest:
            raise ValueError("[data] train_manifest is required for training")
        self.train_utts = load_manifest(cfg.data.train_manifest, alphabet=self.alphabet)
        dev = cfg.data.dev_manifest
        self.dev_utts = load_manifest(dev, alphabet=self.alphabet) if dev else self.train_utts
        self.targets = [self.alphabet.encode(u.text) for u in self.train_utts]
        self._cache: dict[tuple[str, int], np.ndarray] = {}
        self.dir = Path(cfg.train.checkpoint_dir)
        self.metrics_path = self.dir / "metrics.csv"
        bs, n = cfg.train.batch_size, len(self.train_utts)
        self.steps_per_epoch = math.ceil(n / bs)
        self.total_steps = cfg.train.epochs * self.steps_per_epoch

    def features(self, utt: Utterance, idx: int, epoch: int | None) -> np.ndarray:
        speed = 1.0
        if epoch is not None and self.cfg.data.speed_perturb != "none":
            speed = choose_speed_factor(self.cfg.data.speed_perturb, make_rng(self.cfg.train.seed, 2, epoch, idx))
        key = (str(utt.path), int(round(speed * 1e6)))
        if key not in self._cache or speed != 1.0:
            try:
                feats = utterance_features(utt, self.fcfg, speed)
            except ValueError as exc:
                raise type(exc)(f"utterance {utt.utt_id}: {exc}") from None
            if speed != 1.0:
                return feats
            self._cache[key] = feats
        return self._cache[key]

    def dev_wer(self, model: Model) -> float:
        feats = [self.features(u, i, None) for i, u in enumerate(self.dev_utts)]
        hyps = greedy_transcripts(model, feats, self.alphabet, self.cfg.train.batch_size)
        return corpus_wer([(u.text, h) for u, h in zip(self.dev_utts, hyps)]).wer

    # --- checkpoints ---------------------------------------------------------

    def _epoch_path(self, epoch: int) -> Path:
        return self.dir / f"epoch-{epoch:04d}.ckpt"

    def latest_checkpoint(self) -> Path | None:
        found = sorted((int(m.group(1)), p) for p in self.dir.glob("epoch-*.ckpt") if (m := _CKPT.search(p.name)))
        return found[-1][1] if found else None

    def _save(self, model, opt, epoch, step, best):
        meta = {"epoch": epoch, "step": step, "best_wer": best}
        save_checkpoint(model, self._epoch_path(epoch), optimizer=opt, meta=meta)
        keep = self.cfg.train.keep_checkpoints
        if keep:
            old = sorted(int(m.group(1)) for p in self.dir.glob("epoch-*.ckpt") if (m := _CKPT.search(p.name)))
            for e in old[:-keep]:
                self._epoch_path(e).unlink(missing_ok=True)

    def _write_metrics(self, rows: list[EpochMetrics]) -> None:
        tmp = self.metrics_path.with_suffix(".csv.tmp")
        with open(tmp, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(METRICS_FIELDS)
            w.writerows(r.row() for r in rows)
        tmp.replace(self.metrics_path)

    def _read_metrics(self, upto: int) -> list[EpochMetrics]:
        if not self.metrics_path.exists():
            return []
        return [r for r in read_metrics(self.metrics_path) if r.epoch <= upto]

    # --- loop ----------------------------------------------------------------

    def run(self, resume: bool = False) -> list[EpochMetrics]:
        cfg = self.cfg
        self.dir.mkdir(parents=True, exist_ok=True)
        model = build(self.model_cfg, seed=cfg.model.seed)
        opt = make_optimizer(cfg.optim.kind, **cfg.optimizer_hyper())
        start, step, best, history = 0, 0, math.inf, []
        latest = self.latest_checkpoint() if resume else None
        if latest is not None:
            ckpt = read_checkpoint(latest)
            if ckpt.config != self.model_cfg:
                raise ValueError(f"{latest}: checkpoint model config differs from the run config")
            model.load_state_arrays(ckpt.model_arrays)
            opt.load_state_arrays(ckpt.optim_arrays)
            start, step = ckpt.meta["epoch"], ckpt.meta["step"]
            best = ckpt.meta.get("best_wer", math.inf)
            history = self._read_metrics(start)
            log.info("resumed from %s (epoch %d, step %d)", latest, start, step)
        else:
            self._save(model, opt, 0, 0, best)
            self._write_metrics([])

        durations = [u.duration for u in self.train_utts]
        for epoch in range(start + 1, cfg.train.epochs + 1):
            losses, skipped, lr = [], 0, 0.0
            for batch in bucket_batches(durations, cfg.train.batch_size, make_rng(cfg.train.seed, 1, epoch)):
                feats = [self.features(self.train_utts[i], i, epoch) for i in batch]
                targets = [self.targets[i] for i in batch]
                ids = [self.train_utts[i].utt_id for i in batch]
                lr = lr_schedule(cfg.optim.schedule, step, self.total_steps, cfg.optim.lr, cfg.optim.warmup)
                try:
                    item_losses = self._step(model, opt, feats, targets, step, lr)
                except CTCInfeasibleError:
                    log.warning("epoch %d step %d: all targets infeasible in batch %s; skipped", epoch, step, ids)
                    skipped += len(batch)
                    step += 1
                    continue
                except FloatingPointError as exc:
                    raise NumericFailure(f"epoch {epoch} step {step} utterances {ids}: {exc}") from exc
                ok = np.isfinite(item_losses)
                skipped += int((~ok).sum())
                losses += item_losses[ok].tolist()
                step += 1
            wer = self.dev_wer(model)
            m = EpochMetrics(epoch, step, float(np.mean(losses)) if losses else math.nan, wer, lr, skipped)
            history.append(m)
            self._write_metrics(history)
            if wer < best:
                best = wer
                save_checkpoint(model, self.dir / "best.ckpt", optimizer=opt,
                                meta={"epoch": epoch, "step": step, "best_wer": best})
            self._save(model, opt, epoch, step, best)
            log.info("epoch %d step %d loss %.4f dev_wer %.4f lr %.3g", epoch, step, m.train_loss, wer, lr)
            if wer <= cfg.train.early_stop_wer:
                log.info("early stop: dev WER %.4f <= %.4f", wer, cfg.train.early_stop_wer)
                break
        return history

    def _step(self, model, opt, feats, targets, step, lr) -> np.ndarray:
        pb = PaddedBatch.from_list(feats, dtype=model.dtype)
        lp, out_lengths = model.forward(pb, mode="train", step=step)
        loss, per_item = ctc_loss(lp, targets, out_lengths, skip_infeasible=True)
        model.zero_grad()
        grads = backward(loss, model.params)
        opt.step(model.param_arrays(), grads, lr)
        return per_item


def train(cfg: RunConfig, resume: bool = False) -> list[EpochMetrics]:
    return Trainer(cfg).run(resume=resume)
