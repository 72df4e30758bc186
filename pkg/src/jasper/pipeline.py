"""End-to-end desk experiments driven through the CLI.

``run_overfit`` builds the synthetic tone corpus, trains the 2x2 mini model
with NovoGrad until greedy WER on its training set reaches zero, then decodes
in all three modes (greedy, beam + n-gram, beam + rescoring) and evaluates.
``perplexity_wer_sweep`` varies LM quality and records (perplexity, WER).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

from .cli import main as cli
from .data import make_tone_corpus
from .metrics import read_wer_csv
from .train import EpochMetrics, read_metrics

OVERFIT_INI = """\
[model]
preset = mini2x2
seed = {seed}

[data]
train_manifest = corpus/train.jsonl
n_mels = 40

[optim]
kind = novograd
lr = 0.01
schedule = poly
weight_decay = 0.001

[train]
epochs = {epochs}
batch_size = 10
seed = {seed}
checkpoint_dir = ckpt
early_stop_wer = 0.0

[decode]
mode = beam
beam_width = {width}
alpha = 0.5
beta = 1.0
lm_path = lm3.arpa
nbest = 8
w_am = 1.0
w_lm = 0.5
w_wc = 0.0
"""

DECODE_MODES = ("greedy", "beam", "beam+rescore")


class PipelineError(RuntimeError):
    pass


@dataclass
class OverfitResult:
    out_dir: Path
    config: Path
    history: list[EpochMetrics]
    train_seconds: float
    wer: dict[str, float] = field(default_factory=dict)
    hyps: dict[str, Path] = field(default_factory=dict)

    @property
    def checkpoint(self) -> Path:
        return self.out_dir / "ckpt" / "best.ckpt"


def _run(*argv) -> None:
    code = cli([str(a) for a in argv])
    if code != 0:
        raise PipelineError(f"'jasper {' '.join(map(str, argv))}' exited with {code}")


def prepare_overfit(out_dir, seed: int = 0, epochs: int = 300, width: int = 16) -> Path:
    """Write the corpus, both LMs and ``run.ini`` under ``out_dir``; returns the config path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = make_tone_corpus(out / "corpus", n_utts=20, seed=seed)
    _run("lm", "train", "--corpus", paths["lm_corpus"], "--order", 3, "--out", out / "lm3.arpa")
    # stand-in for the external rescoring LM: a higher-order model of the same text
    _run("lm", "train", "--corpus", paths["lm_corpus"], "--order", 4, "--out", out / "lm4.arpa")
    ini = out / "run.ini"
    ini.write_text(OVERFIT_INI.format(seed=seed, epochs=epochs, width=width), encoding="utf-8")
    return ini


def decode_and_score(ini, checkpoint, manifest, out_dir, mode: str, extra=()) -> tuple[Path, float]:
    out = Path(out_dir)
    tag = mode.replace("+", "_")
    hyp = out / f"hyp_{tag}.tsv"
    args = ["decode", ini, "--checkpoint", checkpoint, "--manifest", manifest, "--mode", mode, "--out", hyp, *extra]
    if mode == "beam+rescore":
        nbest = out / "hyp_beam.tsv.nbest.tsv"
        if not nbest.exists():
            decode_and_score(ini, checkpoint, manifest, out, "beam")
        scores = out / "external_scores.tsv"
        _run("lm", "score-nbest", "--lm", out / "lm4.arpa", "--nbest", nbest, "--out", scores)
        args += ["--external-scores", scores]
    _run(*args)
    wer_csv = out / f"wer_{tag}.csv"
    _run("evaluate", "--ref", manifest, "--hyp", hyp, "--out", wer_csv)
    return hyp, read_wer_csv(wer_csv)


def run_overfit(out_dir, seed: int = 0, epochs: int = 300, width: int = 16) -> OverfitResult:
    out = Path(out_dir)
    ini = prepare_overfit(out, seed, epochs, width)
    start = time.perf_counter()
    _run("train", ini)
    seconds = time.perf_counter() - start
    history = read_metrics(out / "ckpt" / "metrics.csv")
    result = OverfitResult(out, ini, history, seconds)
    manifest = out / "corpus" / "train.jsonl"
    for mode in DECODE_MODES:
        result.hyps[mode], result.wer[mode] = decode_and_score(ini, result.checkpoint, manifest, out, mode)
    return result


def perplexity_wer_sweep(result: OverfitResult, sizes=(10, 40, 120, None), snapshot_epochs: int = 18) -> Path:
    """Decode with LMs of varying quality and record (perplexity, WER) rows in ``ppl_wer.csv``.

    LM quality varies with the amount of text: each LM sees a growing prefix
    of the random LM sentences (the audio transcripts are left out).  The
    acoustic model is an under-trained snapshot (constant lr, fixed epochs),
    so first-pass errors remain for the LM to fix.
    """
    out = result.out_dir
    ini = out / "snapshot.ini"
    text = result.config.read_text(encoding="utf-8")
    ini.write_text(text.replace("schedule = poly", "schedule = const").replace("early_stop_wer = 0.0", "early_stop_wer = -1"),
                   encoding="utf-8")
    snap_dir = out / "snapshot"
    _run("train", ini, "--epochs", snapshot_epochs, "--checkpoint-dir", snap_dir)
    snapshot = snap_dir / f"epoch-{snapshot_epochs:04d}.ckpt"

    n_utts = len((out / "corpus" / "train.jsonl").read_text(encoding="utf-8").splitlines())
    sentences = (out / "corpus" / "lm_corpus.txt").read_text(encoding="utf-8").splitlines()[n_utts:]
    heldout = out / "corpus" / "lm_heldout.txt"
    manifest = out / "corpus" / "train.jsonl"
    ppl_wer = out / "ppl_wer.csv"
    ppl_wer.unlink(missing_ok=True)
    for n in sizes:
        lines = sentences[:n] if n else sentences
        label = f"lm3_{len(lines)}"
        sub = out / "sweep" / label
        sub.mkdir(parents=True, exist_ok=True)
        (sub / "corpus.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        arpa = sub / "lm.arpa"
        _run("lm", "train", "--corpus", sub / "corpus.txt", "--order", 3, "--out", arpa)
        decode_and_score(ini, snapshot, manifest, sub, "beam", ("--lm", arpa))
        _run("lm", "perplexity", "--lm", arpa, "--corpus", heldout, "--wer-csv", sub / "wer_beam.csv",
             "--ppl-wer-csv", ppl_wer, "--label", label)
    return ppl_wer
