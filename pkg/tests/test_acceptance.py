"""Acceptance suite: one test per criterion, each at its stated tolerance.

A per-criterion PASS/FAIL line with the measured values is printed in the
terminal summary (see conftest.py).
"""

import json
import math

import numpy as np
import pytest

from jasper.cli import inspect_report, main as cli
from jasper.config import preset
from jasper.core import NormParams, Tensor, batch_norm, layer_norm_masked, sequence_mask
from jasper.ctc import ctc_brute_force, ctc_forward_backward
from jasper.core.gradcheck import max_rel_error, numerical_gradient
from jasper.decode import beam_search, exhaustive_search
from jasper.lm import BOS, load_arpa, save_arpa, train_ngram
from jasper.metrics import read_wer_csv
from jasper.model import count_params, residual_sources
from jasper.optim import NovoGradHyper, NovoGradState, novograd_step

from test_core import FD_TOL, N_INSTANCES, OP_CASES, check_gradients
from test_ctc import random_log_probs
from test_decode import AB_SPACE
from test_lm import TOY
from test_optim import GRADS, NOVOGRAD_ORACLE


def _inspect(capsys, name):
    assert cli(["inspect", "--preset", name, "--json"]) == 0
    return json.loads(capsys.readouterr().out)


@pytest.mark.criterion("structure")
def test_structure(capsys, detail):
    big = _inspect(capsys, "jasper10x5dr")
    small = _inspect(capsys, "jasper10x3")
    detail(f"10x5: {big['conv_layers']} layers, {big['parameters'] / 1e6:.1f}M")
    detail(f"10x3: {small['conv_layers']} layers, {small['parameters'] / 1e6:.1f}M")
    assert big["conv_layers"] == 54
    assert abs(big["parameters"] / 333e6 - 1) <= 0.03
    assert small["conv_layers"] == 34
    assert abs(small["parameters"] / 201e6 - 1) <= 0.03


@pytest.mark.criterion("topology parity")
def test_topology_parity(detail):
    names = ("jasper10x3", "jasper10x3dr", "jasper10x3densenet", "jasper10x3densernet")
    counts = [count_params(preset(n)) for n in names]
    spread = max(counts) / min(counts) - 1
    detail(f"spread {100 * spread:.2f}%")
    assert spread < 0.06
    cfg = preset("jasper10x3dr")
    assert all(residual_sources(cfg, i).indegree == i for i in range(1, cfg.num_blocks + 1))
    report = inspect_report(cfg)
    assert report["residual_indegree"] == {f"blocks.{i - 1}": i for i in range(1, cfg.num_blocks + 1)}


@pytest.mark.criterion("novograd")
def test_novograd(detail):
    worst = 0.0
    for decay, rows in NOVOGRAD_ORACLE.items():
        hyper = NovoGradHyper(beta1=0.95, beta2=0.5, eps=1e-8, weight_decay=decay)
        state, params = NovoGradState(), {"w": np.array([1.0])}
        for g, (v, m, w) in zip(GRADS, rows):
            params = novograd_step(params, {"w": np.array([g])}, state, hyper, lr=0.1)
            worst = max(worst, abs(state.v["w"] - v), abs(state.m["w"][0] - m), abs(params["w"][0] - w))
    detail(f"max oracle deviation {worst:.1e}")
    assert worst <= 1e-12

    w = np.array([0.5, -1.5, 2.0])
    g = np.array([1.0, 2.0, 2.0])
    hyper = NovoGradHyper(eps=1e-300, weight_decay=0.0)
    a = novograd_step({"w": w}, {"w": g}, NovoGradState(), hyper, 0.1)["w"]
    b = novograd_step({"w": w}, {"w": 10 * g}, NovoGradState(), hyper, 0.1)["w"]
    assert np.array_equal(a, b)

    state = NovoGradState()
    params = {"c.weight": np.ones((8, 4, 3)), "c.bias": np.ones(8), "n.gamma": np.ones(8)}
    novograd_step(params, {k: np.ones_like(v) for k, v in params.items()}, state, NovoGradHyper(), 0.01)
    assert state.second_moment_count() == len(params)
    assert all(np.ndim(v) == 0 for v in state.v.values())


@pytest.mark.criterion("ctc")
def test_ctc(detail):
    rng = np.random.default_rng(2024)
    worst, checked = 0.0, 0
    for _ in range(200):
        v, t, u = int(rng.integers(2, 5)), int(rng.integers(1, 6)), int(rng.integers(0, 4))
        target = rng.integers(0, v - 1, size=u).tolist()
        lp = random_log_probs(rng, v, t)
        ref = ctc_brute_force(lp, target, v - 1)
        got, _ = ctc_forward_backward(lp, target, v - 1)
        if math.isinf(ref):
            assert math.isinf(got)
            continue
        checked += 1
        worst = max(worst, abs(got - ref) / abs(ref))
    fd = 0.0
    for _ in range(10):
        target = rng.integers(0, 3, size=3).tolist()
        lp = random_log_probs(rng, 4, 6)
        _, grad = ctc_forward_backward(lp, target, 3)
        work = lp.copy()
        (num,) = numerical_gradient(lambda: ctc_forward_backward(work, target, 3)[0], [work])
        fd = max(fd, max_rel_error(grad, num))
    detail(f"{checked} feasible instances, max rel {worst:.1e}; FD {fd:.1e}")
    assert checked >= 100 and worst < 1e-10
    assert fd < 1e-4


@pytest.mark.criterion("autodiff")
def test_autodiff(detail):
    from test_core import _bn
    from jasper.core import conv1d, fold_batchnorm

    errors = {}
    for name, case in sorted(OP_CASES.items()):
        rng = np.random.default_rng(sum(map(ord, name)))
        errors[name] = max(check_gradients(*case(rng), rng) for _ in range(N_INSTANCES))
    worst_op = max(errors, key=errors.get)
    rng = np.random.default_rng(12)
    fold = 0.0
    for _ in range(10):
        w, b = rng.normal(size=(4, 3, 5)), rng.normal(size=4)
        bn = _bn(rng.normal(size=4), rng.normal(size=4), rng.normal(size=4), rng.uniform(0.1, 3, size=4))
        x = Tensor(rng.normal(size=(2, 3, 12)))
        ref = batch_norm(conv1d(x, Tensor(w), Tensor(b), stride=2), bn, mode="infer").data
        w2, b2 = fold_batchnorm(w, b, bn)
        fold = max(fold, np.abs(conv1d(x, Tensor(w2), Tensor(b2), stride=2).data - ref).max() / np.abs(ref).max())
    detail(f"{len(errors)} ops x {N_INSTANCES}, worst {worst_op} {errors[worst_op]:.1e}; fold {fold:.1e}")
    assert errors[worst_op] < FD_TOL
    assert fold < 1e-10


@pytest.mark.criterion("masking")
def test_masking(detail):
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(10):
        t, pad = int(rng.integers(3, 12)), int(rng.integers(1, 8))
        seq = rng.normal(size=(1, 4, t))
        padded = np.concatenate([seq, rng.normal(scale=50, size=(1, 4, pad))], axis=2)
        g, b = rng.normal(size=4), rng.normal(size=4)
        for op in (
            lambda z, m: batch_norm(Tensor(z), NormParams(Tensor(g), Tensor(b), np.zeros(4), np.ones(4)), mask=m),
            lambda z, m: layer_norm_masked(Tensor(z), Tensor(g), Tensor(b), m),
        ):
            alone = op(seq, sequence_mask([t], t)).data
            joint = op(padded, sequence_mask([t], t + pad)).data[:, :, :t]
            worst = max(worst, np.abs(alone - joint).max())
    detail(f"padded vs unpadded max diff {worst:.1e}")
    assert worst < 1e-9

    x = rng.normal(size=(3, 4, 8))
    mask = sequence_mask([8, 5, 2], 8)
    noisy = x + (1 - mask) * rng.normal(scale=100, size=x.shape)
    valid = np.broadcast_to(mask > 0, x.shape)
    for op in (
        lambda z: batch_norm(Tensor(z), NormParams(Tensor(g), Tensor(b), np.zeros(4), np.ones(4)), mask=mask),
        lambda z: layer_norm_masked(Tensor(z), Tensor(g), Tensor(b), mask),
    ):
        assert np.array_equal(op(x).data[valid], op(noisy).data[valid])


def _overfit_log_probs(result):
    from jasper.checkpoint import load_checkpoint
    from jasper.data import load_manifest, utterance_features
    from jasper.runconfig import load_run_config
    from jasper.train import infer_log_probs

    cfg = load_run_config(result.config)
    model = load_checkpoint(result.checkpoint)
    utts = load_manifest(result.out_dir / "corpus" / "train.jsonl")
    feats = [utterance_features(u, cfg.feature_config()) for u in utts]
    return cfg, list(infer_log_probs(model, feats, cfg.train.batch_size))


@pytest.mark.criterion("decoder")
def test_decoder(overfit_run, tmp_path, detail):
    rng = np.random.default_rng(5)
    lm = train_ngram(["a b", "ab ba", "b"], 2)
    worst, n = 0.0, 0
    for t in range(1, 9):  # V=4, so V^T <= 4^8 = 65536
        for use_lm in (False, True):
            x = rng.normal(size=(4, t)) * 2
            lp = x - np.log(np.exp(x).sum(axis=0, keepdims=True))
            alpha, beta = (0.7, 0.4) if use_lm else (0.0, 0.0)
            ref = exhaustive_search(lp, AB_SPACE, lm if use_lm else None, alpha, beta)
            got = beam_search(lp, AB_SPACE, lm if use_lm else None, width=None, alpha=alpha, beta=beta)
            assert [h.text for h in got.hyps] == [h.text for h in ref.hyps]
            worst = max(worst, max(abs(a.score - b.score) for a, b in zip(got.hyps, ref.hyps)))
            n += 1
    assert worst < 1e-9

    result, _ = overfit_run
    cfg, lps = _overfit_log_probs(result)
    alphabet, d = cfg.alphabet(), cfg.decode
    ngram = load_arpa(result.out_dir / "lm3.arpa")
    drops = 0
    for lp in lps:
        scores = [beam_search(lp, alphabet, ngram, width=w, alpha=d.alpha, beta=d.beta).best.score for w in range(1, 17)]
        drops += sum(b < a - 1e-12 for a, b in zip(scores, scores[1:]))
    detail(f"exhaustive max diff {worst:.1e} over {n} instances; width 1..16 on {len(lps)} utts, {drops} drops")
    assert drops == 0

    text = TOY + ["the zebra sat", "home"]
    for order in (2, 3):
        trained = train_ngram(TOY, order)
        save_arpa(trained, tmp_path / f"lm{order}.arpa")
        back = load_arpa(tmp_path / f"lm{order}.arpa")
        for s in text:
            assert back.score_sentence(s.split()) == trained.score_sentence(s.split())
        targets = sorted(trained.vocab - {BOS})
        contexts = {()} | {g[:-1] for table in trained.probs for g in table}
        for ctx in contexts:
            if BOS in ctx[1:]:
                continue
            assert abs(sum(10 ** trained.logprob(ctx, w) for w in targets) - 1) < 1e-4


@pytest.mark.criterion("end-to-end overfit")
def test_end_to_end_overfit(overfit_run, detail):
    result, _ = overfit_run
    losses = [m.train_loss for m in result.history]
    epochs = result.history[-1].epoch
    detail(f"greedy WER {result.wer['greedy']:.3f} after {epochs} epochs, {result.train_seconds:.0f}s training, "
           f"{result.total_seconds:.0f}s total, "
           f"beam+LM WER {result.wer['beam']:.3f}")
    assert result.wer["greedy"] == 0.0
    assert epochs <= 300
    assert result.total_seconds < 15 * 60
    assert result.wer["beam"] == 0.0
    first = losses[:10]
    assert all(b < a for a, b in zip(first, first[1:])), first


@pytest.mark.criterion("decode modes and perplexity/WER csv")
def test_decode_modes_and_ppl_wer_csv(overfit_run, detail):
    result, ppl_wer = overfit_run
    for mode in ("greedy", "beam", "beam+rescore"):
        tag = mode.replace("+", "_")
        assert (result.out_dir / f"hyp_{tag}.tsv").exists()
        assert read_wer_csv(result.out_dir / f"wer_{tag}.csv") == result.wer[mode]
    rows = ppl_wer.read_text(encoding="utf-8").splitlines()
    assert rows[0] == "label,perplexity,wer"
    parsed = [(float(p), float(w)) for _, p, w in (r.split(",") for r in rows[1:])]
    detail(", ".join(f"ppl {p:.1f} wer {w:.3f}" for p, w in parsed))
    assert len(parsed) >= 3
    assert all(math.isfinite(p) and p > 1 and 0 <= w for p, w in parsed)
