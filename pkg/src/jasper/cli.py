"""Command-line entry points: train, decode, evaluate, inspect, lm.

Exit codes: 0 ok, 1 usage or config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("jasper")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# --- hypothesis files ----------------------------------------------------------


def write_hyps(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerows(rows)


def read_hyps(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            utt, sep, hyp = line.partition("\t")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'id<TAB>hypothesis'")
            if utt in out:
                raise ValueError(f"{path}:{lineno}: duplicate id {utt!r}")
            out[utt] = hyp
    return out


# --- verbs ---------------------------------------------------------------------


def cmd_train(args) -> int:
    from .runconfig import load_run_config, with_overrides
    from .train import train

    cfg = load_run_config(args.config)
    if args.epochs is not None:
        cfg = with_overrides(cfg, train={"epochs": args.epochs})
    if args.checkpoint_dir:
        cfg = with_overrides(cfg, train={"checkpoint_dir": args.checkpoint_dir})
    history = train(cfg, resume=args.resume)
    if history:
        last = history[-1]
        print(f"epoch {last.epoch}: train_loss {last.train_loss:.4f} dev_wer {last.dev_wer:.4f}")
    else:
        print(f"wrote initial checkpoint to {cfg.train.checkpoint_dir}")
    return EXIT_OK


def decode_utterances(cfg, model, utts, lm=None):
    """Decode manifest utterances with ``cfg.decode``.

    Greedy mode returns ``(rows, [])`` with rows ``(id, text)``; beam modes
    return the first-pass rows and the n-best lists.
    """
    from .data import utterance_features
    from .decode import beam_search
    from .train import greedy_transcripts, infer_log_probs

    alphabet = cfg.alphabet()
    fcfg = cfg.feature_config()
    feats = []
    for u in utts:
        try:
            feats.append(utterance_features(u, fcfg))
        except ValueError as exc:
            raise ValueError(f"utterance {u.utt_id}: {exc}") from None
    bs = cfg.train.batch_size
    d = cfg.decode
    if d.mode == "greedy":
        hyps = greedy_transcripts(model, feats, alphabet, bs)
        return [(u.utt_id, h) for u, h in zip(utts, hyps)], []
    lists = [
        beam_search(lp, alphabet, lm, width=d.beam_width, alpha=d.alpha, beta=d.beta, nbest=d.nbest, utt_id=u.utt_id)
        for u, lp in zip(utts, infer_log_probs(model, feats, bs))
    ]
    return [(nb.utt_id, nb.best.text) for nb in lists], lists


def cmd_decode(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import load_manifest
    from .decode import read_scores, rescore, write_nbest
    from .lm import load_arpa
    from .runconfig import load_run_config, with_overrides

    cfg = load_run_config(args.config)
    overrides = {
        k: v
        for k, v in (("mode", args.mode), ("beam_width", args.width), ("alpha", args.alpha), ("beta", args.beta),
                     ("lm_path", args.lm))
        if v is not None
    }
    if overrides:
        cfg = with_overrides(cfg, decode=overrides)
    d = cfg.decode
    if d.mode != "greedy" and not d.lm_path:
        raise UsageError(f"decode mode {d.mode!r} needs an LM ([decode] lm_path or --lm)")
    if d.mode == "beam+rescore" and not args.external_scores:
        raise UsageError("beam+rescore needs --external-scores")
    lm = load_arpa(d.lm_path) if d.mode != "greedy" else None
    model = load_checkpoint(args.checkpoint, expected_config=cfg.model_config())
    utts = load_manifest(args.manifest, alphabet=cfg.alphabet())

    rows, lists = decode_utterances(cfg, model, utts, lm)
    if d.mode == "beam+rescore":
        external = read_scores(args.external_scores, lists)
        rescored = [rescore(nb, ext, (d.w_am, d.w_lm, d.w_wc)) for nb, ext in zip(lists, external)]
        rows = [(nb.utt_id, nb.best.text) for nb in rescored]
    write_hyps(args.out, rows)
    if lists:
        nbest_path = args.nbest_out or f"{args.out}.nbest.tsv"
        write_nbest(nbest_path, lists)
        print(f"wrote {len(rows)} hypotheses to {args.out} and n-best lists to {nbest_path}")
    else:
        print(f"wrote {len(rows)} hypotheses to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .data import load_manifest
    from .metrics import write_wer_csv

    refs = load_manifest(args.ref)
    hyps = read_hyps(args.hyp)
    ref_ids = [u.utt_id for u in refs]
    missing = [i for i in ref_ids if i not in hyps]
    extra = sorted(set(hyps) - set(ref_ids))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing hypotheses for: {', '.join(missing)}")
        if extra:
            parts.append(f"hypotheses without reference: {', '.join(extra)}")
        raise ValueError("; ".join(parts))
    out = args.out or f"{args.hyp}.wer.csv"
    total = write_wer_csv(out, [(u.utt_id, u.text, hyps[u.utt_id]) for u in refs])
    print(f"WER {100 * total.wer:.2f}% (S={total.substitutions} I={total.insertions} D={total.deletions} "
          f"N={total.ref_len}); per-utterance CSV: {out}")
    return EXIT_OK


def inspect_report(cfg) -> dict:
    from .model import block_param_counts, conv_layer_count, count_params, receptive_field, residual_sources

    return {
        "conv_layers": conv_layer_count(cfg),
        "parameters": count_params(cfg),
        "block_parameters": block_param_counts(cfg),
        "residual_indegree": {f"blocks.{i - 1}": residual_sources(cfg, i).indegree for i in range(1, cfg.num_blocks + 1)},
        "receptive_field_frames": receptive_field(cfg),
    }


def cmd_inspect(args) -> int:
    from .config import preset
    from .runconfig import load_run_config

    if args.config:
        cfg = load_run_config(args.config).model_config()
    else:
        try:
            cfg = preset(args.preset, n_features=args.n_features)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    report = inspect_report(cfg)
    if args.json:
        print(json.dumps(report, indent=2))
        return EXIT_OK
    print(f"topology: {cfg.topology}  blocks: {cfg.num_blocks}x{cfg.blocks[0].sub_blocks}")
    print(f"conv_layers: {report['conv_layers']}")
    print(f"parameters: {report['parameters']} ({report['parameters'] / 1e6:.1f}M)")
    print(f"receptive_field_frames: {report['receptive_field_frames']}")
    for name, n in report["block_parameters"].items():
        deg = report["residual_indegree"].get(name)
        print(f"  {name:<12} {n:>12}" + (f"  residual_indegree={deg}" if deg is not None else ""))
    return EXIT_OK


def _read_corpus(path) -> list[str]:
    try:
        lines = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines()]
    except OSError as exc:
        raise ValueError(f"{path}: {exc.strerror}") from None
    lines = [line for line in lines if line]
    if not lines:
        raise ValueError(f"{path}: empty corpus")
    return lines


def cmd_lm(args) -> int:
    from .lm import load_arpa, save_arpa, train_ngram
    from .metrics import normalize_text, perplexity, read_wer_csv

    if args.lm_cmd == "train":
        corpus = [normalize_text(s) for s in _read_corpus(args.corpus)]
        lm = train_ngram(corpus, args.order, args.discount)
        save_arpa(lm, args.out)
        print(f"wrote {args.order}-gram LM ({', '.join(map(str, lm.num_ngrams()))} n-grams) to {args.out}")
    elif args.lm_cmd == "perplexity":
        lm = load_arpa(args.lm)
        ppl = perplexity(lm, [normalize_text(s) for s in _read_corpus(args.corpus)])
        print(f"perplexity {ppl!r}")
        if args.wer_csv:
            wer = read_wer_csv(args.wer_csv)
            out = Path(args.ppl_wer_csv or "ppl_wer.csv")
            new = not out.exists()
            with open(out, "a", encoding="utf-8", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                if new:
                    w.writerow(["label", "perplexity", "wer"])
                w.writerow([args.label or Path(args.lm).stem, repr(ppl), repr(wer)])
            print(f"appended (perplexity, WER) = ({ppl:.4f}, {wer:.4f}) to {out}")
    elif args.lm_cmd == "arpa-roundtrip":
        lm = load_arpa(args.lm)
        save_arpa(lm, args.out)
        back = load_arpa(args.out)
        corpus = [normalize_text(s) for s in _read_corpus(args.corpus)] if args.corpus else []
        if corpus:
            a, b = perplexity(lm, corpus), perplexity(back, corpus)
            print(f"perplexity before {a!r} after {b!r}")
            if abs(a - b) > 1e-9 * max(1.0, abs(a)):
                raise FloatingPointError("ARPA round trip changed perplexity")
        print(f"round-tripped {args.lm} -> {args.out}")
    elif args.lm_cmd == "score-nbest":
        from .decode import external_lm_scores, read_nbest, write_scores

        lm = load_arpa(args.lm)
        lists = read_nbest(args.nbest)
        rows = external_lm_scores(lists, lm)
        write_scores(args.out, rows)
        print(f"wrote {len(rows)} external scores to {args.out}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="jasper", description="Jasper convolutional speech recognition toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from an INI run config")
    t.add_argument("config")
    t.add_argument("--resume", action="store_true", help="continue from the newest epoch checkpoint")
    t.add_argument("--epochs", type=int, help="override [train] epochs")
    t.add_argument("--checkpoint-dir", help="override [train] checkpoint_dir")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("decode", help="transcribe a manifest with a checkpoint")
    d.add_argument("config")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--manifest", required=True)
    d.add_argument("--out", required=True, help="hypothesis TSV (id, text)")
    d.add_argument("--mode", choices=("greedy", "beam", "beam+rescore"), help="override [decode] mode")
    d.add_argument("--lm", help="ARPA LM (override [decode] lm_path)")
    d.add_argument("--width", type=int, help="beam width (default from config: 2048)")
    d.add_argument("--alpha", type=float, help="LM weight")
    d.add_argument("--beta", type=float, help="word insertion bonus")
    d.add_argument("--nbest-out", help="n-best TSV path (default: <out>.nbest.tsv)")
    d.add_argument("--external-scores", help="external LM scores TSV for beam+rescore")
    d.set_defaults(func=cmd_decode)

    e = sub.add_parser("evaluate", help="WER of a hypothesis file against a manifest")
    e.add_argument("--ref", required=True, help="reference manifest")
    e.add_argument("--hyp", required=True, help="hypothesis TSV")
    e.add_argument("--out", help="per-utterance CSV (default: <hyp>.wer.csv)")
    e.set_defaults(func=cmd_evaluate)

    i = sub.add_parser("inspect", help="report structure of a model config")
    g = i.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset")
    g.add_argument("--config", help="INI run config")
    i.add_argument("--n-features", type=int, default=64)
    i.add_argument("--json", action="store_true")
    i.set_defaults(func=cmd_inspect)

    lm = sub.add_parser("lm", help="n-gram LM utilities")
    lsub = lm.add_subparsers(dest="lm_cmd", required=True, parser_class=_Parser)
    lt = lsub.add_parser("train")
    lt.add_argument("--corpus", required=True)
    lt.add_argument("--order", type=int, default=3)
    lt.add_argument("--discount", type=float, default=0.75)
    lt.add_argument("--out", required=True)
    lp = lsub.add_parser("perplexity")
    lp.add_argument("--lm", required=True)
    lp.add_argument("--corpus", required=True)
    lp.add_argument("--wer-csv", help="WER CSV from 'evaluate'; appends a (perplexity, WER) row")
    lp.add_argument("--ppl-wer-csv", help="output CSV for (perplexity, WER) rows (default ppl_wer.csv)")
    lp.add_argument("--label")
    lr = lsub.add_parser("arpa-roundtrip")
    lr.add_argument("--lm", required=True)
    lr.add_argument("--out", required=True)
    lr.add_argument("--corpus")
    ls = lsub.add_parser("score-nbest", help="external scores for an n-best file from an ARPA LM")
    ls.add_argument("--lm", required=True)
    ls.add_argument("--nbest", required=True)
    ls.add_argument("--out", required=True)
    lm.set_defaults(func=cmd_lm)
    return p


def main(argv=None) -> int:
    from .runconfig import ConfigError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"jasper: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"jasper: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"jasper: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
