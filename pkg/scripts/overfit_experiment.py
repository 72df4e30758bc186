"""Overfit the 2x2 mini model on the synthetic tone corpus and decode it three ways.

Usage: python3 scripts/overfit_experiment.py [OUT_DIR] [--seed N] [--sweep]
"""

import argparse
import sys

from jasper.pipeline import DECODE_MODES, perplexity_wer_sweep, run_overfit


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out_dir", nargs="?", default="runs/overfit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--width", type=int, default=16, help="beam width for the beam modes")
    p.add_argument("--sweep", action="store_true", help="also run the LM-quality sweep (perplexity, WER)")
    args = p.parse_args(argv)

    res = run_overfit(args.out_dir, seed=args.seed, epochs=args.epochs, width=args.width)
    h = res.history
    print(f"trained {len(h)} epochs in {res.train_seconds:.1f}s; final train loss {h[-1].train_loss:.4f}")
    print("first 10 epoch losses:", " ".join(f"{m.train_loss:.2f}" for m in h[:10]))
    for mode in DECODE_MODES:
        print(f"{mode:<13} WER {100 * res.wer[mode]:6.2f}%  ({res.hyps[mode]})")
    if args.sweep:
        path = perplexity_wer_sweep(res)
        print(f"(perplexity, WER) rows: {path}")
        print(path.read_text(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
