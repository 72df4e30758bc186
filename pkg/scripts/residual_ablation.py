"""Train the mini model on the tone corpus with each residual topology and compare.

Every run uses the same corpus, seed, optimizer and epoch budget; only
``[model] topology`` changes.  Prints epochs-to-zero-WER and final loss.

Usage: python3 scripts/residual_ablation.py [OUT_DIR] [--epochs 60]
"""

import argparse
import sys
import time
from pathlib import Path

from jasper.pipeline import prepare_overfit
from jasper.runconfig import load_run_config, with_overrides
from jasper.train import train

TOPOLOGIES = ("none", "residual", "dense_residual", "densenet", "densernet")


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out_dir", nargs="?", default="runs/ablation")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topologies", default=",".join(TOPOLOGIES))
    args = p.parse_args(argv)
    out = Path(args.out_dir)
    base = load_run_config(prepare_overfit(out, seed=args.seed, epochs=args.epochs))
    print(f"{'topology':<15} {'epochs':>6} {'zero WER at':>11} {'final loss':>10} {'best WER':>8} {'seconds':>7}")
    for topo in args.topologies.split(","):
        cfg = with_overrides(base, model={"topology": topo}, train={"checkpoint_dir": str(out / f"ckpt_{topo}")})
        start = time.perf_counter()
        history = train(cfg)
        zero = next((m.epoch for m in history if m.dev_wer == 0.0), None)
        print(f"{topo:<15} {len(history):>6} {str(zero or '-'):>11} {history[-1].train_loss:>10.3f} "
              f"{min(m.dev_wer for m in history):>8.3f} {time.perf_counter() - start:>7.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
