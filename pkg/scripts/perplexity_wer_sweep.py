"""Emit (perplexity, WER) rows for LMs of varying quality.

Reuses a finished overfit run directory (see overfit_experiment.py), trains an
under-trained acoustic snapshot, and decodes the training set once per LM.

Usage: python3 scripts/perplexity_wer_sweep.py RUN_DIR [--snapshot-epochs 18]
"""

import argparse
import sys
from pathlib import Path

from jasper.pipeline import OverfitResult, perplexity_wer_sweep
from jasper.train import read_metrics


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("run_dir", help="directory written by overfit_experiment.py")
    p.add_argument("--snapshot-epochs", type=int, default=18)
    args = p.parse_args(argv)
    run = Path(args.run_dir)
    if not (run / "run.ini").exists():
        p.error(f"{run} has no run.ini; run overfit_experiment.py first")
    result = OverfitResult(run, run / "run.ini", read_metrics(run / "ckpt" / "metrics.csv"), 0.0)
    path = perplexity_wer_sweep(result, snapshot_epochs=args.snapshot_epochs)
    print(path.read_text(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
