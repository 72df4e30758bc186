"""Write the synthetic tone corpus: wavs, a JSON-lines manifest and LM text.

Usage: python3 scripts/make_synthetic_corpus.py OUT_DIR [--utts 20] [--seed 0] [--noise 0.003]
"""

import argparse
import sys

from jasper.data import make_tone_corpus


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out_dir")
    p.add_argument("--utts", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lm-sentences", type=int, default=400)
    p.add_argument("--noise", type=float, default=0.003, help="white-noise std (tone amplitude is 0.3)")
    args = p.parse_args(argv)
    paths = make_tone_corpus(args.out_dir, args.utts, args.seed, args.lm_sentences, args.noise)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
