"""Run every ablation axis through the CLI, structure-only by default or with a per-variant step budget."""
import argparse
import sys
from pathlib import Path

from sci_unfold.cli import run_command
from sci_unfold.evaluation import ABLATION_AXES


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--budget", type=int, default=0)
    ap.add_argument("--config", help="config whose network section is the base variant")
    ap.add_argument("--corpus", default="data/synthetic/corpus")
    ap.add_argument("--bench", default="data/synthetic/bench")
    ap.add_argument("--out", default="results/ablations")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    Path(args.out).mkdir(parents=True, exist_ok=True)
    status = 0
    for axis in ABLATION_AXES:
        argv = ["ablate", "--axis", axis, "--budget", str(args.budget), "--seed", str(args.seed),
                "--out", str(Path(args.out) / f"{axis}.txt")]
        if args.config:
            argv += ["--config", args.config]
        if args.budget > 0:
            argv += ["--corpus", args.corpus, "--bench", args.bench]
        status = max(status, run_command(argv))
    sys.exit(status)


if __name__ == "__main__":
    main()
