#!/usr/bin/env python3
"""Compare generation-order losses on the toy translation task.

Trains the same architecture with the left-to-right loss and with the
uniform loss, then reports greedy accuracy for both and parallel-decoding
accuracy for the uniform model (parallel decoding needs slot
finalization).
"""

import argparse
import sys

from insgen.cli import main as cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-root", default="runs")
    ap.add_argument("--steps", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    common = [
        "--set", "task.kind=toy_translation",
        "--set", f"train.steps={args.steps}",
        "--set", f"train.seed={args.seed}",
    ]
    runs = {
        "l2r": ["--set", "loss.order=left_to_right", "--set", "loss.termination=sequence"],
        "uniform": ["--set", "loss.order=uniform", "--set", "loss.termination=slot"],
    }
    for name, extra in runs.items():
        run_dir = f"{args.out_root}/toy-{name}"
        rc = cli(["train", "--run-dir", run_dir] + common + extra)
        if rc != 0:
            return rc
        ckpt = f"{run_dir}/ckpt-{args.steps}.insr"
        print(f"== {name}: greedy ==")
        rc = cli(["eval", "--checkpoint", ckpt, "--mode", "greedy"])
        if rc != 0:
            return rc
        if name == "uniform":
            print(f"== {name}: parallel ==")
            rc = cli(["eval", "--checkpoint", ckpt, "--mode", "parallel",
                      "--out-dir", f"{run_dir}/eval-parallel"])
            if rc != 0:
                return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
