#!/usr/bin/env python3
"""Train the binary-tree model on the copy task and measure parallel decoding.

Reproduces the iteration-count-versus-length experiment at desk scale:
the trained model should decode length-n outputs in about floor(log2 n) + 1
parallel iterations. Writes a run directory with the checkpoint, metrics
log, eval report, and the iteration table for plotting.
"""

import argparse
import sys

from insgen.cli import main as cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--run-dir", default="runs/copy-btree")
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--tau", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rc = cli([
        "train", "--run-dir", args.run_dir,
        "--set", "task.kind=copy",
        "--set", "loss.order=binary_tree",
        "--set", f"loss.temperature={args.tau}",
        "--set", "loss.termination=slot",
        "--set", f"train.steps={args.steps}",
        "--set", f"train.seed={args.seed}",
    ])
    if rc != 0:
        return rc
    return cli([
        "eval",
        "--checkpoint", f"{args.run_dir}/ckpt-{args.steps}.insr",
        "--mode", "parallel",
    ])


if __name__ == "__main__":
    sys.exit(main())
