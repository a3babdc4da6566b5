#!/usr/bin/env python3
"""Simulate every built-in scenario, run both velocity modes, score them and build one report.

    python scripts/run_all_scenarios.py results/ --seed 0

Produces results/<scenario>/{dataset,fused,lidar_only}/ and results/report.{txt,csv}.
"""
import argparse
import sys
from pathlib import Path

from deskewfuse.cli import main as cli
from deskewfuse.scenarios import BUILTIN

MODES = ("fused", "lidar_only")


def run(argv) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scenarios", nargs="+", default=sorted(BUILTIN), choices=sorted(BUILTIN))
    ap.add_argument("--noiseless", action="store_true")
    args = ap.parse_args(argv)

    metrics, labels = [], []
    for name in args.scenarios:
        root = args.out / name
        sim = ["simulate", name, str(root / "dataset"), "--seed", str(args.seed), "--quiet"]
        if args.noiseless:
            sim.append("--noiseless")
        steps = [sim]
        for mode in MODES:
            steps.append(["run", str(root / "dataset"), str(root / mode), "--mode", mode, "--seed", str(args.seed), "--quiet"])
            steps.append(["eval", str(root / "dataset"), str(root / mode), "--quiet"])
            metrics.append(str(root / mode / "metrics.json"))
            labels.append(f"{name}:{mode}")
        for step in steps:
            rc = cli(step)
            if rc:
                print(f"step failed ({rc}): deskewfuse {' '.join(step)}", file=sys.stderr)
                return rc
        print(f"{name}: done", file=sys.stderr)
    return cli(["report", *metrics, "--labels", *labels, "--out", str(args.out)])


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
