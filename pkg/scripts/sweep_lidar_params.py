#!/usr/bin/env python3
"""Grid over voxel size and local/global weights; prints track-velocity RMSE and corrected crispness.

Used to check that the defaults are a sensible operating point; the pipeline
defaults are not changed by this script.

    python scripts/sweep_lidar_params.py --seeds 0 1 2
"""
import argparse
import itertools

import numpy as np

from deskewfuse.config import PipelineConfig
from deskewfuse.pipeline import run_pipeline
from deskewfuse.scenarios import BUILTIN, generate_dataset
from deskewfuse.scoring import evaluate, outputs_from_result


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scenarios", nargs="+", default=["radial", "tangential", "turning"], choices=sorted(BUILTIN))
    ap.add_argument("--seeds", nargs="+", type=int, default=[0])
    ap.add_argument("--voxel-sizes", nargs="+", type=float, default=[0.25, 0.5, 1.0, 2.0])
    ap.add_argument("--local-weights", nargs="+", type=float, default=[0.25, 1.0, 4.0])
    args = ap.parse_args()

    datasets = {(n, s): generate_dataset(BUILTIN[n](), s) for n in args.scenarios for s in args.seeds}
    print(f"{'voxel':>6} {'w_local':>8} " + " ".join(f"{n + ' rmse':>16} {n + ' crisp':>16}" for n in args.scenarios))
    for voxel, w in itertools.product(args.voxel_sizes, args.local_weights):
        cfg = PipelineConfig(voxel_size=voxel, weight_local=w)
        cells = []
        for n in args.scenarios:
            rmse, crisp = [], []
            for s in args.seeds:
                ds = datasets[(n, s)]
                cfg.seed = s
                m = evaluate(ds, outputs_from_result(run_pipeline(ds, cfg), cfg))
                for e in m["objects"].values():
                    rmse.append(e["track_velocity"]["rmse"])
                    crisp.append(e["crispness_corrected"])
            cells.append(f"{np.mean(rmse):16.3f} {np.mean(crisp):16.3f}")
        print(f"{voxel:6.2f} {w:8.2f} " + " ".join(cells))


if __name__ == "__main__":
    main()
