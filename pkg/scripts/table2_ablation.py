"""Masking-strategy ablation: Dual, SpatialOnly, ChannelOnly, NoMask, FitNet, RandomMask.

    python scripts/table2_ablation.py --teacher teacher.json --out table2.csv
"""

import argparse

from dmkd.checkpoint import load_checkpoint
from dmkd.data import generate_dataset
from dmkd.distill import Variant
from dmkd.experiments import Cell, ablate

VARIANTS = [Variant.DUAL, Variant.SPATIAL_ONLY, Variant.CHANNEL_ONLY, Variant.NO_MASK,
            Variant.BASELINE_FITNET, Variant.RANDOM_MASK]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--teacher", required=True)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="table2.csv")
    args = ap.parse_args()

    grid = [Cell(v, 0.55, 0.65) for v in VARIANTS]
    seeds = [int(s) for s in args.seeds.split(",")]
    _, summary = ablate(load_checkpoint(args.teacher), generate_dataset(args.data_seed), grid, seeds,
                        workers=args.workers, out_path=args.out)
    for s in summary:
        print(f"{s.variant:<16} {s.final_accuracy_mean:.4f} +/- {s.final_accuracy_std:.4f}  "
              f"mask s={s.mean_mask_ratio_s_mean:.3f} c={s.mean_mask_ratio_c_mean:.3f}")


if __name__ == "__main__":
    main()
