"""Threshold sweep for the Dual variant: tau_s in {0.45, 0.55, 0.65} at tau_c=0.65,
tau_c in {0.55, 0.65, 0.75} at tau_s=0.55.

    python scripts/table3_sweep.py --teacher teacher.json --out table3.csv
"""

import argparse

from dmkd.checkpoint import load_checkpoint
from dmkd.data import generate_dataset
from dmkd.experiments import ablate, table3_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--teacher", required=True)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="table3.csv")
    args = ap.parse_args()

    seeds = [int(s) for s in args.seeds.split(",")]
    _, summary = ablate(load_checkpoint(args.teacher), generate_dataset(args.data_seed), table3_grid(), seeds,
                        workers=args.workers, out_path=args.out)
    for s in summary:
        print(f"tau_s={s.tau_s:.2f} tau_c={s.tau_c:.2f}  acc {s.final_accuracy_mean:.4f} +/- "
              f"{s.final_accuracy_std:.4f}  mask s={s.mean_mask_ratio_s_mean:.3f} c={s.mean_mask_ratio_c_mean:.3f}")


if __name__ == "__main__":
    main()
