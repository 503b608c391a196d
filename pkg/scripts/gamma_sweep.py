"""Distillation weight sweep for one variant, to see how gamma trades off against
student stability.

    python scripts/gamma_sweep.py --teacher teacher.json --variant dual --gammas 5e-6,1e-6,2e-7
"""

import argparse

import numpy as np

from dmkd.checkpoint import load_checkpoint
from dmkd.data import generate_dataset
from dmkd.distill import DistillConfig
from dmkd.experiments import distill_run


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--teacher", required=True)
    ap.add_argument("--variant", default="dual")
    ap.add_argument("--gammas", default="5e-6,1e-6,2e-7")
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--seeds", default="0,1,2,3,4")
    args = ap.parse_args()

    teacher = load_checkpoint(args.teacher)
    ds = generate_dataset(args.data_seed)
    for gamma in (float(g) for g in args.gammas.split(",")):
        accs = [distill_run(teacher, ds, DistillConfig(variant=args.variant, gamma=gamma, seed=int(s)))[0]
                .final_test_accuracy for s in args.seeds.split(",")]
        print(f"gamma={gamma:g}: {np.mean(accs):.4f} +/- {np.std(accs, ddof=1):.4f}  {[round(a, 4) for a in accs]}")


if __name__ == "__main__":
    main()
