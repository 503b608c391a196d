"""Pilot: teacher quality and plain-student headroom on the synthetic task.

Trains the width-8 teacher with the default schedule, then plain (gamma=0)
width-4 students over several seeds, and prints both accuracies.

    python scripts/pilot_teacher.py --data-seed 0 --seeds 0,1,2,3,4
"""

import argparse

import numpy as np

from dmkd.data import generate_dataset
from dmkd.distill import DistillConfig
from dmkd.experiments import distill_run, train_teacher


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--teacher-seed", type=int, default=0)
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--out", default="teacher.json", help="teacher checkpoint path")
    args = ap.parse_args()

    ds = generate_dataset(args.data_seed)
    teacher = train_teacher(ds, seed=args.teacher_seed, out_path=args.out)
    print(f"teacher test accuracy: {teacher.test_accuracy:.4f} (checkpoint {args.out})")
    accs = []
    for seed in (int(s) for s in args.seeds.split(",")):
        report, _ = distill_run(teacher.model, ds, DistillConfig(gamma=0.0, seed=seed))
        accs.append(report.final_test_accuracy)
        print(f"plain student seed {seed}: {report.final_test_accuracy:.4f}")
    print(f"plain student mean {np.mean(accs):.4f} +/- {np.std(accs, ddof=1):.4f}")


if __name__ == "__main__":
    main()
