"""Command-line entry point: gen-data, train-teacher, distill, ablate, gradcheck.

Exit codes: 0 success, 1 gradcheck failure, 2 usage or config error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .checkpoint import save_checkpoint
from .data import SyntheticDataset, generate_dataset
from .distill import DistillConfig, Variant
from .errors import CheckpointInvalid, DMKDError
from .gradcheck import format_report, run_gradchecks

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

# run settings that may come from --config alongside DistillConfig fields
RUN_DEFAULTS = {"epochs": ex.EPOCHS, "lr": ex.LR, "momentum": ex.MOMENTUM, "batch_size": ex.BATCH_SIZE}


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, help="dataset .npz from gen-data (default: generate from --data-seed)")
    p.add_argument("--data-seed", type=int, default=0)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with DistillConfig/run keys; flags override it")
    p.add_argument("--tau-s", type=float)
    p.add_argument("--tau-c", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--alpha-init", type=float)
    p.add_argument("--beta-init", type=float)
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--random-mask-ratio", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmkd", description="Dual masked knowledge distillation workbench")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic dataset to .npz")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=1024)
    p.add_argument("--n-test", type=int, default=256)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train-teacher", help="train the width-8 teacher and write its checkpoint")
    _add_data_args(p)
    p.add_argument("--epochs", type=int, default=ex.EPOCHS)
    p.add_argument("--lr", type=float, default=ex.LR)
    p.add_argument("--momentum", type=float, default=ex.MOMENTUM)
    p.add_argument("--batch-size", type=int, default=ex.BATCH_SIZE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("distill", help="train a student against a teacher checkpoint")
    p.add_argument("--teacher", type=Path, required=True)
    _add_data_args(p)
    _add_config_args(p)
    p.add_argument("--report", type=Path, required=True, help="RunReport JSON output")
    p.add_argument("--checkpoint", type=Path, help="student + blocks checkpoint output")

    p = sub.add_parser("ablate", help="run a variant/threshold grid over seeds and write a CSV")
    p.add_argument("--teacher", type=Path, required=True)
    _add_data_args(p)
    _add_config_args(p)
    p.add_argument("--grid", choices=("table2", "table3", "custom"), default="custom")
    p.add_argument("--variants", default="dual", help="comma list, custom grid only")
    p.add_argument("--tau-s-list", type=_floats, help="comma list, custom grid only")
    p.add_argument("--tau-c-list", type=_floats, help="comma list, custom grid only")
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2, 3, 4])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the full loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=_ints, help="comma list; overrides --seed")
    return parser


def resolve_config(args: argparse.Namespace) -> tuple[DistillConfig, dict]:
    """Merge defaults < --config file < explicit flags."""
    values: dict = {}
    if args.config is not None:
        try:
            loaded = json.loads(args.config.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
        values.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for key in (*DistillConfig.__dataclass_fields__, *RUN_DEFAULTS):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    run = {k: values.pop(k, default) for k, default in RUN_DEFAULTS.items()}
    try:
        cfg = DistillConfig.from_dict(values)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    return cfg, run


def _dataset(args) -> SyntheticDataset:
    if args.data is not None:
        return SyntheticDataset.load(args.data)
    return generate_dataset(args.data_seed)


def cmd_gen_data(args) -> int:
    ds = generate_dataset(args.seed, args.n_train, args.n_test)
    ds.save(args.out)
    print(f"wrote {args.out}: {len(ds.train_labels)} train / {len(ds.test_labels)} test")
    return EXIT_OK


def cmd_train_teacher(args) -> int:
    result = ex.train_teacher(_dataset(args), epochs=args.epochs, lr=args.lr, seed=args.seed,
                              momentum=args.momentum, batch_size=args.batch_size, out_path=args.out)
    print(f"teacher test accuracy {result.test_accuracy:.4f}; wrote {args.out}")
    return EXIT_OK


def cmd_distill(args) -> int:
    cfg, run = resolve_config(args)
    report, ckpt = ex.distill_run(args.teacher, _dataset(args), cfg, **run)
    args.report.write_text(report.to_json(), encoding="utf-8")
    if args.checkpoint is not None:
        save_checkpoint(ckpt, args.checkpoint)
    print(f"{cfg.variant.value} seed {cfg.seed}: final test accuracy {report.final_test_accuracy:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg, run = resolve_config(args)
    if args.grid == "table2":
        grid = ex.table2_grid(cfg.tau_s, cfg.tau_c)
    elif args.grid == "table3":
        grid = ex.table3_grid()
    else:
        try:
            variants = [Variant.parse(v) for v in args.variants.split(",") if v.strip()]
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        grid = ex.build_grid(variants, args.tau_s_list or [cfg.tau_s], args.tau_c_list or [cfg.tau_c])
    if not grid or not args.seeds:
        raise UsageError("empty ablation grid")
    rows, summary = ex.ablate(args.teacher, _dataset(args), grid, args.seeds, base=cfg,
                              epochs=run["epochs"], lr=run["lr"], workers=args.workers, out_path=args.out)
    for s in summary:
        print(f"{s.variant:<16} tau_s={s.tau_s:<5} tau_c={s.tau_c:<5} "
              f"acc {s.final_accuracy_mean:.4f} +/- {s.final_accuracy_std:.4f} (n={s.n_seeds})")
    print(f"wrote {args.out} ({len(rows)} rows)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seeds = args.seeds if args.seeds else [args.seed]
    ok = True
    for seed in seeds:
        results = run_gradchecks(seed)
        print(f"seed {seed}")
        print(format_report(results))
        ok = ok and all(r.passed for r in results)
    print("gradcheck", "passed" if ok else "FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, CheckpointInvalid) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DMKDError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
