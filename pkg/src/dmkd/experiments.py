"""Teacher training, distillation runs and the ablation grid."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .blocks import LevelBlocks
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import SyntheticDataset
from .distill import DistillConfig, StepStats, Variant, active_parameters, distill_step, supervised_step
from .errors import CheckpointInvalid
from .models import ToyModel, student_model, teacher_model
from .optim import SGD
from .tensor import Tensor, cross_entropy, no_grad

log = logging.getLogger(__name__)

EPOCHS = 20
LR = 0.05
MOMENTUM = 0.9
BATCH_SIZE = 32


def run_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators per concern, so skipping one stream never shifts another."""
    return {
        name: np.random.default_rng([seed, i])
        for i, name in enumerate(("model", "blocks", "shuffle", "mask"))
    }


def evaluate(model: ToyModel, images: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """(mean cross-entropy, accuracy) on a labelled set."""
    logits = model.predict(images)
    with no_grad():
        loss = cross_entropy(Tensor(logits), labels).item()
    return loss, float(np.mean(np.argmax(logits, axis=1) == labels))


def _batches(rng: np.random.Generator, n: int, batch_size: int) -> Iterable[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


@dataclass
class TeacherResult:
    model: ToyModel
    test_accuracy: float
    history: list[dict]


def train_teacher(dataset: SyntheticDataset, epochs: int = EPOCHS, lr: float = LR, seed: int = 0,
                  momentum: float = MOMENTUM, batch_size: int = BATCH_SIZE,
                  out_path: str | Path | None = None) -> TeacherResult:
    streams = run_streams(seed)
    model = teacher_model(streams["model"])
    opt = SGD(model.parameters(), lr, momentum)
    history = []
    for epoch in range(epochs):
        stats = [
            supervised_step(Tensor(dataset.train_images[idx]), dataset.train_labels[idx], model, opt)
            for idx in _batches(streams["shuffle"], len(dataset.train_labels), batch_size)
        ]
        test_loss, test_acc = evaluate(model, dataset.test_images, dataset.test_labels)
        history.append({
            "epoch": epoch + 1,
            "train_task_loss": float(np.mean([s.task_loss for s in stats])),
            "train_accuracy": float(np.mean([s.accuracy for s in stats])),
            "test_task_loss": test_loss,
            "test_accuracy": test_acc,
        })
        log.info("teacher epoch %d: test acc %.4f", epoch + 1, test_acc)
    _, test_acc = evaluate(model, dataset.test_images, dataset.test_labels)
    model.freeze()
    if out_path is not None:
        meta = {"seed": seed, "epochs": epochs, "lr": lr, "momentum": momentum,
                "batch_size": batch_size, "data_seed": dataset.seed, "test_accuracy": test_acc}
        save_checkpoint(Checkpoint("teacher", model, meta=meta), out_path)
    return TeacherResult(model, test_acc, history)


@dataclass
class EpochRecord:
    epoch: int
    train_task_loss: float
    train_accuracy: float
    test_task_loss: float
    test_accuracy: float
    distill_loss: float
    mask_ratio_s: float
    mask_ratio_c: float


@dataclass
class RunReport:
    config: dict
    epochs: list[EpochRecord] = field(default_factory=list)
    final_test_accuracy: float = 0.0
    seed: int = 0
    wall_clock_seconds: float = 0.0

    def to_dict(self, include_wall_clock: bool = True) -> dict:
        d = asdict(self)
        if not include_wall_clock:
            d.pop("wall_clock_seconds")
        return d

    def to_json(self, include_wall_clock: bool = True) -> str:
        return json.dumps(self.to_dict(include_wall_clock), indent=2) + "\n"

    @property
    def mean_mask_ratio_s(self) -> float:
        return float(np.mean([e.mask_ratio_s for e in self.epochs])) if self.epochs else 0.0

    @property
    def mean_mask_ratio_c(self) -> float:
        return float(np.mean([e.mask_ratio_c for e in self.epochs])) if self.epochs else 0.0


def _teacher_from(teacher: ToyModel | Checkpoint | str | Path) -> ToyModel:
    if isinstance(teacher, ToyModel):
        return teacher
    ckpt = teacher if isinstance(teacher, Checkpoint) else load_checkpoint(teacher)
    if ckpt.kind != "teacher":
        raise CheckpointInvalid(f"expected a teacher checkpoint, got {ckpt.kind!r}")
    return ckpt.model


def teacher_feature_cache(teacher: ToyModel, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Feature tap of the frozen teacher for every image."""
    chunks = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            _, feats = teacher(Tensor(images[start : start + batch_size]))
            chunks.append(feats[0].data)
    return np.concatenate(chunks, axis=0)


def distill_run(teacher: ToyModel | Checkpoint | str | Path, dataset: SyntheticDataset, cfg: DistillConfig,
                epochs: int = EPOCHS, lr: float = LR, momentum: float = MOMENTUM,
                batch_size: int = BATCH_SIZE) -> tuple[RunReport, Checkpoint]:
    """Train a fresh student (plus distillation blocks) against a frozen teacher."""
    started = time.perf_counter()
    teacher = _teacher_from(teacher)
    streams = run_streams(cfg.seed)
    student = student_model(streams["model"])
    blocks = [LevelBlocks.create(student.width, teacher.width, streams["blocks"], cfg.alpha_init, cfg.beta_init)]

    params = student.parameters()
    if cfg.gamma > 0:
        params = params + [p for b in blocks for p in active_parameters(b, cfg.variant)]
    opt = SGD(params, lr, momentum)
    cached = teacher_feature_cache(teacher, dataset.train_images) if cfg.gamma > 0 else None

    report = RunReport(
        config={**cfg.to_dict(), "epochs": epochs, "lr": lr, "momentum": momentum, "batch_size": batch_size},
        seed=cfg.seed,
    )
    for epoch in range(epochs):
        stats: list[StepStats] = []
        for idx in _batches(streams["shuffle"], len(dataset.train_labels), batch_size):
            feats = None if cached is None else [Tensor(cached[idx])]
            stats.append(distill_step(Tensor(dataset.train_images[idx]), dataset.train_labels[idx], teacher,
                                      student, cfg, blocks, opt, streams["mask"], teacher_features=feats))
        test_loss, test_acc = evaluate(student, dataset.test_images, dataset.test_labels)
        report.epochs.append(EpochRecord(
            epoch=epoch + 1,
            train_task_loss=float(np.mean([s.task_loss for s in stats])),
            train_accuracy=float(np.mean([s.accuracy for s in stats])),
            test_task_loss=test_loss,
            test_accuracy=test_acc,
            distill_loss=float(np.mean([s.distill_loss for s in stats])),
            mask_ratio_s=float(np.mean([s.mask_ratio_s for s in stats])),
            mask_ratio_c=float(np.mean([s.mask_ratio_c for s in stats])),
        ))
        log.info("%s seed %d epoch %d: test acc %.4f", cfg.variant.value, cfg.seed, epoch + 1, test_acc)
    report.final_test_accuracy = evaluate(student, dataset.test_images, dataset.test_labels)[1]
    report.wall_clock_seconds = time.perf_counter() - started
    ckpt = Checkpoint("student", student, blocks, meta={"config": report.config})
    return report, ckpt


# ablation grid

CSV_COLUMNS = ("variant", "tau_s", "tau_c", "seed", "final_accuracy", "mean_mask_ratio_s", "mean_mask_ratio_c")
SUMMARY_COLUMNS = ("variant", "tau_s", "tau_c", "n_seeds", "final_accuracy_mean", "final_accuracy_std",
                   "mean_mask_ratio_s_mean", "mean_mask_ratio_c_mean")

TABLE2_VARIANTS = (Variant.DUAL, Variant.SPATIAL_ONLY, Variant.CHANNEL_ONLY, Variant.NO_MASK)
# tau_s sweep at tau_c = 0.65, then tau_c sweep at tau_s = 0.55
TABLE3_CELLS = ((0.55, 0.65), (0.45, 0.65), (0.65, 0.65), (0.55, 0.65), (0.55, 0.55), (0.55, 0.75))


@dataclass(frozen=True)
class Cell:
    variant: Variant
    tau_s: float
    tau_c: float


def build_grid(variants: Sequence[Variant | str], tau_s: Sequence[float], tau_c: Sequence[float]) -> list[Cell]:
    return [Cell(Variant.parse(v), s, c) for v in variants for s in tau_s for c in tau_c]


def table2_grid(tau_s: float = 0.55, tau_c: float = 0.65) -> list[Cell]:
    return [Cell(v, tau_s, tau_c) for v in TABLE2_VARIANTS]


def table3_grid() -> list[Cell]:
    return [Cell(Variant.DUAL, s, c) for s, c in TABLE3_CELLS]


@dataclass
class AblationRow:
    variant: str
    tau_s: float
    tau_c: float
    seed: int
    final_accuracy: float
    mean_mask_ratio_s: float
    mean_mask_ratio_c: float


@dataclass
class AblationSummary:
    variant: str
    tau_s: float
    tau_c: float
    n_seeds: int
    final_accuracy_mean: float
    final_accuracy_std: float
    mean_mask_ratio_s_mean: float
    mean_mask_ratio_c_mean: float


def _run_cell(args) -> AblationRow:
    teacher, dataset, cfg, epochs, lr = args
    report, _ = distill_run(teacher, dataset, cfg, epochs=epochs, lr=lr)
    return AblationRow(cfg.variant.value, cfg.tau_s, cfg.tau_c, cfg.seed, report.final_test_accuracy,
                       report.mean_mask_ratio_s, report.mean_mask_ratio_c)


def summarize(rows: Sequence[AblationRow]) -> list[AblationSummary]:
    """Mean and sample std over seeds, one entry per distinct cell in first-seen order."""
    groups: dict[tuple, list[AblationRow]] = {}
    for r in rows:
        groups.setdefault((r.variant, r.tau_s, r.tau_c), []).append(r)
    out = []
    for (variant, ts, tc), members in groups.items():
        acc = np.array([m.final_accuracy for m in members])
        out.append(AblationSummary(
            variant, ts, tc, len(members),
            float(acc.mean()),
            float(acc.std(ddof=1)) if len(acc) > 1 else 0.0,
            float(np.mean([m.mean_mask_ratio_s for m in members])),
            float(np.mean([m.mean_mask_ratio_c for m in members])),
        ))
    return out


def ablate(teacher: ToyModel | Checkpoint | str | Path, dataset: SyntheticDataset, grid: Sequence[Cell],
           seeds: Sequence[int], base: DistillConfig | None = None, epochs: int = EPOCHS, lr: float = LR,
           workers: int = 1, out_path: str | Path | None = None) -> tuple[list[AblationRow], list[AblationSummary]]:
    """Run every (cell, seed) pair; rows come back in grid order whatever the completion order."""
    if not grid or not seeds:
        raise ValueError("ablation needs at least one cell and one seed")
    teacher = _teacher_from(teacher)
    base = base or DistillConfig()
    jobs = []
    for cell in grid:
        for seed in seeds:
            cfg = DistillConfig(**{**base.to_dict(), "variant": cell.variant, "tau_s": cell.tau_s,
                                   "tau_c": cell.tau_c, "seed": seed})
            jobs.append(cfg)

    # identical cells (table 3 repeats the default) are deterministic, so run each once
    unique: dict[str, DistillConfig] = {}
    for cfg in jobs:
        unique.setdefault(repr(cfg.to_dict()), cfg)
    payload = [(teacher, dataset, cfg, epochs, lr) for cfg in unique.values()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, payload))
    else:
        results = [_run_cell(p) for p in payload]
    by_key = dict(zip(unique, results))
    rows = [by_key[repr(cfg.to_dict())] for cfg in jobs]
    summary = summarize(rows)
    if out_path is not None:
        Path(out_path).write_text(format_ablation_csv(rows, summary), encoding="utf-8")
    return rows, summary


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def format_ablation_csv(rows: Sequence[AblationRow], summary: Sequence[AblationSummary]) -> str:
    """Per-seed rows, a blank line, then the per-cell mean/std block."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    buf.write("\n")
    writer.writerow(SUMMARY_COLUMNS)
    for s in summary:
        writer.writerow([_fmt(getattr(s, c)) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def read_ablation_csv(path: str | Path) -> tuple[list[AblationRow], list[AblationSummary]]:
    text = Path(path).read_text(encoding="utf-8")
    head, _, tail = text.partition("\n\n")
    rows = [
        AblationRow(d["variant"], float(d["tau_s"]), float(d["tau_c"]), int(d["seed"]), float(d["final_accuracy"]),
                    float(d["mean_mask_ratio_s"]), float(d["mean_mask_ratio_c"]))
        for d in csv.DictReader(io.StringIO(head))
    ]
    summary = [
        AblationSummary(d["variant"], float(d["tau_s"]), float(d["tau_c"]), int(d["n_seeds"]),
                        float(d["final_accuracy_mean"]), float(d["final_accuracy_std"]),
                        float(d["mean_mask_ratio_s_mean"]), float(d["mean_mask_ratio_c_mean"]))
        for d in csv.DictReader(io.StringIO(tail))
    ]
    return rows, summary
