"""JSON checkpoints: a header plus every parameter as a flat list of floats.

Floats are written with Python's shortest round-trip repr, so
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blocks import LevelBlocks
from .errors import CheckpointInvalid
from .models import ToyModel
from .tensor import Tensor

SCHEMA_VERSION = 1


@dataclass
class Checkpoint:
    kind: str  # "teacher" or "student"
    model: ToyModel
    blocks: list[LevelBlocks] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def _encode_params(named: dict[str, Tensor]) -> dict:
    return {
        name: {"shape": list(t.shape), "data": [float(v) for v in t.data.ravel()]}
        for name, t in named.items()
    }


def _decode_into(named: dict[str, Tensor], stored: dict, where: str) -> None:
    if set(named) != set(stored):
        missing = sorted(set(named) - set(stored))
        extra = sorted(set(stored) - set(named))
        raise CheckpointInvalid(f"{where}: missing {missing}, unexpected {extra}")
    for name, t in named.items():
        entry = stored[name]
        try:
            shape = tuple(int(n) for n in entry["shape"])
            data = np.asarray(entry["data"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointInvalid(f"{where}.{name}: malformed entry ({exc})") from None
        if shape != t.shape:
            raise CheckpointInvalid(f"{where}.{name}: shape {shape}, model expects {t.shape}")
        if data.ndim != 1 or data.size != int(np.prod(shape)):
            raise CheckpointInvalid(f"{where}.{name}: {data.size} values for shape {shape}")
        if not np.all(np.isfinite(data)):
            raise CheckpointInvalid(f"{where}.{name}: non-finite values")
        t.data = data.reshape(shape)


def to_json(ckpt: Checkpoint) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": ckpt.kind,
        "topology": ckpt.model.topology(),
        "parameters": _encode_params(ckpt.model.named_parameters()),
        "blocks": [
            {
                "level": i,
                "c_student": b.align.c_student,
                "c_teacher": b.align.c_teacher,
                "parameters": _encode_params(b.named_parameters()),
            }
            for i, b in enumerate(ckpt.blocks)
        ],
        "meta": ckpt.meta,
    }
    return json.dumps(doc, indent=1) + "\n"


def from_json(text: str) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointInvalid(f"not JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointInvalid(f"unsupported schema_version {doc.get('schema_version') if isinstance(doc, dict) else None!r}")
    kind = doc.get("kind")
    if kind not in ("teacher", "student"):
        raise CheckpointInvalid(f"unknown checkpoint kind {kind!r}")
    try:
        topo = doc["topology"]
        model = ToyModel(int(topo["width"]), int(topo["in_channels"]), int(topo["n_classes"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointInvalid(f"bad topology: {exc}") from None
    _decode_into(model.named_parameters(), doc.get("parameters", {}), "parameters")

    blocks = []
    for entry in doc.get("blocks", []):
        try:
            lb = LevelBlocks.create(int(entry["c_student"]), int(entry["c_teacher"]), np.random.default_rng(0))
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointInvalid(f"bad block header: {exc}") from None
        _decode_into(lb.named_parameters(), entry.get("parameters", {}), f"blocks[{entry.get('level')}]")
        blocks.append(lb)
    if kind == "teacher":
        model.freeze()
    return Checkpoint(kind=kind, model=model, blocks=blocks, meta=doc.get("meta", {}))


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_text(to_json(ckpt), encoding="utf-8")


def load_checkpoint(path: str | Path) -> Checkpoint:
    return from_json(Path(path).read_text(encoding="utf-8"))
