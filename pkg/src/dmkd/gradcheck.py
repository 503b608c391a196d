"""Central finite-difference checks for every differentiable op and the full
distillation loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .blocks import LevelBlocks
from .distill import DistillConfig, LevelPair, dmkd_loss
from .tensor import Tensor

STEP = 1e-5
OP_TOL = 1e-6
END_TO_END_TOL = 1e-5


def numeric_grad(f: Callable[[], float], t: Tensor, h: float = STEP) -> np.ndarray:
    """Central differences of the scalar ``f`` with respect to every entry of ``t``."""
    out = np.zeros_like(t.data)
    flat, gflat = t.data.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the largest gradient magnitude of either estimate."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    diff = np.abs(analytic - numeric).max(initial=0.0)
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)


def check(build: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = STEP) -> float:
    """Worst relative error over ``inputs`` for the scalar produced by ``build``."""
    for t in inputs:
        t.grad = None
    T.backward(build())
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_grad(lambda: build().item(), t, h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _leaf(rng, *shape, away_from_zero: float = 0.0) -> Tensor:
    data = rng.normal(size=shape)
    if away_from_zero:
        data = np.sign(data) * (np.abs(data) + away_from_zero)
    return Tensor(data, requires_grad=True)


def _project(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalarize a tensor output with fixed random weights so every entry matters."""
    return T.sum(T.mul(out, Tensor(weights))).reshape(())


def _unary(rng, fn, shape=(2, 3, 4), away=0.0):
    x = _leaf(rng, *shape, away_from_zero=away)
    r = rng.normal(size=shape)
    return lambda: _project(fn(x), r), [x]


def _binary(rng, fn, shape_a, shape_b):
    a, b = _leaf(rng, *shape_a), _leaf(rng, *shape_b)
    r = rng.normal(size=np.broadcast_shapes(shape_a, shape_b))
    return lambda: _project(fn(a, b), r), [a, b]


def _case_matmul(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    r = rng.normal(size=(3, 2))
    return lambda: _project(T.matmul(a, b), r), [a, b]


def _case_conv2d(rng):
    x, w, b = _leaf(rng, 2, 4, 4), _leaf(rng, 3, 2, 3, 3), _leaf(rng, 3)
    r = rng.normal(size=(3, 4, 4))
    return lambda: _project(T.conv2d(x, w, b), r), [x, w, b]


def _case_conv2d_batched(rng):
    x, w, b = _leaf(rng, 2, 2, 3, 3), _leaf(rng, 2, 2, 3, 3), _leaf(rng, 2)
    r = rng.normal(size=(2, 2, 3, 3))
    return lambda: _project(T.conv2d(x, w, b), r), [x, w, b]


def _case_layer_norm(rng):
    x, g, b = _leaf(rng, 3, 8), _leaf(rng, 8), _leaf(rng, 8)
    r = rng.normal(size=(3, 8))
    return lambda: _project(T.layer_norm(x, g, b), r), [x, g, b]


def _case_cross_entropy(rng):
    logits = _leaf(rng, 5, 3)
    labels = rng.integers(0, 3, size=5)
    return lambda: T.cross_entropy(logits, labels).reshape(()), [logits]


def _reduce_case(op):
    def case(rng):
        x = _leaf(rng, 3, 2, 4)
        r = rng.normal(size=(3, 1, 4))
        return lambda: _project(T.reduce(op, x, axes=(1,)), r), [x]
    return case


def _case_reshape_transpose(rng):
    x = _leaf(rng, 2, 3, 4)
    r = rng.normal(size=(4, 6))
    return lambda: _project(T.reshape(T.transpose(x, (2, 0, 1)), (4, 6)), r), [x]


def dmkd_instance(rng: np.random.Generator, c_student: int = 2, c_teacher: int = 4, h: int = 4, w: int = 4,
                  cfg: DistillConfig | None = None):
    """A small generic instance: (student feature leaf, teacher feature, blocks, cfg).

    The teacher is scaled so that both masks are mixed for typical draws. Four
    teacher channels keep the MLP block's layer norm well conditioned; over two
    channels it is nearly a sign function and central differences lose accuracy.
    """
    cfg = cfg or DistillConfig()
    student = Tensor(rng.normal(size=(c_student, h, w)), requires_grad=True)
    teacher = Tensor(0.5 * rng.normal(size=(c_teacher, h, w)))
    blocks = LevelBlocks.create(c_student, c_teacher, rng, cfg.alpha_init, cfg.beta_init)
    # non-trivial affine and bias values so their gradients are exercised
    for p in (blocks.align.bias, blocks.conv.b1, blocks.conv.b2, blocks.mlp.bias1, blocks.mlp.bias2,
              blocks.mlp.ln_bias):
        p.data = 0.1 * rng.normal(size=p.shape)
    blocks.mlp.ln_gain.data = 1.0 + 0.1 * rng.normal(size=blocks.mlp.ln_gain.shape)
    return student, teacher, blocks, cfg


def _case_dmkd(rng):
    student, teacher, blocks, cfg = dmkd_instance(rng)
    level = LevelPair(student, teacher)
    return lambda: dmkd_loss(level, cfg, blocks), [student, *blocks.parameters()]


OP_CASES: dict[str, Callable] = {
    "add": lambda rng: _binary(rng, T.add, (2, 3), (2, 3)),
    "sub": lambda rng: _binary(rng, T.sub, (2, 3), (2, 3)),
    "mul": lambda rng: _binary(rng, T.mul, (2, 3), (2, 3)),
    "mul_broadcast": lambda rng: _binary(rng, T.mul, (2, 2, 2), (2, 1, 1)),
    "add_broadcast": lambda rng: _binary(rng, T.add, (3, 2, 2), (1, 2, 2)),
    "matmul": _case_matmul,
    "conv2d": _case_conv2d,
    "conv2d_batched": _case_conv2d_batched,
    "sigmoid": lambda rng: _unary(rng, T.sigmoid),
    "relu": lambda rng: _unary(rng, T.relu, away=0.05),
    "gelu": lambda rng: _unary(rng, T.gelu),
    "layer_norm": _case_layer_norm,
    "sum": _reduce_case("sum"),
    "mean": _reduce_case("mean"),
    "reshape_transpose": _case_reshape_transpose,
    "cross_entropy": _case_cross_entropy,
}
END_TO_END_CASES: dict[str, Callable] = {"dmkd_loss": _case_dmkd}


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def run_gradchecks(seed: int = 0) -> list[CheckResult]:
    results = []
    for i, (name, case) in enumerate(OP_CASES.items()):
        build, inputs = case(np.random.default_rng([seed, i]))
        results.append(CheckResult(name, check(build, inputs), OP_TOL))
    for i, (name, case) in enumerate(END_TO_END_CASES.items()):
        build, inputs = case(np.random.default_rng([seed, 1000 + i]))
        results.append(CheckResult(name, check(build, inputs), END_TO_END_TOL))
    return results


def format_report(results: Sequence[CheckResult]) -> str:
    lines = [f"{'op':<20} {'max rel err':>12}  {'tol':>7}  status"]
    for r in results:
        lines.append(f"{r.name:<20} {r.max_rel_error:>12.3e}  {r.tolerance:>7.0e}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
