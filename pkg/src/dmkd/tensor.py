"""Dense float64 tensors with tape-based reverse-mode autodiff.

Every operation materializes a fresh array (no views are shared between
tensors). Each result produced while gradient recording is enabled keeps
links to its parents plus a closure that maps the output gradient to one
gradient per parent. ``backward`` replays those closures in reverse
topological order.
"""

from __future__ import annotations

import contextlib
import os
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import BadAxis, NotScalar, ShapeMismatch

CHECK_FINITE = os.environ.get("DMKD_CHECK_FINITE", "") not in ("", "0")

_grad_enabled = True

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._retain = False

    # construction helpers
    @classmethod
    def zeros(cls, *shape: int, requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(shape), requires_grad=requires_grad)

    @classmethod
    def ones(cls, *shape: int, requires_grad: bool = False) -> "Tensor":
        return cls(np.ones(shape), requires_grad=requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def retain_grad(self) -> "Tensor":
        """Keep ``.grad`` on this intermediate after ``backward``."""
        self._retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axes=None) -> "Tensor":
        return sum(self, axes)

    def mean(self, axes=None) -> "Tensor":
        return mean(self, axes)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes)

    def relu(self) -> "Tensor":
        return relu(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def gelu(self) -> "Tensor":
        return gelu(self)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(p.data)) for p in parents):
            raise FloatingPointError("non-finite output from finite inputs")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    out._retain = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` along axes that were broadcast."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from None


# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)

    def back(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)

    def back(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data

    def back(g):
        return unbroadcast(g * bd, a.shape), unbroadcast(g * ad, b.shape)

    return _result(ad * bd, (a, b), back)


def elementwise(op: str, a, b) -> Tensor:
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, (a, b), back)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1 cross-correlation with zero "same" padding.

    ``x`` is ``C_in x H x W`` or ``N x C_in x H x W``; ``w`` is
    ``C_out x C_in x k x k`` with odd ``k``; ``b`` is ``C_out``.
    """
    if x.ndim not in (3, 4) or w.ndim != 4:
        raise ShapeMismatch(f"conv2d input {x.shape}, weight {w.shape}")
    c_out, c_in, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ShapeMismatch(f"conv2d needs an odd square kernel, got {k}x{k2}")
    if x.shape[-3] != c_in:
        raise ShapeMismatch(f"conv2d channels: input has {x.shape[-3]}, weight expects {c_in}")
    if b is not None and b.shape != (c_out,):
        raise ShapeMismatch(f"conv2d bias {b.shape} for {c_out} output channels")

    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    n, _, h, wid = xd.shape
    cols = _im2col(xd, k)
    wmat = w.data.reshape(c_out, c_in * k * k)
    out = np.matmul(wmat, cols).reshape(n, c_out, h, wid)
    if b is not None:
        out += b.data[:, None, None]
    if not batched:
        out = out[0]
    need_x, need_w = x.requires_grad, w.requires_grad

    def back(g):
        g4 = g.reshape(n, c_out, h, wid)
        g3 = g4.reshape(n, c_out, h * wid)
        gx = gw = None
        if need_w:
            gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if need_x:
            # input gradient = same-padded correlation of g with the flipped, transposed kernel
            flipped = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c_in, c_out * k * k)
            gx = np.matmul(flipped, _im2col(g4, k)).reshape(x.shape)
        if b is None:
            return gx, gw
        return gx, gw, g3.sum(axis=(0, 2))

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, back)


def _im2col(xd: np.ndarray, k: int) -> np.ndarray:
    """cols[n, (c, p, q), (i, j)] = zero-padded x[n, c, i + p - pad, j + q - pad]."""
    n, c, h, wid = xd.shape
    pad = (k - 1) // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))
    return np.ascontiguousarray(windows.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * k * k, h * wid)


# activations


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def back(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), back)


def relu(x: Tensor) -> Tensor:
    xd = x.data
    pos = xd > 0

    def back(g):
        return (g * pos,)

    return _result(np.where(pos, xd, 0.0), (x,), back)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF via erf."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))

    def back(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return _result(xd * cdf, (x,), back)


def activation(op: str, x: Tensor) -> Tensor:
    try:
        fn = {"sigmoid": sigmoid, "relu": relu, "gelu": gelu}[op]
    except KeyError:
        raise ValueError(f"unknown activation {op!r}") from None
    return fn(x)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing axis, then apply a per-channel affine map."""
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeMismatch(f"layer_norm over {c} channels with gain {gain.shape}, bias {bias.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    gd = gain.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        g_gain = (g * xhat).sum(axis=lead)
        g_bias = g.sum(axis=lead)
        gxhat = g * gd
        gx = inv_std * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, g_gain, g_bias

    return _result(xhat * gd + bias.data, (x, gain, bias), back)


# reductions and shape plumbing


def _normalize_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, (int, np.integer)):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise BadAxis(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise BadAxis(f"repeated axis in {tuple(axes)}")
    return tuple(sorted(out))


def sum(x: Tensor, axes=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    """Sum over ``axes`` (all if None), keeping reduced axes as extent 1."""
    ax = _normalize_axes(axes, x.ndim)
    shape = x.shape

    def back(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _result(x.data.sum(axis=ax, keepdims=True), (x,), back)


def mean(x: Tensor, axes=None) -> Tensor:
    ax = _normalize_axes(axes, x.ndim)
    shape = x.shape
    count = int(np.prod([shape[i] for i in ax])) if ax else 1

    def back(g):
        return (np.broadcast_to(g / count, shape).copy(),)

    return _result(x.data.mean(axis=ax, keepdims=True), (x,), back)


def reduce(op: str, x: Tensor, axes=None) -> Tensor:
    if op == "sum":
        return sum(x, axes)
    if op == "mean":
        return mean(x, axes)
    raise ValueError(f"unknown reduction {op!r}")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(tuple(shape)).copy()
    except ValueError:
        raise ShapeMismatch(f"cannot reshape {src} to {tuple(shape)}") from None

    def back(g):
        return (g.reshape(src),)

    return _result(out, (x,), back)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)) or len(axes) != x.ndim:
        raise BadAxis(f"bad permutation {axes} for {x.ndim}-d tensor")
    inverse = tuple(np.argsort(axes))

    def back(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _result(np.ascontiguousarray(x.data.transpose(axes)), (x,), back)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    if logits.ndim != 2:
        raise ShapeMismatch(f"cross_entropy expects N x K logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ShapeMismatch(f"{labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    rows = np.arange(n)
    loss = -logp[rows, labels].sum() / n

    def back(g):
        probs = np.exp(logp)
        probs[rows, labels] -= 1.0
        return (probs * (g.reshape(()) / n),)

    return _result(np.array(loss), (logits,), back)


# reverse pass


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None or node._retain:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def parameters_of(*tensors: Iterable[Tensor]) -> list[Tensor]:
    """Flatten iterables of tensors into one list, dropping duplicates."""
    out: list[Tensor] = []
    seen: set[int] = set()
    for group in tensors:
        for t in group:
            if id(t) not in seen:
                seen.add(id(t))
                out.append(t)
    return out
