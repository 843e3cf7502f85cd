"""Dense float64 tensor math with reverse-mode gradients.

Implements exactly the operations the retrieval model needs: broadcasting
arithmetic, matmul over stacked matrices, reductions, the nonlinearities of
the cross-modal block, cosine similarity, mean pooling and scaled dot-product
attention, plus a finite-difference gradient checker.

All data is 64-bit, row-major. Binary ops follow numpy broadcasting; their
backward passes sum gradients down to the operand shapes. Tensors are treated
as immutable once consumed by an op; gradients accumulate into ``.grad``.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf, expit

from .errors import DimensionError, NumericError

COSINE_EPS = 1e-12
LAYER_NORM_EPS = 1e-5

_grad_enabled = True


class no_grad:
    """Context manager that skips tape construction inside its block."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return self.data.item()

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Run reverse-mode accumulation from this tensor.

        Without an explicit ``seed`` the tensor must be a scalar; the seed
        then is 1.0.
        """
        if not self.requires_grad:
            raise ValueError("backward() called on a tensor that does not require grad")
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed requires a scalar output")
            seed = np.ones_like(self.data)
        seed = np.asarray(seed, dtype=np.float64).reshape(self.data.shape)

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        self._accumulate(seed)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose_last(self):
        return transpose_last(self)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: tuple, backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# -- arithmetic ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out_data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError("matmul requires tensors with at least 2 dimensions")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape))

    return _make(out_data, (a, b), backward)


def reshape(t, shape) -> Tensor:
    t = as_tensor(t)
    shape = tuple(shape)
    out_data = t.data.reshape(shape)

    def backward(g):
        if t.requires_grad:
            t._accumulate(g.reshape(t.data.shape))

    return _make(out_data, (t,), backward)


def transpose_last(t) -> Tensor:
    """Swap the last two axes (matrix transpose over stacked matrices)."""
    t = as_tensor(t)
    if t.data.ndim < 2:
        raise DimensionError("transpose_last requires at least 2 dimensions")
    out_data = np.swapaxes(t.data, -1, -2)

    def backward(g):
        if t.requires_grad:
            t._accumulate(np.swapaxes(g, -1, -2))

    return _make(out_data, (t,), backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    """Stack tensors of identical shape along a new leading axis."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("stack requires at least one tensor")
    out_data = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        slabs = np.split(g, len(ts), axis=axis)
        for t, slab in zip(ts, slabs):
            if t.requires_grad:
                t._accumulate(np.squeeze(slab, axis=axis))

    return _make(out_data, tuple(ts), backward)


def _grad_expand(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def tensor_sum(t, axis=None, keepdims=False) -> Tensor:
    t = as_tensor(t)
    out_data = t.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if t.requires_grad:
            t._accumulate(_grad_expand(g, t.data.shape, axis, keepdims).copy())

    return _make(out_data, (t,), backward)


def tensor_mean(t, axis=None, keepdims=False) -> Tensor:
    t = as_tensor(t)
    out_data = t.data.mean(axis=axis, keepdims=keepdims)
    count = t.data.size if axis is None else np.prod(
        [t.data.shape[a % t.data.ndim] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def backward(g):
        if t.requires_grad:
            t._accumulate(_grad_expand(g, t.data.shape, axis, keepdims) / count)

    return _make(out_data, (t,), backward)


# -- nonlinearities -------------------------------------------------------


def log(t) -> Tensor:
    t = as_tensor(t)
    out_data = np.log(t.data)

    def backward(g):
        if t.requires_grad:
            t._accumulate(g / t.data)

    return _make(out_data, (t,), backward)


def sqrt(t) -> Tensor:
    t = as_tensor(t)
    out_data = np.sqrt(t.data)

    def backward(g):
        if t.requires_grad:
            t._accumulate(g * 0.5 / out_data)

    return _make(out_data, (t,), backward)


def sigmoid(t) -> Tensor:
    t = as_tensor(t)
    out_data = expit(t.data)

    def backward(g):
        if t.requires_grad:
            t._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (t,), backward)


def gelu(t) -> Tensor:
    """Gaussian error linear unit, exact erf form."""
    t = as_tensor(t)
    x = t.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    out_data = x * cdf

    def backward(g):
        if t.requires_grad:
            pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
            t._accumulate(g * (cdf + x * pdf))

    return _make(out_data, (t,), backward)


def softmax(t, axis: int = -1) -> Tensor:
    """Numerically stable softmax along one axis."""
    t = as_tensor(t)
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if t.requires_grad:
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            t._accumulate(out_data * (g - inner))

    return _make(out_data, (t,), backward)


def layer_norm(t, gain, bias, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    t = as_tensor(t)
    centered = t - t.mean(axis=-1, keepdims=True)
    variance = tensor_mean(mul(centered, centered), axis=-1, keepdims=True)
    normalized = div(centered, sqrt(add(variance, eps)))
    return add(mul(normalized, gain), bias)


# -- model-facing operations ----------------------------------------------


def cosine_similarity(u, v) -> Tensor:
    """Cosine similarity over the last axis with broadcasting leading axes.

    Computes ``u.v / (|u||v| + eps)`` with eps = 1e-12, so a zero vector
    yields similarity 0 with a finite gradient.
    """
    u, v = as_tensor(u), as_tensor(v)
    if u.data.ndim < 1 or v.data.ndim < 1:
        raise DimensionError("cosine_similarity requires at least 1-d inputs")
    if u.data.shape[-1] != v.data.shape[-1]:
        raise DimensionError(
            f"cosine_similarity length mismatch: {u.data.shape[-1]} vs {v.data.shape[-1]}"
        )
    if u.data.shape[-1] < 1:
        raise DimensionError("cosine_similarity requires vectors of length >= 1")

    ud, vd = u.data, v.data
    dot = np.sum(ud * vd, axis=-1)
    norm_u = np.sqrt(np.sum(ud * ud, axis=-1))
    norm_v = np.sqrt(np.sum(vd * vd, axis=-1))
    denom = norm_u * norm_v + COSINE_EPS
    out_data = dot / denom

    def backward(g):
        # d/du [dot/denom] = v/denom - cos * |v| * (u/|u|) / denom,
        # with the u/|u| term defined as 0 at |u| = 0.
        if u.requires_grad:
            with np.errstate(divide="ignore", invalid="ignore"):
                coef = np.where(norm_u > 0.0, out_data * norm_v / (denom * norm_u), 0.0)
            grad_full = g[..., None] * (vd / denom[..., None] - coef[..., None] * ud)
            u._accumulate(_unbroadcast(grad_full, u.data.shape))
        if v.requires_grad:
            with np.errstate(divide="ignore", invalid="ignore"):
                coef = np.where(norm_v > 0.0, out_data * norm_u / (denom * norm_v), 0.0)
            grad_full = g[..., None] * (ud / denom[..., None] - coef[..., None] * vd)
            v._accumulate(_unbroadcast(grad_full, v.data.shape))

    return _make(out_data, (u, v), backward)


def mean_pool(x) -> Tensor:
    """Pool an (h, w, d) feature map to a d-vector by averaging positions."""
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise DimensionError(f"mean_pool expects an (h, w, d) map, got shape {x.data.shape}")
    h, w, d = x.data.shape
    if h < 1 or w < 1 or d < 1:
        raise DimensionError(f"mean_pool requires all dimensions >= 1, got {x.data.shape}")
    return tensor_mean(reshape(x, (h * w, d)), axis=0)


def scaled_dot_attention(q, k, v) -> Tensor:
    """softmax(Q Kᵀ / sqrt(d)) V with row-wise softmax; supports stacked batches."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.data.ndim < 2 or k.data.ndim < 2 or v.data.ndim < 2:
        raise DimensionError("attention inputs must be at least 2-d")
    if q.data.shape[-1] != k.data.shape[-1]:
        raise DimensionError(
            f"query/key feature dims differ: {q.data.shape[-1]} vs {k.data.shape[-1]}"
        )
    if k.data.shape[-2] != v.data.shape[-2]:
        raise DimensionError(
            f"key/value row counts differ: {k.data.shape[-2]} vs {v.data.shape[-2]}"
        )
    if k.data.shape[-2] < 1:
        raise DimensionError("attention requires at least one key/value row")
    scale = 1.0 / math.sqrt(q.data.shape[-1])
    scores = mul(matmul(q, transpose_last(k)), scale)
    return matmul(softmax(scores, axis=-1), v)


# -- gradient checking -----------------------------------------------------


def gradient_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
    max_coords_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` is a zero-argument callable that rebuilds a scalar output from the
    current values of ``params``. Returns the max over checked coordinates of
    ``|analytic - numeric| / max(1, |numeric|)``. When
    ``max_coords_per_tensor`` is set, that many coordinates per tensor are
    sampled with ``rng`` instead of sweeping all of them.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = f()
    if out.data.size != 1:
        raise ValueError("gradient_check requires a scalar-valued function")
    if not np.isfinite(out.data).all():
        raise NumericError("gradient_check: function value is not finite")
    out.backward()
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]

    if max_coords_per_tensor is not None and rng is None:
        rng = np.random.default_rng(0)

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        flat_grad = grad.reshape(-1)
        n = flat.size
        if max_coords_per_tensor is None or n <= max_coords_per_tensor:
            indices = range(n)
        else:
            indices = rng.choice(n, size=max_coords_per_tensor, replace=False)
        for i in indices:
            original = flat[i]
            flat[i] = original + eps
            with no_grad():
                f_plus = f().data.item()
            flat[i] = original - eps
            with no_grad():
                f_minus = f().data.item()
            flat[i] = original
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericError("gradient_check: perturbed function value is not finite")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(flat_grad[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
