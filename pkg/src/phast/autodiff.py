"""Tape-based reverse-mode differentiation on numpy arrays.

Operations on :class:`Tensor` record themselves on the active :class:`Tape`
only when at least one input requires a gradient. Outside a tape (or when
nothing requires a gradient) they are plain numpy calls and leave no trace,
which is what makes gradient-free inference cheap.

    with Tape() as tape:
        x = tape.watch(np.array([3.0]))
        y = (x * x).sum()
    grads = tape.backward(y)
    grads[x]  # -> array([6.])
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

_state = threading.local()


def _stack():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def active_tape() -> "Tape | None":
    s = _stack()
    return s[-1] if s else None


class Tensor:
    __slots__ = ("value", "requires_grad", "param", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, value, requires_grad=False, param=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.param = param

    @property
    def shape(self):
        return self.value.shape

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.value

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return sum_all(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


@dataclass(eq=False)
class Parameter:
    """A named learnable array with its accumulated gradient."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def tensor(self) -> Tensor:
        """Leaf view of this parameter: watched when a tape is active."""
        tape = active_tape()
        if tape is None:
            return Tensor(self.value)
        return tape.param(self)


class BackwardError(RuntimeError):
    pass


class Gradients(dict):
    """Adjoints of leaf tensors, keyed by the tensor object."""

    def __getitem__(self, t):
        return dict.__getitem__(self, id(t))

    def get(self, t, default=None):
        return dict.get(self, id(t), default)


class Tape:
    """Ordered record of primitive applications.

    Each entry holds the output, its inputs and a vector-Jacobian product.
    A recording supports a single backward pass unless ``retain=True`` is
    passed, which allows one more.
    """

    def __init__(self):
        self.nodes: list = []
        self.leaves: list[Tensor] = []
        self._params: dict[int, Tensor] = {}
        self._backward_allowed = True

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def watch(self, value) -> Tensor:
        """Mark an input as needing a gradient."""
        t = Tensor(value.value if isinstance(value, Tensor) else value, requires_grad=True)
        self.leaves.append(t)
        return t

    def param(self, p: Parameter) -> Tensor:
        t = self._params.get(id(p))
        if t is None:
            t = Tensor(p.value, requires_grad=True, param=p)
            self._params[id(p)] = t
            self.leaves.append(t)
        return t

    def record(self, value, parents, vjp) -> Tensor:
        out = Tensor(value, requires_grad=True)
        self.nodes.append((out, parents, vjp))
        return out

    def backward(self, output: Tensor, seed=None, retain: bool = False, accumulate: bool = True) -> Gradients:
        """Reverse sweep from a scalar ``output``.

        Gradients of watched inputs are returned; parameter gradients are
        also accumulated into ``Parameter.grad`` unless ``accumulate`` is off.
        """
        if not self._backward_allowed:
            raise BackwardError("backward already run on this recording")
        if output.value.size != 1:
            raise BackwardError(f"backward needs a scalar output, got shape {output.shape}")
        self._backward_allowed = retain
        adj = {}
        if output.requires_grad:
            adj[id(output)] = np.ones_like(output.value) * (1.0 if seed is None else seed)
        for out, parents, vjp in reversed(self.nodes):
            g = adj.pop(id(out), None)
            if g is None:
                continue
            for p, gp in zip(parents, vjp(g)):
                if gp is None or not isinstance(p, Tensor) or not p.requires_grad:
                    continue
                prev = adj.get(id(p))
                adj[id(p)] = gp if prev is None else prev + gp
        grads = Gradients()
        for leaf in self.leaves:
            g = adj.get(id(leaf))
            if g is None:
                g = np.zeros_like(leaf.value)
            grads[id(leaf)] = g
            if accumulate and leaf.param is not None:
                leaf.param.grad = leaf.param.grad + g
        return grads


# ---------------------------------------------------------------------------
# primitives


def _val(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _make(value, parents, vjp):
    tape = active_tape()
    if tape is None or not any(isinstance(p, Tensor) and p.requires_grad for p in parents):
        return Tensor(value)
    return tape.record(value, parents, vjp)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for k, n in enumerate(shape):
        if n == 1 and g.shape[k] != 1:
            g = g.sum(axis=k, keepdims=True)
    return g


def add(a, b):
    av, bv = _val(a), _val(b)
    return _make(av + bv, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = _val(a), _val(b)
    return _make(av - bv, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = _val(a), _val(b)
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = _val(a), _val(b)
    out = av / bv
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)))


def matmul(a, b):
    av, bv = _val(a), _val(b)
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def _rowwise_matmul(x, W):
    # BLAS matrix-vector kernels (1-2 output columns) let a row's result
    # depend on its neighbours; summing explicitly keeps rows independent,
    # so a system predicts bit-identically alone or inside a batch.
    if W.shape[1] > 2 or x.ndim != 2:
        return x @ W
    out = np.zeros((x.shape[0], W.shape[1]))
    for k in range(W.shape[0]):
        out += x[:, k:k + 1] * W[k]
    return out


def linear(x, W, b=None):
    """``x @ W + b`` for a 2-D ``x``."""
    xv, Wv = _val(x), _val(W)
    out = _rowwise_matmul(xv, Wv)
    if b is None:
        return _make(out, (x, W), lambda g: (g @ Wv.T, xv.T @ g))
    out += _val(b)
    return _make(out, (x, W, b), lambda g: (g @ Wv.T, xv.T @ g, g.sum(axis=0)))


def sum_all(x):
    xv = _val(x)
    return _make(np.array(xv.sum()), (x,), lambda g: (np.broadcast_to(g, xv.shape).copy(),))


def mean_all(x):
    n = _val(x).size
    return mul(sum_all(x), 1.0 / n)


def reshape(x, shape):
    xv = _val(x)
    return _make(xv.reshape(shape), (x,), lambda g: (g.reshape(xv.shape),))


def row_sum(x):
    """Sum over the last axis of a 2-D array, returning shape (N,)."""
    xv = _val(x)
    return _make(xv.sum(axis=1), (x,), lambda g: (np.repeat(g[:, None], xv.shape[1], axis=1),))


_LN2 = float(np.log(2.0))


def shifted_softplus(x):
    """``ln(0.5 e^x + 0.5)``; zero at the origin."""
    xv = _val(x)
    e = np.abs(xv)
    np.negative(e, out=e)
    np.exp(e, out=e)  # e = exp(-|x|), never overflows
    out = np.log1p(e)
    out += np.maximum(xv, 0.0)
    out -= _LN2
    return _make(out, (x,), lambda g: (g * _sigmoid(xv),))


def _sigmoid(v):
    s = np.multiply(v, 0.5)
    np.tanh(s, out=s)
    s *= 0.5
    s += 0.5
    return s


def sigmoid(x):
    s = _sigmoid(_val(x))
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def gaussian_rbf(d, centers, width):
    """``exp(-((d - mu) / width)^2 / 2)`` for each center: (E,) -> (E, K)."""
    dv = _val(d)
    centers = np.asarray(centers, dtype=np.float64)
    diff = dv[:, None] - centers[None, :]
    out = np.exp(-0.5 * (diff / width) ** 2)
    return _make(out, (d,), lambda g: ((g * out * (-diff / width ** 2)).sum(axis=1),))


class SegmentIndex:
    """Precomputed scatter matrix for summing rows into ``num_segments`` bins.

    Accumulation within a bin follows ascending row order, so results are
    bitwise reproducible.
    """

    __slots__ = ("ids", "num_segments", "matrix")

    def __init__(self, ids, num_segments):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
            raise IndexError("segment id out of range")
        self.ids = ids
        self.num_segments = int(num_segments)
        n = len(ids)
        self.matrix = sp.csr_matrix(
            (np.ones(n), (ids, np.arange(n))), shape=(self.num_segments, n))
        self.matrix.sort_indices()


def _as_index(ids, num_segments):
    if isinstance(ids, SegmentIndex):
        return ids
    return SegmentIndex(ids, num_segments)


def segment_sum(values, segment_ids, num_segments=None):
    """Sum rows of ``values`` into bins; adjoint is a row gather."""
    idx = _as_index(segment_ids, num_segments)
    v = _val(values)
    flat = v.reshape(len(v), int(np.prod(v.shape[1:])))
    out = np.asarray(idx.matrix @ flat).reshape((idx.num_segments,) + v.shape[1:])
    return _make(out, (values,), lambda g: (g[idx.ids],))


def gather_rows(x, index):
    """``x[index]``; the adjoint scatters back with a segment sum."""
    xv = _val(x)
    idx = index if isinstance(index, SegmentIndex) else None
    ids = idx.ids if idx is not None else np.asarray(index, dtype=np.int64)

    def vjp(g):
        sidx = idx if idx is not None else SegmentIndex(ids, len(xv))
        flat = g.reshape(len(g), int(np.prod(g.shape[1:])))
        return (np.asarray(sidx.matrix @ flat).reshape(xv.shape),)

    return _make(xv[ids], (x,), vjp)


def vector_norm_rows(v, eps=0.0):
    """Euclidean norm of each row; the gradient at a zero row is zero."""
    vv = _val(v)
    n = np.sqrt(np.einsum("ij,ij->i", vv, vv))
    safe = np.where(n > eps, n, 1.0)

    def vjp(g):
        return (np.where((n > eps)[:, None], vv * (g / safe)[:, None], 0.0),)

    return _make(n, (v,), vjp)


def concat_cols(parts):
    vals = [_val(p) for p in parts]
    widths = np.cumsum([0] + [v.shape[1] for v in vals])
    out = np.concatenate(vals, axis=1)
    return _make(out, tuple(parts),
                 lambda g: tuple(g[:, widths[k]:widths[k + 1]] for k in range(len(vals))))


def cosine_rows(a, b, eps=1e-8):
    """Row-wise ``a.b / max(|a| |b|, eps)``."""
    av, bv = _val(a), _val(b)
    dot = np.einsum("ij,ij->i", av, bv)
    na = np.sqrt(np.einsum("ij,ij->i", av, av))
    nb = np.sqrt(np.einsum("ij,ij->i", bv, bv))
    prod = na * nb
    clipped = prod <= eps
    den = np.where(clipped, eps, prod)
    out = dot / den

    def vjp(g):
        ga = bv / den[:, None]
        gb = av / den[:, None]
        # d(prod)/da = nb * a / na where the max picks the product
        sa = np.where(na > 0, nb / np.where(na > 0, na, 1.0), 0.0)
        sb = np.where(nb > 0, na / np.where(nb > 0, nb, 1.0), 0.0)
        corr = np.where(clipped, 0.0, out / den)
        ga = ga - (corr * sa)[:, None] * av
        gb = gb - (corr * sb)[:, None] * bv
        return (ga * g[:, None], gb * g[:, None])

    return _make(out, (a, b), vjp)


def square(x):
    xv = _val(x)
    return _make(xv * xv, (x,), lambda g: (2.0 * xv * g,))


def stop_gradient(x) -> Tensor:
    return Tensor(_val(x).copy())


# ---------------------------------------------------------------------------
# numerical checking


@dataclass
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    max_abs_error: float
    max_rel_error: float

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def relative_error(analytic, numeric, floor_frac=1e-3):
    """Per-coordinate relative error with a floor tied to the gradient scale,
    so coordinates orders of magnitude below the largest are compared on
    that scale rather than on their own vanishing magnitude."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor_frac * scale)
    return float((np.abs(a - n) / den).max())


def grad_check(function, point, step=1e-5, tolerance=None, coords=None) -> GradCheckReport:
    """Compare reverse-mode against central differences.

    ``function`` maps a Tensor to a scalar Tensor. Each coordinate is
    perturbed by ``step * (1 + |x_i|)``. ``coords`` optionally restricts the
    comparison to a subset of flat indices.
    """
    x0 = np.array(point, dtype=np.float64)
    with Tape() as tape:
        x = tape.watch(x0)
        y = function(x)
    analytic = tape.backward(y)[x].ravel()
    flat = x0.ravel()
    coords = np.arange(flat.size) if coords is None else np.asarray(coords)
    numeric = np.zeros(len(coords))
    for k, i in enumerate(coords):
        h = step * (1.0 + abs(flat[i]))
        xp = flat.copy()
        xp[i] += h
        xm = flat.copy()
        xm[i] -= h
        fp = float(_val(function(Tensor(xp.reshape(x0.shape)))))
        fm = float(_val(function(Tensor(xm.reshape(x0.shape)))))
        numeric[k] = (fp - fm) / (2.0 * h)
    a = analytic[coords]
    return GradCheckReport(a, numeric, float(np.abs(a - numeric).max(initial=0.0)), relative_error(a, numeric))
