"""Tape-based reverse-mode automatic differentiation on numpy arrays.

A :class:`Tape` records every primitive applied to tensors that require
gradients, in execution order.  Because the record list is append-only it
is already a topological order of the computation, so backpropagation is a
single reverse walk.  With no active tape every primitive degrades to its
plain numpy forward computation (inference mode).

Only the primitives the models need are implemented; each op validates its
input shapes eagerly so a bad graph fails at construction time, not during
the backward pass.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class ShapeMismatch(ValueError):
    pass


class IndexOutOfRange(ValueError):
    pass


class NonScalarLoss(ValueError):
    pass


_ACTIVE_TAPES: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Tensor:
    """A float64 array plus an accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = np.ascontiguousarray(arr) if arr.ndim else arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


class Tape:
    """Context manager recording (output, backward_fn) pairs."""

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _ACTIVE_TAPES.pop()
        assert popped is self
        return False

    def record(self, out: Tensor, backward_fn) -> None:
        self._records.append((out, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss) = 1 and walk the records in reverse."""
        if loss.data.shape != ():
            raise NonScalarLoss(f"backward requires a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones((), dtype=np.float64)
        for out, backward_fn in reversed(self._records):
            if out.grad is None:
                continue
            backward_fn(out.grad)


def _maybe_record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch("matmul expects 2-d operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _maybe_record(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also accepts a 1-d bias against a 2-d left operand."""
    bias = a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]
    if not bias and a.data.shape != b.data.shape:
        raise ShapeMismatch(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)

    def backward(g):
        _accum(a, g)
        _accum(b, g.sum(axis=0) if bias else g)

    return _maybe_record(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"mul shapes differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data)

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _maybe_record(out, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)

    def backward(g):
        _accum(a, g * c)

    return _maybe_record(out, (a,), backward)


def scale_rows(a: Tensor, w: np.ndarray) -> Tensor:
    """Multiply each row of a (N, K) tensor by a constant per-row weight."""
    w = np.asarray(w, dtype=np.float64)
    if a.data.ndim != 2 or w.shape != (a.data.shape[0],):
        raise ShapeMismatch(f"scale_rows expects (N, K) and (N,), got {a.data.shape} and {w.shape}")
    col = w[:, None]
    out = Tensor(a.data * col)

    def backward(g):
        _accum(a, g * col)

    return _maybe_record(out, (a,), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch("transpose expects a 2-d operand")
    out = Tensor(a.data.T)

    def backward(g):
        _accum(a, g.T)

    return _maybe_record(out, (a,), backward)


def concat(parts: list[Tensor]) -> Tensor:
    """Concatenate 2-d tensors along the last axis."""
    if not parts:
        raise ShapeMismatch("concat of zero tensors")
    n_rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != n_rows:
            raise ShapeMismatch("concat expects 2-d tensors with equal row counts")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[:, lo:hi])

    return _maybe_record(out, tuple(parts), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)

    def backward(g):
        _accum(a, g * y * (1.0 - y))

    return _maybe_record(out, (a,), backward)


def softplus(a: Tensor) -> Tensor:
    out = Tensor(np.logaddexp(0.0, a.data))
    x = a.data

    def backward(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        _accum(a, g * s)

    return _maybe_record(out, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def backward(g):
        _accum(a, np.full_like(a.data, float(g)))

    return _maybe_record(out, (a,), backward)


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or index.ndim != 1:
        raise ShapeMismatch("gather_rows expects a 2-d tensor and a 1-d index")
    if index.size and (index.min() < 0 or index.max() >= a.data.shape[0]):
        raise IndexOutOfRange(f"gather index outside [0, {a.data.shape[0]})")
    out = Tensor(a.data[index])

    def backward(g):
        _accum(a, kernels.scatter_add_rows(g, index, a.data.shape[0]))

    return _maybe_record(out, (a,), backward)


def mean_rows(a: Tensor, seg: np.ndarray, n_segments: int) -> Tensor:
    """Segment mean: out[s] = mean of a's rows with seg == s (empty segments stay 0)."""
    seg = np.asarray(seg, dtype=np.int64)
    if a.data.ndim != 2 or seg.shape != (a.data.shape[0],):
        raise ShapeMismatch("mean_rows expects (N, K) data and an (N,) segment index")
    if seg.size and (seg.min() < 0 or seg.max() >= n_segments):
        raise IndexOutOfRange(f"segment index outside [0, {n_segments})")
    counts = np.bincount(seg, minlength=n_segments).astype(np.float64)
    safe = np.where(counts > 0, counts, 1.0)
    out = Tensor(kernels.scatter_add_rows(a.data, seg, n_segments) / safe[:, None])

    def backward(g):
        _accum(a, (g / safe[:, None])[seg])

    return _maybe_record(out, (a,), backward)


def scatter_add_rows(a: Tensor, index: np.ndarray, n_rows: int) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or index.shape != (a.data.shape[0],):
        raise ShapeMismatch("scatter_add_rows expects (N, K) data and an (N,) index")
    if index.size and (index.min() < 0 or index.max() >= n_rows):
        raise IndexOutOfRange(f"scatter index outside [0, {n_rows})")
    out = Tensor(kernels.scatter_add_rows(a.data, index, n_rows))

    def backward(g):
        _accum(a, g[index])

    return _maybe_record(out, (a,), backward)


def column_standardize(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-column batch standardization: (x - mean) / (population std + eps)."""
    if a.data.ndim != 2:
        raise ShapeMismatch("column_standardize expects a 2-d tensor")
    x = a.data
    mean = x.mean(axis=0, keepdims=True)
    centered = x - mean
    sigma = np.sqrt((centered * centered).mean(axis=0, keepdims=True))
    denom = sigma + eps
    live = denom > 0.0  # false only for eps == 0 on a constant column
    inv = 1.0 / np.where(live, denom, 1.0)
    out = Tensor(centered * inv)

    def backward(g):
        # d/dx of (x - mu) * inv, including inv's dependence on x through sigma;
        # if sigma == 0 the second term vanishes because centered == 0 there
        safe_sigma = np.where(sigma > 0.0, sigma, 1.0)
        g_mean = g.mean(axis=0, keepdims=True)
        gd_mean = (g * centered).mean(axis=0, keepdims=True)
        dx = inv * (g - g_mean) - (inv * inv) * centered * (gd_mean / safe_sigma)
        _accum(a, np.where(live, dx, 0.0))

    return _maybe_record(out, (a,), backward)


# ---------------------------------------------------------------------------
# finite-difference checker
# ---------------------------------------------------------------------------


def grad_check(loss_fn, params: list[Tensor], eps: float = 1e-6,
               rel_tol: float = 1e-4, abs_tol: float = 1e-7) -> list[tuple[int, int, float, float]]:
    """Compare analytic gradients of loss_fn() against central differences.

    loss_fn must be a deterministic function of params' current data.
    Returns a list of (param_index, flat_index, numeric, analytic) failures;
    an empty list means every component agreed within tolerance.
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    failures = []
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        ana = analytic[pi].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(loss_fn().data)
            flat[i] = orig - eps
            f_minus = float(loss_fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            if abs(numeric - ana[i]) > abs_tol + rel_tol * max(abs(numeric), abs(ana[i])):
                failures.append((pi, i, numeric, float(ana[i])))
    return failures
