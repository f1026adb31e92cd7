"""Dense-tensor arithmetic with reverse-mode differentiation.

Model parameters and node features are created in single precision; op
results keep the widest storage dtype among their inputs, while the
arithmetic itself and every gradient buffer run in at least double
precision (extended precision when the gradient checker supplies
longdouble parameters). Ops executed inside a ``with Tape():`` block
record backward rules; ``backward`` replays them in reverse execution
order. Any op producing a non-finite value raises
:class:`~lexgraph.errors.NumericalError`.
"""

from __future__ import annotations

import threading

import numpy as np

from . import _kernels
from .errors import NumericalError, ValidationError

_STATE = threading.local()


def _active_tape():
    return getattr(_STATE, "tape", None)


class Tape:
    """Ordered op records; a context manager activating recording."""

    def __init__(self):
        self.records: list[tuple[Tensor, callable]] = []

    def __enter__(self):
        if _active_tape() is not None:
            raise ValidationError("a tape is already active on this thread")
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = None
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape", "_on_path")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64, np.longdouble):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._tape = None
        self._on_path = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _f64(t: Tensor) -> np.ndarray:
    """Value array promoted to at least double precision for op arithmetic."""
    return t.data.astype(np.promote_types(t.data.dtype, np.float64), copy=False)


def _result_dtype(*tensors: Tensor):
    return np.result_type(*(t.data.dtype for t in tensors))


def _scatter_add(rows: np.ndarray, idx: np.ndarray, n_rows: int) -> np.ndarray:
    """Kernel-backed in float64; numpy path for extended precision."""
    if rows.dtype == np.float64:
        return _kernels.scatter_add_rows(rows, idx, n_rows)
    out = np.zeros((n_rows, rows.shape[1]), dtype=rows.dtype)
    np.add.at(out, idx, rows)
    return out


def _segment_max(values: np.ndarray, seg: np.ndarray, n_segs: int) -> np.ndarray:
    if values.dtype == np.float64:
        return _kernels.segment_max(values, seg, n_segs)
    out = np.full(n_segs, -np.inf, dtype=values.dtype)
    np.maximum.at(out, seg, values)
    return out


def _segment_sum(values: np.ndarray, seg: np.ndarray, n_segs: int) -> np.ndarray:
    if values.dtype == np.float64:
        return _kernels.segment_sum(values, seg, n_segs)
    out = np.zeros(n_segs, dtype=values.dtype)
    np.add.at(out, seg, values)
    return out


def _make(out64: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result: finiteness check, dtype demotion, tape record."""
    if not np.all(np.isfinite(out64)):
        raise NumericalError("non-finite value produced by an op")
    out = Tensor(out64.astype(_result_dtype(*inputs)))
    tape = _active_tape()
    if tape is not None and any(inp._on_path for inp in inputs):
        out._on_path = True
        out._tape = tape
        tape.records.append((out, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from loss."""
    if loss.data.size != 1:
        raise ValidationError("backward requires a scalar loss")
    tape = loss._tape
    if tape is None:
        raise ValidationError("loss was not recorded on a tape")
    seed_dtype = np.promote_types(loss.data.dtype, np.float64)
    buffers: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data, dtype=seed_dtype)}
    holders: dict[int, Tensor] = {id(loss): loss}

    def push(t: Tensor, g: np.ndarray) -> None:
        if not t._on_path:
            return
        holders.setdefault(id(t), t)
        key = id(t)
        if key in buffers:
            buffers[key] += g
        else:
            buffers[key] = g.astype(np.promote_types(g.dtype, np.float64)).copy()

    for out, backward_fn in reversed(tape.records):
        g = buffers.get(id(out))
        if g is None:
            continue
        backward_fn(g, push)
    for t in holders.values():
        if t.requires_grad:
            g = buffers.get(id(t))
            if g is None:
                continue
            if t.grad is None:
                t.grad = g
            else:
                t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to the given shape (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Core ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = _f64(a) + _f64(b)

    def bw(g, push):
        push(a, _unbroadcast(g, a.shape))
        push(b, _unbroadcast(g, b.shape))

    return _make(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = _f64(a) - _f64(b)

    def bw(g, push):
        push(a, _unbroadcast(g, a.shape))
        push(b, _unbroadcast(-g, b.shape))

    return _make(out, (a, b), bw)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    a64, b64 = _f64(a), _f64(b)
    out = a64 * b64

    def bw(g, push):
        push(a, _unbroadcast(g * b64, a.shape))
        push(b, _unbroadcast(g * a64, b.shape))

    return _make(out, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValidationError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    a64, b64 = _f64(a), _f64(b)
    out = a64 @ b64

    def bw(g, push):
        push(a, g @ b64.T)
        push(b, a64.T @ g)

    return _make(out, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    out = _f64(a).T.copy()

    def bw(g, push):
        push(a, g.T)

    return _make(out, (a,), bw)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape
    out = _f64(a).reshape(shape)

    def bw(g, push):
        push(a, g.reshape(old))

    return _make(out, (a,), bw)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate corresponding rows: (n, p) ++ (n, q) -> (n, p+q)."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValidationError(f"concat_rows shape mismatch: {a.shape} vs {b.shape}")
    split = a.shape[1]
    out = np.concatenate([_f64(a), _f64(b)], axis=1)

    def bw(g, push):
        push(a, g[:, :split])
        push(b, g[:, split:])

    return _make(out, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _f64(a) * c

    def bw(g, push):
        push(a, g * c)

    return _make(out, (a,), bw)


def add_const(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _f64(a) + c

    def bw(g, push):
        push(a, g)

    return _make(out, (a,), bw)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(_f64(a))

    def bw(g, push):
        push(a, g * out)

    return _make(out, (a,), bw)


def log(a: Tensor) -> Tensor:
    a64 = _f64(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a64)

    def bw(g, push):
        push(a, g / a64)

    return _make(out, (a,), bw)


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - op surface
    a64 = _f64(a)
    out = a64.sum(axis=axis)

    def bw(g, push):
        if axis is None:
            push(a, np.broadcast_to(g, a.shape).astype(np.float64))
        else:
            push(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).astype(np.float64))

    return _make(np.asarray(out), (a,), bw)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    a64 = _f64(a)
    out = a64.mean(axis=axis)
    denom = a64.size if axis is None else a64.shape[axis]

    def bw(g, push):
        if axis is None:
            push(a, np.broadcast_to(g / denom, a.shape).astype(np.float64))
        else:
            push(a, np.broadcast_to(np.expand_dims(g / denom, axis), a.shape).astype(np.float64))

    return _make(np.asarray(out), (a,), bw)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    a64 = _f64(a)
    out = np.where(a64 > 0, a64, slope * a64)

    def bw(g, push):
        push(a, g * np.where(a64 > 0, 1.0, slope))

    return _make(out, (a,), bw)


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    a64 = _f64(a)
    with np.errstate(over="ignore"):
        out = np.where(a64 > 0, a64, alpha * (np.exp(a64) - 1.0))

    def bw(g, push):
        push(a, g * np.where(a64 > 0, 1.0, out + alpha))

    return _make(out, (a,), bw)


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Rows scaled to unit norm; zero rows stay zero (zero gradient there)."""
    a64 = _f64(a)
    norms = np.linalg.norm(a64, axis=1, keepdims=True)
    safe = np.where(norms == 0, 1.0, norms)
    out = a64 / safe

    def bw(g, push):
        dot = (g * out).sum(axis=1, keepdims=True)
        ga = (g - dot * out) / safe
        ga[norms[:, 0] == 0] = 0.0
        push(a, ga)

    return _make(out, (a,), bw)


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity -> 1-D vector. Zero rows give 0."""
    if a.shape != b.shape or a.data.ndim != 2:
        raise ValidationError(f"cosine_rows shape mismatch: {a.shape} vs {b.shape}")
    a64, b64 = _f64(a), _f64(b)
    na = np.linalg.norm(a64, axis=1)
    nb = np.linalg.norm(b64, axis=1)
    zero = (na == 0) | (nb == 0)
    sa = np.where(na == 0, 1.0, na)
    sb = np.where(nb == 0, 1.0, nb)
    ah = a64 / sa[:, None]
    bh = b64 / sb[:, None]
    cos = np.where(zero, 0.0, (ah * bh).sum(axis=1))

    def bw(g, push):
        gcol = np.where(zero, 0.0, g)[:, None]
        push(a, gcol * (bh - cos[:, None] * ah) / sa[:, None])
        push(b, gcol * (ah - cos[:, None] * bh) / sb[:, None])

    return _make(cos, (a, b), bw)


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    a64 = _f64(a)
    out = a64[idx]

    def bw(g, push):
        if g.ndim == 2:
            buf = _scatter_add(np.ascontiguousarray(g), idx, a.shape[0])
        else:
            buf = np.zeros(a.shape, dtype=g.dtype)
            np.add.at(buf, idx, g)
        push(a, buf)

    return _make(out, (a,), bw)


def scatter_add_rows(a: Tensor, idx, n_rows: int) -> Tensor:
    """out[idx[e]] += a[e] for each row e; output has n_rows rows."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.data.ndim != 2:
        raise ValidationError("scatter_add_rows expects a 2-D tensor")
    out = _scatter_add(np.ascontiguousarray(_f64(a)), idx, n_rows)

    def bw(g, push):
        push(a, np.ascontiguousarray(g)[idx])

    return _make(out, (a,), bw)


def segment_softmax(values: Tensor, segment_ids) -> Tensor:
    """Softmax normalized within each segment (1-D or (E, 1) values)."""
    seg = np.asarray(segment_ids, dtype=np.int64)
    v64 = _f64(values)
    flat = v64.reshape(-1)
    if flat.shape[0] != seg.shape[0]:
        raise ValidationError("segment_softmax: values and segment_ids length differ")
    n_segs = int(seg.max()) + 1 if seg.size else 0
    seg_max = _segment_max(flat, seg, n_segs)
    shifted = np.exp(flat - seg_max[seg])
    denom = _segment_sum(shifted, seg, n_segs)
    soft = (shifted / denom[seg]).reshape(v64.shape)

    def bw(g, push):
        gf = g.reshape(-1)
        sf = soft.reshape(-1)
        inner = _segment_sum(gf * sf, seg, n_segs)
        push(values, (sf * (gf - inner[seg])).reshape(values.shape))

    return _make(soft, (values,), bw)


def dropout(a: Tensor, p: float, seed: int, train: bool) -> Tensor:
    """Inverted dropout: kept entries scaled by 1/(1-p) in training."""
    if not 0.0 <= p < 1.0:
        raise ValidationError("dropout p must lie in [0, 1)")
    if not train or p == 0.0:
        return a
    rng = np.random.default_rng(seed)
    mask = (rng.random(a.shape) >= p).astype(np.float64) / (1.0 - p)
    out = _f64(a) * mask

    def bw(g, push):
        push(a, g * mask)

    return _make(out, (a,), bw)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def finite_diff_check(f, params: list[Tensor], eps: float = 1e-4) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` must be a deterministic map from ``params`` to a scalar Tensor
    (any dropout inside must use a fixed seed so the mask does not move
    between evaluations). Per coordinate the error is
    ``|a - n| / max(1e-8, |a| + |n|)``. Run params in float64 at least;
    longdouble params push finite-difference noise well below the 1e-8
    error floor, which float64 storage alone cannot on coordinates whose
    true gradient is zero.
    """
    for p in params:
        p.grad = None
        p.data = np.ascontiguousarray(p.data)
    with Tape():
        loss = f(params)
    backward(loss)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros(p.shape, dtype=np.float64)
        for p in params
    ]

    def eval_loss():
        return f(params).data.reshape(())

    worst = 0.0
    for p, a_grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        g_flat = a_grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = eval_loss()
            flat[i] = orig - eps
            down = eval_loss()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = g_flat[i]
            err = np.abs(a - numeric) / max(1e-8, np.abs(a) + np.abs(numeric))
            worst = max(worst, float(err))
    return worst
