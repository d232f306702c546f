"""Reverse-mode automatic differentiation over dense numpy buffers.

A small tape-based engine: primitives compute eagerly on numpy arrays and
append a backward closure to the active :class:`Tape` (a Wengert list).
Replaying the tape in reverse accumulates gradients into every
:class:`Parameter` that participated.  Scope is deliberately narrow: dense
elementwise math, small matrix products, reductions, bilinear grid lookups
and an exclusive cumulative sum (for transmittance).  CPU only, first-order
derivatives only, no general tensor broadcasting beyond scalars and
singleton axes.

With no tape active every primitive still evaluates, so the same forward
code serves both training and plain inference.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "AutodiffError",
    "Value",
    "Parameter",
    "Tape",
    "record",
    "backward",
    "grad_check",
    "add",
    "sub",
    "mul",
    "matmul",
    "reduce_sum",
    "mean",
    "sqnorm",
    "exp",
    "log",
    "relu",
    "softplus",
    "sigmoid",
    "tanh",
    "cos",
    "sin",
    "bilinear_gather",
    "concat",
    "reshape",
    "cumsum_exclusive",
]

LOG_GUARD = 1e-12

_ACTIVE_TAPE = None


class AutodiffError(ValueError):
    """Shape mismatch, non-scalar backward seed or non-finite intermediate."""


class Value:
    """A node in the computation graph holding a dense float buffer."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Value(shape={self.shape}, dtype={self.dtype})"


class Parameter(Value):
    """A trainable leaf: a value buffer plus a same-shape gradient accumulator."""

    __slots__ = ("name", "grad")

    def __init__(self, values, name="param", dtype=None):
        super().__init__(values, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def values(self):
        return self.data

    @values.setter
    def values(self, new):
        self.data = np.asarray(new, dtype=self.data.dtype)

    def reset_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


class Tape:
    """Ordered record of primitive operations.

    Entering the context makes this the active tape; every primitive
    executed inside appends one record.  ``backward`` replays the records
    in reverse, visiting each exactly once, and adds the resulting
    gradients into each Parameter's ``grad`` buffer (accumulation is
    additive; callers reset grads between optimizer steps).
    """

    def __init__(self, check_finite=False):
        self.records = []
        self.check_finite = check_finite
        self._prev = None

    def __enter__(self):
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        self._prev = None
        return False

    def backward(self, out):
        if np.ndim(out.data) != 0 and out.data.size != 1:
            raise AutodiffError(
                f"backward requires a scalar output, got shape {out.data.shape}"
            )
        grads = {id(out): np.ones_like(out.data)}
        # arrays we allocated ourselves and may therefore mutate in place
        owned = {id(out)}
        touched = {}
        for kind, inputs, node, bwd in reversed(self.records):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            owned.discard(id(node))
            for inp, gi in zip(inputs, bwd(g)):
                if gi is None or not isinstance(inp, Value):
                    continue
                if isinstance(inp, Parameter):
                    touched.setdefault(id(inp), inp)
                key = id(inp)
                acc = grads.get(key)
                if acc is None:
                    grads[key] = gi
                elif key in owned:
                    acc += gi
                else:
                    grads[key] = acc + gi
                    owned.add(key)
        for p in touched.values():
            g = grads.get(id(p))
            if g is not None:
                p.grad += g
        return None


def backward(tape, out):
    """Accumulate d(out)/d(Parameter) for every Parameter on the tape."""
    tape.backward(out)


def _emit(kind, inputs, out_data, bwd):
    out = Value.__new__(Value)
    out.data = out_data
    tape = _ACTIVE_TAPE
    if tape is not None:
        if tape.check_finite and not np.all(np.isfinite(out_data)):
            raise AutodiffError(
                f"non-finite values produced by '{kind}' (record {len(tape.records)})"
            )
        tape.records.append((kind, inputs, out, bwd))
    return out


def _as_value(x, like=None):
    if isinstance(x, Value):
        return x
    dtype = like.dtype if isinstance(like, Value) else np.float32
    return Value(np.asarray(x), dtype=dtype)


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(kind, a, b, fwd, da, db):
    a = _as_value(a, like=b if isinstance(b, Value) else None)
    b = _as_value(b, like=a)
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        out = fwd(ad, bd)

        def bwd(g):
            return da(g, ad, bd), db(g, ad, bd)

        return _emit(kind, (a, b), out, bwd)
    try:
        np.broadcast_shapes(ad.shape, bd.shape)
    except ValueError:
        raise AutodiffError(
            f"{kind}: incompatible shapes {ad.shape} and {bd.shape}"
        ) from None
    out = fwd(ad, bd)

    def bwd(g):
        return (
            _unbroadcast(da(g, ad, bd), ad.shape),
            _unbroadcast(db(g, ad, bd), bd.shape),
        )

    return _emit(kind, (a, b), out, bwd)


def add(a, b):
    return _binary("add", a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary("sub", a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(
        "mul", a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x
    )


def matmul(a, b):
    """Matrix product for 1D/2D operands (no batching)."""
    a = _as_value(a, like=b if isinstance(b, Value) else None)
    b = _as_value(b, like=a)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise AutodiffError(
            f"matmul: operands must be 1D or 2D, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[0]:
        raise AutodiffError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def bwd(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            return g @ bd.T, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _emit("matmul", (a, b), out, bwd)


def reduce_sum(x, axis=None):
    x = _as_value(x)
    out = np.sum(x.data, axis=axis)
    shape, xnd = x.shape, x.data.ndim

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(g.dtype, copy=False),)
        ax = axis % xnd
        return (np.broadcast_to(np.expand_dims(g, ax), shape),)

    return _emit("sum", (x,), out, bwd)


def mean(x):
    x = _as_value(x)
    out = np.mean(x.data)
    n, shape = x.size, x.shape

    def bwd(g):
        return (np.broadcast_to(g / n, shape),)

    return _emit("mean", (x,), out, bwd)


def sqnorm(x):
    """Sum of squared entries, reduced to a scalar."""
    x = _as_value(x)
    out = np.sum(np.square(x.data))
    xd = x.data

    def bwd(g):
        return (2.0 * g * xd,)

    return _emit("sqnorm", (x,), out, bwd)


def exp(x):
    x = _as_value(x)
    out = np.exp(x.data)

    def bwd(g):
        return (g * out,)

    return _emit("exp", (x,), out, bwd)


def log(x):
    """Natural log guarded as log(max(x, 1e-12)); the clamped region has zero slope."""
    x = _as_value(x)
    xd = x.data
    safe = np.maximum(xd, LOG_GUARD)
    out = np.log(safe)

    def bwd(g):
        return (np.where(xd > LOG_GUARD, g / safe, 0.0).astype(xd.dtype, copy=False),)

    return _emit("log", (x,), out, bwd)


def relu(x):
    x = _as_value(x)
    xd = x.data
    out = np.maximum(xd, 0.0).astype(xd.dtype, copy=False)

    def bwd(g):
        return (g * (xd > 0.0),)

    return _emit("relu", (x,), out, bwd)


def tanh(x):
    x = _as_value(x)
    out = np.tanh(x.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return _emit("tanh", (x,), out, bwd)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    """log(1 + e^x) with an overflow-safe forward and sigmoid backward."""
    x = _as_value(x)
    xd = x.data
    out = (np.maximum(xd, 0.0) + np.log1p(np.exp(-np.abs(xd)))).astype(
        xd.dtype, copy=False
    )
    sig = _sigmoid(np.asarray(xd, dtype=xd.dtype))

    def bwd(g):
        return (g * sig,)

    return _emit("softplus", (x,), out, bwd)


def sigmoid(x):
    x = _as_value(x)
    out = _sigmoid(np.asarray(x.data))

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _emit("sigmoid", (x,), out, bwd)


def cos(x):
    x = _as_value(x)
    xd = x.data
    out = np.cos(xd)

    def bwd(g):
        return (-g * np.sin(xd),)

    return _emit("cos", (x,), out, bwd)


def sin(x):
    x = _as_value(x)
    xd = x.data
    out = np.sin(xd)

    def bwd(g):
        return (g * np.cos(xd),)

    return _emit("sin", (x,), out, bwd)


def bilinear_gather(grid, coords):
    """Bilinear interpolation of a 2D grid (optionally with channels).

    ``grid`` has shape [N0, N1] or [N0, N1, C]; ``coords`` is a constant
    [P, 2] array of continuous node coordinates (node k sits at coordinate
    k).  Coordinates are clipped to the grid hull; gradients flow to the
    grid only.
    """
    grid = _as_value(grid)
    gd = grid.data
    if gd.ndim not in (2, 3):
        raise AutodiffError(f"bilinear: grid must be 2D or 3D, got {gd.shape}")
    pts = coords.data if isinstance(coords, Value) else np.asarray(coords)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise AutodiffError(f"bilinear: coords must be [P, 2], got {pts.shape}")
    squeeze = gd.ndim == 2
    g3 = gd[:, :, None] if squeeze else gd
    n0, n1, c = g3.shape
    flat_grid = g3.reshape(n0 * n1, c)
    x = np.clip(pts[:, 0], 0.0, n0 - 1.0)
    y = np.clip(pts[:, 1], 0.0, n1 - 1.0)
    ix = np.clip(np.floor(x).astype(np.int64), 0, max(n0 - 2, 0))
    iy = np.clip(np.floor(y).astype(np.int64), 0, max(n1 - 2, 0))
    fx = (x - ix).astype(gd.dtype)[:, None]
    fy = (y - iy).astype(gd.dtype)[:, None]
    w11 = fx * fy
    w10 = fx - w11
    w01 = fy - w11
    w00 = 1.0 - fx - w01
    base = ix * n1 + iy
    # degenerate single-row/column grids: the far corner weight is zero, so
    # aliasing its index back onto the base cell is harmless
    dx = n1 if n0 > 1 else 0
    dy = 1 if n1 > 1 else 0
    corners = ((base, w00), (base + dx, w10), (base + dy, w01), (base + dx + dy, w11))
    out = None
    for idx, w in corners:
        part = np.take(flat_grid, idx, axis=0) * w
        out = part if out is None else out + part
    if squeeze:
        out = out[:, 0]

    def bwd(g):
        g2 = g[:, None] if squeeze else g
        acc = np.zeros((n0 * n1, c))
        for idx, w in corners:
            contrib = np.ascontiguousarray((g2 * w).T)
            for k in range(c):
                acc[:, k] += np.bincount(idx, weights=contrib[k], minlength=n0 * n1)
        gg = acc.reshape(n0, n1, c).astype(gd.dtype, copy=False)
        return ((gg[:, :, 0] if squeeze else gg),)

    return _emit("bilinear", (grid,), out, bwd)


def concat(values, axis=0):
    vals = [_as_value(v) for v in values]
    try:
        out = np.concatenate([v.data for v in vals], axis=axis)
    except ValueError as err:
        raise AutodiffError(f"concat: {err}") from None
    sizes = [v.data.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit("concat", tuple(vals), out, bwd)


def reshape(x, shape):
    x = _as_value(x)
    try:
        out = np.reshape(x.data, shape)
    except ValueError:
        raise AutodiffError(
            f"reshape: cannot view {x.shape} as {tuple(shape)}"
        ) from None
    orig = x.shape

    def bwd(g):
        return (np.reshape(g, orig),)

    return _emit("reshape", (x,), out, bwd)


def cumsum_exclusive(x, axis=-1):
    """Exclusive running sum along ``axis`` (first slot is zero)."""
    x = _as_value(x)
    inc = np.cumsum(x.data, axis=axis)
    out = inc - x.data

    def bwd(g):
        s = np.cumsum(g, axis=axis)
        total = np.take(s, [-1], axis=axis)
        return (total - s,)

    return _emit("cumsum_exclusive", (x,), out, bwd)


_OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "matvec": matmul,
    "sum": reduce_sum,
    "mean": mean,
    "sqnorm": sqnorm,
    "exp": exp,
    "log": log,
    "relu": relu,
    "softplus": softplus,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "cos": cos,
    "sin": sin,
    "bilinear": bilinear_gather,
    "concat": concat,
    "reshape": reshape,
    "cumsum_exclusive": cumsum_exclusive,
}


def record(kind, *inputs, **kwargs):
    """Evaluate the primitive named ``kind``, recording it on the active tape."""
    try:
        op = _OPS[kind]
    except KeyError:
        raise AutodiffError(f"unknown op-kind {kind!r}") from None
    return op(*inputs, **kwargs)


def grad_check(fn, params, eps=None, n_samples=None, rng=None):
    """Max relative disagreement between analytic and central-difference grads.

    ``fn`` takes no arguments, reads the given parameters and returns a
    scalar Value; it must be deterministic.  The error for a coordinate is
    |analytic - fd| / max(1, |fd|).  With ``n_samples`` set, only that many
    randomly chosen coordinates per parameter are probed.
    """
    params = list(params)
    if not params:
        raise AutodiffError("grad_check: no parameters given")
    if eps is None:
        eps = 1e-5 if params[0].dtype == np.float64 else 1e-2
    if eps <= 0:
        raise AutodiffError("grad_check: epsilon must be positive")
    rng = rng or np.random.default_rng(0)

    for p in params:
        p.reset_grad()
    with Tape(check_finite=True) as tape:
        out = fn()
    tape.backward(out)
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.reset_grad()

    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        if n_samples is None or n_samples >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=n_samples, replace=False)
        for k in idx:
            saved = flat[k]
            flat[k] = saved + eps
            hi = float(fn().data)
            flat[k] = saved - eps
            lo = float(fn().data)
            flat[k] = saved
            fd = (hi - lo) / (2.0 * eps)
            err = abs(float(an.reshape(-1)[k]) - fd) / max(1.0, abs(fd))
            if err > worst:
                worst = err
    return worst
