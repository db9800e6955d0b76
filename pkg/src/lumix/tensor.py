"""Dense tensors, the project's contraction set, and a reverse-mode tape.

Values are immutable once constructed; every operation returns a fresh
``Tensor``. When a :class:`Tape` is active, operations append a record
(inputs, output, backward closure) to it; :meth:`Tape.backward` replays
the log in reverse and accumulates gradients. With no tape active the same
functions run as plain numpy, which is what inference uses.

The op set is deliberately small: matmul, elementwise arithmetic,
reductions, softmax, layer normalization, shape moves, embedding lookup,
and the two tensor-low-rank contractions. It is not a general einsum
interpreter.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "add_const",
    "add_bias",
    "mul_tokens",
    "add_tokens",
    "transpose",
    "swap_last2",
    "reshape",
    "repeat_axis",
    "concat",
    "slice_axis",
    "sum_all",
    "mean_all",
    "softmax_rows",
    "layer_norm",
    "gelu",
    "silu",
    "embedding",
    "tensor_lora_3step",
    "tensor_lora_fused",
    "finite_difference_grad",
    "check_gradients",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand extents do not conform."""


class Tensor:
    """A dense array with explicit shape; data is treated as read-only."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr

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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


def tensor(data, dtype=None) -> Tensor:
    return Tensor(data, dtype=dtype)


# ---------------------------------------------------------------------------
# Tape


class Tape:
    """Ordered log of primitive operations with reverse-mode replay."""

    _active: list["Tape"] = []

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._grads: dict[int, np.ndarray] = {}
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        Tape._active.append(self)
        return self

    def __exit__(self, *exc):
        Tape._active.pop()
        return False

    @staticmethod
    def current() -> "Tape | None":
        return Tape._active[-1] if Tape._active else None

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self._records.append((out, inputs, backward))
        self._outputs.add(id(out))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Populate gradients for every tensor on a path to ``loss``."""
        if loss.ndim != 0:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        if id(loss) not in self._outputs:
            raise ValueError("loss was not produced by operations recorded on this tape")
        grads = {id(loss): np.ones((), dtype=loss.dtype)}
        for out, inputs, backward_fn in reversed(self._records):
            gout = grads.get(id(out))
            if gout is None:
                continue
            for inp, gin in zip(inputs, backward_fn(gout)):
                if gin is None:
                    continue
                key = id(inp)
                acc = grads.get(key)
                if acc is None:
                    grads[key] = gin
                else:
                    acc += gin
        self._grads = grads

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the last backward() loss w.r.t. ``t`` (zeros if off-path)."""
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros(t.shape, dtype=t.dtype)
        return g


def _emit(out_data, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    out = Tensor(out_data)
    tape = Tape.current()
    if tape is not None:
        tape.record(out, inputs, backward)
    return out


# ---------------------------------------------------------------------------
# Arithmetic


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _emit(a.data + float(c), (a,), lambda g: (g,))


def add_const(a: Tensor, arr: np.ndarray) -> Tensor:
    """Add a non-trainable array (broadcast onto ``a``'s shape)."""
    out = a.data + arr
    if out.shape != a.shape:
        raise ShapeError(f"add_const: {arr.shape} does not broadcast onto {a.shape}")
    return _emit(out, (a,), lambda g: (g,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a vector along the last axis."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not fit last axis of {x.shape}")
    lead = tuple(range(x.ndim - 1))
    return _emit(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)))


def mul_tokens(x: Tensor, s: Tensor) -> Tensor:
    """Multiply x[..., L, d] by per-row s[..., d], broadcast over the token axis."""
    if s.shape != x.shape[:-2] + x.shape[-1:]:
        raise ShapeError(f"mul_tokens: scale {s.shape} does not fit {x.shape}")
    xd, sd = x.data, s.data[..., None, :]

    def backward(g):
        return g * sd, (g * xd).sum(axis=-2)

    return _emit(xd * sd, (x, s), backward)


def add_tokens(x: Tensor, s: Tensor) -> Tensor:
    """Add per-row s[..., d] to x[..., L, d], broadcast over the token axis."""
    if s.shape != x.shape[:-2] + x.shape[-1:]:
        raise ShapeError(f"add_tokens: shift {s.shape} does not fit {x.shape}")
    return _emit(x.data + s.data[..., None, :], (x, s), lambda g: (g, g.sum(axis=-2)))


# ---------------------------------------------------------------------------
# Matrix product


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Supported forms: 2-D x 2-D, batched x 2-D (weight application), and
    batched x batched with identical leading extents. No other broadcasting.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ for {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    if b.ndim == 2:
        k, n = b.shape

        def backward(g):
            ga = g @ bd.T
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            return ga, gb

        return _emit(ad @ bd, (a, b), backward)
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: leading extents differ for {a.shape} x {b.shape}")

    def backward(g):
        ga = g @ bd.swapaxes(-1, -2)
        gb = ad.swapaxes(-1, -2) @ g
        return ga, gb

    return _emit(ad @ bd, (a, b), backward)


# ---------------------------------------------------------------------------
# Shape moves


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def swap_last2(a: Tensor) -> Tensor:
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return transpose(a, axes)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def repeat_axis(a: Tensor, axis: int, n: int) -> Tensor:
    """Tile a length-1 axis n times; the gradient sums back over it."""
    if a.shape[axis] != 1:
        raise ShapeError(f"repeat_axis: axis {axis} of {a.shape} must have extent 1")
    return _emit(
        np.repeat(a.data, n, axis=axis), (a,), lambda g: (g.sum(axis=axis, keepdims=True),)
    )


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = list(parts)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis) for i in range(len(parts))
        )

    return _emit(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    full_shape = a.shape

    def backward(g):
        out = np.zeros(full_shape, dtype=g.dtype)
        out[index] = g
        return (out,)

    return _emit(a.data[index], (a,), backward)


# ---------------------------------------------------------------------------
# Reductions


def sum_all(a: Tensor) -> Tensor:
    shape, dt = a.shape, a.dtype
    return _emit(a.data.sum(), (a,), lambda g: (np.full(shape, g, dtype=dt),))


def mean_all(a: Tensor) -> Tensor:
    shape, dt, n = a.shape, a.dtype, a.size
    return _emit(a.data.mean(), (a,), lambda g: (np.full(shape, g / n, dtype=dt),))


# ---------------------------------------------------------------------------
# Nonlinearities


def softmax_rows(x: Tensor) -> Tensor:
    """Row softmax over the last axis, computed with per-row max subtraction."""
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError(f"softmax_rows: need a non-empty last axis, got {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return ((g - (g * y).sum(axis=-1, keepdims=True)) * y,)

    return _emit(y, (x,), backward)


def layer_norm(x: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine part)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return ((g - gm - y * gym) * inv,)

    return _emit(y, (x,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _emit(0.5 * xd * (1.0 + t), (x,), backward)


def silu(x: Tensor) -> Tensor:
    xd = x.data
    sig = 1.0 / (1.0 + np.exp(-xd))

    def backward(g):
        return (g * sig * (1.0 + xd * (1.0 - sig)),)

    return _emit(xd * sig, (x,), backward)


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    """Look up integer rows of a table; the gradient scatter-adds into it."""
    idx = np.asarray(idx, dtype=np.int64)
    tshape, tdtype = table.shape, table.dtype

    def backward(g):
        gt = np.zeros(tshape, dtype=tdtype)
        np.add.at(gt, idx, g)
        return (gt,)

    return _emit(table.data[idx], (table,), backward)


# ---------------------------------------------------------------------------
# Tensor low-rank contractions
#
# Factor shapes: a[N, d_out, R1], b[N, M, R2], c[N, d_in, R1, R2];
# activations h may be [M, d_in], [M, L, d_in] or [B, M, L, d_in].
# The update applied to output stream n is
#   y[n, o] = sum_{m,i,r,s} c[n,i,r,s] h[m,i] b[n,m,s] a[n,o,r].


def _check_tlora_shapes(a: Tensor, b: Tensor, c: Tensor, h: Tensor):
    if a.ndim != 3 or b.ndim != 3 or c.ndim != 4:
        raise ShapeError(
            f"tensor-lora factors must be rank 3/3/4, got {a.shape}/{b.shape}/{c.shape}"
        )
    n, d_out, r1 = a.shape
    nb, m, r2 = b.shape
    nc, d_in, r1c, r2c = c.shape
    if not (n == nb == nc and r1 == r1c and r2 == r2c):
        raise ShapeError(
            f"tensor-lora factor extents disagree: a{a.shape} b{b.shape} c{c.shape}"
        )
    if h.ndim not in (2, 3, 4):
        raise ShapeError(f"tensor-lora activations must be rank 2..4, got {h.shape}")
    if h.shape[-1] != d_in or h.shape[-3 if h.ndim > 2 else -2] != m:
        raise ShapeError(
            f"tensor-lora activations {h.shape} do not match factors "
            f"(expect property extent {m}, feature extent {d_in})"
        )
    return n, m, d_in, d_out, r1, r2


def _h4(h: Tensor) -> tuple[np.ndarray, int]:
    """Normalize activations to [B, M, L, d_in]; returns the original rank."""
    nd = h.ndim
    hd = h.data
    if nd == 2:
        hd = hd[None, :, None, :]
    elif nd == 3:
        hd = hd[None]
    return hd, nd


def _unsqueeze_out(y: np.ndarray, nd: int) -> np.ndarray:
    if nd == 2:
        return y[0, :, 0, :]
    if nd == 3:
        return y[0]
    return y


def _tlora_backward(a, b, c, h, nd):
    ad, bd, cd = a.data, b.data, c.data
    hd, _ = _h4(h)

    def backward(g):
        if nd == 2:
            g = g[None, :, None, :]
        elif nd == 3:
            g = g[None]
        ag = np.einsum("bnto,nor->bntr", g, ad, optimize=True)
        ch = np.einsum("nirs,bmti->bnmtrs", cd, hd, optimize=True)
        bch = np.einsum("nms,bnmtrs->bntr", bd, ch, optimize=True)
        da = np.einsum("bnto,bntr->nor", g, bch, optimize=True)
        db = np.einsum("bntr,bnmtrs->nms", ag, ch, optimize=True)
        dc = np.einsum("bntr,nms,bmti->nirs", ag, bd, hd, optimize=True)
        dh = np.einsum("bntr,nirs,nms->bmti", ag, cd, bd, optimize=True)
        return da, db, dc, _unsqueeze_out(dh, nd)

    return backward


def tensor_lora_3step(a: Tensor, b: Tensor, c: Tensor, h: Tensor) -> Tensor:
    """Apply the factored update in three chained contractions.

    Contracts the input-feature factor with the activations, then the
    property-mixing factor, then the output-feature factor, in that order.
    """
    _check_tlora_shapes(a, b, c, h)
    hd, nd = _h4(h)
    ch = np.einsum("nirs,bmti->bnmtrs", c.data, hd, optimize=True)
    bch = np.einsum("nms,bnmtrs->bntr", b.data, ch, optimize=True)
    y = np.einsum("nor,bntr->bnto", a.data, bch, optimize=True)
    return _emit(_unsqueeze_out(y, nd), (a, b, c, h), _tlora_backward(a, b, c, h, nd))


def tensor_lora_fused(a: Tensor, b: Tensor, c: Tensor, h: Tensor) -> Tensor:
    """Apply the factored update as one contraction over all internal indices."""
    _check_tlora_shapes(a, b, c, h)
    hd, nd = _h4(h)
    y = np.einsum("nirs,bmti,nms,nor->bnto", c.data, hd, b.data, a.data, optimize=True)
    return _emit(_unsqueeze_out(y, nd), (a, b, c, h), _tlora_backward(a, b, c, h, nd))


# ---------------------------------------------------------------------------
# Finite-difference verification hooks


def finite_difference_grad(f: Callable[[], Tensor], param: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the scalar ``f()`` w.r.t. every element of ``param``.

    ``f`` must recompute the loss from current parameter data on each call.
    """
    base = param.data
    g = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    while not it.finished:
        ix = it.multi_index
        orig = base[ix]
        base[ix] = orig + step
        up = f().item()
        base[ix] = orig - step
        down = f().item()
        base[ix] = orig
        g[ix] = (up - down) / (2.0 * step)
        it.iternext()
    return g


def check_gradients(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    step: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-8,
) -> dict[str, float]:
    """Compare tape gradients of ``f()`` against central differences.

    Returns the worst relative error per parameter; raises AssertionError on
    the first parameter whose error exceeds ``rtol`` (with an ``atol`` floor
    for elements where both gradients are numerically zero).
    """
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    worst: dict[str, float] = {}
    for name, p in params.items():
        analytic = tape.grad(p)
        numeric = finite_difference_grad(f, p, step=step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol / rtol)
        rel = np.abs(analytic - numeric) / denom
        worst[name] = float(rel.max()) if rel.size else 0.0
        if worst[name] > rtol:
            ix = np.unravel_index(np.argmax(rel), rel.shape)
            raise AssertionError(
                f"gradient mismatch for {name}{list(ix)}: "
                f"analytic {analytic[ix]:.8e} vs numeric {numeric[ix]:.8e} "
                f"(rel {worst[name]:.3e} > {rtol:.1e})"
            )
    return worst
