"""Low-rank adapters that couple property streams at the K/V projections.

Four structures over an M-stream activation stack h (one row of width d_in
per property):

* separate: one independent rank-R pair per property; the materialized
  update is block-diagonal, so no information crosses streams.
* fused: the streams are concatenated into one vector of width M*d_in and
  a single rank-R map produces all N output streams jointly.
* hybrid: one rank-R1 pair per diagonal (m == n) block and one rank-R2
  pair (R2 < R1) per off-diagonal block, summed per output stream.
* tensor: three shared factors a[N, d_out, R1], b[N, M, R2],
  c[N, d_in, R1, R2] define every block of the update at once.

``apply`` always works in factored form; ``materialize`` reconstructs the
dense (N*d_out) x (M*d_in) block matrix and exists as the test oracle.
All factors start with the b side at zero, so a fresh adapter is exactly
the identity update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

__all__ = [
    "LoraVariant",
    "LoraAdapter",
    "apply",
    "materialize",
    "param_count",
    "flops_count",
    "default_r2",
]

_TAGS = ("separate", "fused", "hybrid", "tensor")


def default_r2(r1: int) -> int:
    return max(1, r1 // 4)


@dataclass(frozen=True)
class LoraVariant:
    """Structure tag plus the ranks that structure carries."""

    tag: str
    r: int = 0
    r1: int = 0
    r2: int = 0

    def __post_init__(self):
        if self.tag not in _TAGS:
            raise ValueError(f"unknown lora variant {self.tag!r}, expected one of {_TAGS}")
        if self.tag in ("separate", "fused"):
            if self.r < 1:
                raise ValueError(f"{self.tag} rank must be >= 1, got {self.r}")
        else:
            if self.r1 < 1 or self.r2 < 1:
                raise ValueError(f"{self.tag} ranks must be >= 1, got ({self.r1}, {self.r2})")
            if self.tag == "hybrid" and not self.r2 < self.r1:
                raise ValueError(
                    f"hybrid off-diagonal rank must be below the diagonal rank, "
                    f"got R2={self.r2} >= R1={self.r1}"
                )

    @staticmethod
    def separate(r: int) -> "LoraVariant":
        return LoraVariant("separate", r=r)

    @staticmethod
    def fused(r: int) -> "LoraVariant":
        return LoraVariant("fused", r=r)

    @staticmethod
    def hybrid(r1: int, r2: int | None = None) -> "LoraVariant":
        return LoraVariant("hybrid", r1=r1, r2=default_r2(r1) if r2 is None else r2)

    @staticmethod
    def tensor(r1: int, r2: int | None = None) -> "LoraVariant":
        return LoraVariant("tensor", r1=r1, r2=r1 if r2 is None else r2)


def _pair_counts(m: int, n: int) -> tuple[int, int]:
    diag = min(m, n)
    return diag, n * m - diag


class LoraAdapter:
    """One adapted projection: factors plus the cheap factored application."""

    def __init__(self, variant: LoraVariant, m: int, d_in: int, d_out: int,
                 factors: dict[str, Tensor], n: int | None = None):
        self.variant = variant
        self.m = m
        self.n = m if n is None else n
        self.d_in = d_in
        self.d_out = d_out
        self.factors = factors
        if variant.tag == "separate" and self.n != self.m:
            raise ShapeError(
                f"separate adapters are per-stream; output count {self.n} "
                f"must equal input count {self.m}"
            )

    @classmethod
    def create(cls, variant: LoraVariant, m: int, d_in: int, d_out: int,
               rng: np.random.Generator, n: int | None = None) -> "LoraAdapter":
        n = m if n is None else n
        if variant.tag == "separate" and n != m:
            raise ShapeError(f"separate adapters require N == M, got N={n}, M={m}")
        factors: dict[str, Tensor] = {}

        def a_init(shape, r):
            lim = 1.0 / math.sqrt(r)
            return Tensor(rng.uniform(-lim, lim, size=shape).astype(np.float32))

        def zeros(shape):
            return Tensor(np.zeros(shape, dtype=np.float32))

        if variant.tag == "separate":
            for i in range(m):
                factors[f"a{i}"] = a_init((d_out, variant.r), variant.r)
                factors[f"b{i}"] = zeros((d_in, variant.r))
        elif variant.tag == "fused":
            factors["a"] = a_init((n * d_out, variant.r), variant.r)
            factors["b"] = zeros((m * d_in, variant.r))
        elif variant.tag == "hybrid":
            for o in range(n):
                for i in range(m):
                    r = variant.r1 if o == i else variant.r2
                    factors[f"a{o}_{i}"] = a_init((d_out, r), r)
                    factors[f"b{o}_{i}"] = zeros((d_in, r))
        else:
            lim_c = 1.0 / math.sqrt(variant.r1 * variant.r2)
            factors["a"] = a_init((n, d_out, variant.r1), variant.r1)
            factors["b"] = zeros((n, m, variant.r2))
            factors["c"] = Tensor(
                rng.uniform(-lim_c, lim_c, size=(n, d_in, variant.r1, variant.r2)).astype(
                    np.float32
                )
            )
        return cls(variant, m, d_in, d_out, factors, n=n)

    # -- application ------------------------------------------------------

    def _check_h(self, h: Tensor):
        if h.ndim not in (2, 3, 4):
            raise ShapeError(f"activations must be rank 2..4, got {h.shape}")
        prop_axis = 0 if h.ndim == 2 else h.ndim - 3
        if h.shape[prop_axis] != self.m or h.shape[-1] != self.d_in:
            raise ShapeError(
                f"activations {h.shape} do not match adapter "
                f"(streams {self.m}, width {self.d_in})"
            )

    def apply(self, h: Tensor, path: str = "fused") -> Tensor:
        """Factored update of an [M, d_in], [M, L, d_in] or [B, M, L, d_in] stack.

        ``path`` selects the contraction order for the tensor structure
        ("fused" or "3step"); the other structures ignore it.
        """
        self._check_h(h)
        nd = h.ndim
        if self.variant.tag == "tensor":
            fn = T.tensor_lora_fused if path == "fused" else T.tensor_lora_3step
            return fn(self.factors["a"], self.factors["b"], self.factors["c"], h)
        if nd == 2:
            h4 = T.reshape(h, (1, self.m, 1, self.d_in))
        elif nd == 3:
            h4 = T.reshape(h, (1,) + h.shape)
        else:
            h4 = h
        bsz, _, l, _ = h4.shape
        if self.variant.tag == "separate":
            parts = []
            for i in range(self.m):
                hm = T.slice_axis(h4, 1, i, i + 1)
                z = T.matmul(hm, self.factors[f"b{i}"])
                parts.append(T.matmul(z, T.transpose(self.factors[f"a{i}"], (1, 0))))
            y4 = T.concat(parts, axis=1)
        elif self.variant.tag == "fused":
            hf = T.reshape(T.transpose(h4, (0, 2, 1, 3)), (bsz, l, self.m * self.d_in))
            z = T.matmul(hf, self.factors["b"])
            y = T.matmul(z, T.transpose(self.factors["a"], (1, 0)))
            y4 = T.transpose(T.reshape(y, (bsz, l, self.n, self.d_out)), (0, 2, 1, 3))
        else:
            rows = []
            for o in range(self.n):
                acc = None
                for i in range(self.m):
                    hm = T.slice_axis(h4, 1, i, i + 1)
                    z = T.matmul(hm, self.factors[f"b{o}_{i}"])
                    dy = T.matmul(z, T.transpose(self.factors[f"a{o}_{i}"], (1, 0)))
                    acc = dy if acc is None else T.add(acc, dy)
                rows.append(acc)
            y4 = T.concat(rows, axis=1)
        if nd == 2:
            return T.reshape(y4, (self.n, self.d_out))
        if nd == 3:
            return T.reshape(y4, (self.n, l, self.d_out))
        return y4

    def param_count(self) -> int:
        return sum(f.size for f in self.factors.values())


def apply(adapter: LoraAdapter, h: Tensor, path: str = "fused") -> Tensor:
    return adapter.apply(h, path=path)


def materialize(adapter: LoraAdapter) -> np.ndarray:
    """Dense (N*d_out) x (M*d_in) block matrix of the update. Test scale only."""
    m, n, d_in, d_out = adapter.m, adapter.n, adapter.d_in, adapter.d_out
    tag = adapter.variant.tag
    f = {k: v.data.astype(np.float64) for k, v in adapter.factors.items()}
    if tag == "fused":
        return f["a"] @ f["b"].T
    out = np.zeros((n * d_out, m * d_in))
    if tag == "separate":
        for i in range(m):
            out[i * d_out:(i + 1) * d_out, i * d_in:(i + 1) * d_in] = f[f"a{i}"] @ f[f"b{i}"].T
    elif tag == "hybrid":
        for o in range(n):
            for i in range(m):
                out[o * d_out:(o + 1) * d_out, i * d_in:(i + 1) * d_in] = (
                    f[f"a{o}_{i}"] @ f[f"b{o}_{i}"].T
                )
    else:
        blocks = np.einsum("nor,nms,nirs->nomi", f["a"], f["b"], f["c"], optimize=True)
        out = blocks.reshape(n * d_out, m * d_in)
    return out


def param_count(variant: LoraVariant, m: int, n: int, d_in: int, d_out: int,
                projections: int = 1) -> int:
    """Exact trainable element count; multiply across adapted projections."""
    if variant.tag == "separate":
        count = m * variant.r * (d_in + d_out)
    elif variant.tag == "fused":
        count = variant.r * (m * d_in + n * d_out)
    elif variant.tag == "hybrid":
        diag, off = _pair_counts(m, n)
        count = (diag * variant.r1 + off * variant.r2) * (d_in + d_out)
    else:
        count = n * d_out * variant.r1 + n * m * variant.r2 + n * d_in * variant.r1 * variant.r2
    return count * projections


def flops_count(variant: LoraVariant, m: int, n: int, d_in: int, d_out: int,
                l_tokens: int, projections: int = 1) -> int:
    """FLOPs of the factored update for L tokens, one multiply-add = 2 FLOPs.

    The tensor structure is costed along its three-contraction path.
    """
    if variant.tag == "separate":
        per_token = m * 2 * variant.r * (d_in + d_out)
    elif variant.tag == "fused":
        per_token = 2 * variant.r * (m * d_in + n * d_out)
    elif variant.tag == "hybrid":
        diag, off = _pair_counts(m, n)
        per_token = 2 * (diag * variant.r1 + off * variant.r2) * (d_in + d_out)
    else:
        per_token = (
            2 * n * m * d_in * variant.r1 * variant.r2
            + 2 * n * m * variant.r1 * variant.r2
            + 2 * n * d_out * variant.r1
        )
    return per_token * l_tokens * projections
