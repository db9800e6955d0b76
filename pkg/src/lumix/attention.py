"""Multi-head attention over a stack of M property streams.

Three routing regimes:

* vanilla: each stream runs ordinary self-attention with its own Q, K, V.
* cross_intrinsic: K and V from all streams are concatenated along the
  token axis, so every stream attends over M*L keys with one joint softmax.
* query_broadcast: the color stream's query matrix is shared by every
  stream, which keeps its own K and V. The Q projection is computed once,
  on the color stream, then expanded.

Base projections are shared across streams; per-stream differences come
only from the inputs and from optional low-rank adapters added to K and V
(and to Q for the tuning ablation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .lora import LoraAdapter
from .tensor import ShapeError, Tensor

__all__ = ["VARIANTS", "AttentionConfig", "AttentionBlockWeights", "forward", "attention_flops"]

VARIANTS = ("vanilla", "cross_intrinsic", "query_broadcast")


@dataclass(frozen=True)
class AttentionConfig:
    d: int
    h: int
    m: int
    color_index: int = 0
    variant: str = "vanilla"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown attention variant {self.variant!r}")
        if self.d % self.h != 0:
            raise ValueError(f"width {self.d} not divisible by {self.h} heads")
        if not 0 <= self.color_index < self.m:
            raise ValueError(f"color index {self.color_index} outside 0..{self.m - 1}")

    @property
    def d_head(self) -> int:
        return self.d // self.h


class AttentionBlockWeights:
    """Shared projections plus optional adapters for one attention block."""

    def __init__(self, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
                 adapter_k: LoraAdapter | None = None,
                 adapter_v: LoraAdapter | None = None,
                 adapter_q: LoraAdapter | None = None):
        self.wq, self.wk, self.wv, self.wo = wq, wk, wv, wo
        self.adapter_k = adapter_k
        self.adapter_v = adapter_v
        self.adapter_q = adapter_q

    @classmethod
    def create(cls, d: int, rng: np.random.Generator) -> "AttentionBlockWeights":
        lim = 1.0 / math.sqrt(d)

        def w():
            return Tensor(rng.uniform(-lim, lim, size=(d, d)).astype(np.float32))

        return cls(w(), w(), w(), w())

    def base_tensors(self) -> dict[str, Tensor]:
        return {"wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo}


def _split_heads(x: Tensor, h: int) -> Tensor:
    """[B, M, L, d] -> [B, M, H, L, d/H]."""
    b, m, l, d = x.shape
    return T.transpose(T.reshape(x, (b, m, l, h, d // h)), (0, 1, 3, 2, 4))


def _merge_heads(x: Tensor) -> Tensor:
    b, m, h, l, dh = x.shape
    return T.reshape(T.transpose(x, (0, 1, 3, 2, 4)), (b, m, l, h * dh))


def forward(cfg: AttentionConfig, w: AttentionBlockWeights, x: Tensor,
            return_weights: bool = False):
    """Attend over an [M, L, d] or [B, M, L, d] stack; same rank out.

    With ``return_weights`` the post-softmax attention matrix is returned
    alongside the output (for inspection; it stays on the tape either way).
    """
    nd = x.ndim
    if nd == 3:
        x4 = T.reshape(x, (1,) + x.shape)
    elif nd == 4:
        x4 = x
    else:
        raise ShapeError(f"attention input must be rank 3 or 4, got {x.shape}")
    b, m, l, d = x4.shape
    if m != cfg.m or d != cfg.d:
        raise ShapeError(
            f"input {x4.shape} does not match config (streams {cfg.m}, width {cfg.d})"
        )
    for name in ("adapter_k", "adapter_v", "adapter_q"):
        ad = getattr(w, name)
        if ad is not None and (ad.m != cfg.m or ad.n != cfg.m or ad.d_in != d or ad.d_out != d):
            raise ShapeError(
                f"{name} is ({ad.m}->{ad.n}, {ad.d_in}x{ad.d_out}), "
                f"block needs ({cfg.m}->{cfg.m}, {d}x{d})"
            )

    k = T.matmul(x4, w.wk)
    v = T.matmul(x4, w.wv)
    if w.adapter_k is not None:
        k = T.add(k, w.adapter_k.apply(x4))
    if w.adapter_v is not None:
        v = T.add(v, w.adapter_v.apply(x4))

    if cfg.variant == "query_broadcast":
        xc = T.slice_axis(x4, 1, cfg.color_index, cfg.color_index + 1)
        q = T.matmul(xc, w.wq)
        if w.adapter_q is not None:
            dq = w.adapter_q.apply(x4)
            q = T.add(q, T.slice_axis(dq, 1, cfg.color_index, cfg.color_index + 1))
        q = T.repeat_axis(q, 1, m)
    else:
        q = T.matmul(x4, w.wq)
        if w.adapter_q is not None:
            q = T.add(q, w.adapter_q.apply(x4))

    qh = _split_heads(q, cfg.h)
    kh = _split_heads(k, cfg.h)
    vh = _split_heads(v, cfg.h)

    if cfg.variant == "cross_intrinsic":
        # keys/values from every stream, concatenated along the token axis
        kh = T.reshape(T.transpose(kh, (0, 2, 1, 3, 4)), (b, 1, cfg.h, m * l, cfg.d_head))
        vh = T.reshape(T.transpose(vh, (0, 2, 1, 3, 4)), (b, 1, cfg.h, m * l, cfg.d_head))
        kh = T.repeat_axis(kh, 1, m)
        vh = T.repeat_axis(vh, 1, m)

    scores = T.scale(T.matmul(qh, T.swap_last2(kh)), 1.0 / math.sqrt(cfg.d_head))
    weights = T.softmax_rows(scores)
    ctx = T.matmul(weights, vh)
    out = T.matmul(_merge_heads(ctx), w.wo)
    if nd == 3:
        out = T.reshape(out, (m, l, d))
    if return_weights:
        return out, weights
    return out


def attention_flops(cfg: AttentionConfig, l_tokens: int) -> int:
    """Per-block FLOPs across all M streams, one multiply-add = 2 FLOPs.

    Counts the Q/K/V/output projections and the score and value matmuls;
    softmax itself is excluded from the tally.
    """
    m, d, l = cfg.m, cfg.d, l_tokens
    if cfg.variant == "vanilla":
        return m * (8 * l * d * d + 4 * l * l * d)
    if cfg.variant == "cross_intrinsic":
        return m * (8 * l * d * d + 4 * m * l * l * d)
    # query_broadcast: K and V per stream plus one Q projection, then
    # per-stream output projections and per-stream score/value products
    return (2 * m + 1) * 2 * l * d * d + m * 2 * l * d * d + m * 4 * l * l * d
