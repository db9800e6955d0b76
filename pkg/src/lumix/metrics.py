"""Quality, consistency, and cost metrics for property stacks.

Edge alignment follows the boundary-matching protocol: Sobel magnitudes,
per-map 90th-percentile binarization, then an F1 where edge pixels pair
one-to-one within city-block distance 1 (a single pixel of dilation
tolerance). Plain set-intersection scoring was measured too loose against
the uniform-noise baseline and is not used.

The cost report reproduces the parameter/FLOPs accounting table: each cell
delegates to the closed-form counters. The attention column is stated
per property; cross-intrinsic rows report M times the per-property vanilla
cost (its score/value work grows by exactly that factor), and
query-broadcast rows report their own per-property average, which is lower
than vanilla's because the query projection runs once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .attention import AttentionConfig, attention_flops
from .lora import LoraVariant, flops_count, param_count

__all__ = [
    "lambertian_residual",
    "sobel_magnitude",
    "edge_map",
    "edge_alignment",
    "AlignmentScore",
    "alignment_score",
    "rmse",
    "ssim",
    "CostRow",
    "cost_report",
    "cost_report_tsv",
    "DEFAULT_RANKS",
]

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def _check_same_shape(*arrays):
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def lambertian_residual(color, albedo, irradiance) -> float:
    """Mean absolute violation of color == albedo * irradiance."""
    color, albedo, irradiance = (np.asarray(x, dtype=np.float64)
                                 for x in (color, albedo, irradiance))
    _check_same_shape(color, albedo, irradiance)
    return float(np.abs(color - albedo * irradiance).mean())


# ---------------------------------------------------------------------------
# edge alignment


def _gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img.mean(axis=-1)
    if img.ndim == 2:
        return img
    raise ValueError(f"expected [H, W] or [H, W, C], got {img.shape}")


def sobel_magnitude(img) -> np.ndarray:
    g = _gray(img)
    gx = ndimage.convolve(g, _SOBEL_X, mode="nearest")
    gy = ndimage.convolve(g, _SOBEL_X.T, mode="nearest")
    return np.hypot(gx, gy)


def edge_map(img) -> np.ndarray:
    """Pixels whose Sobel magnitude exceeds the map's own 90th percentile."""
    mag = sobel_magnitude(img)
    return mag > np.percentile(mag, 90)


_NEIGHBORHOOD = ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1))


def edge_alignment(map_a, map_b) -> float:
    """One-to-one matched edge F1 with one pixel of tolerance, in [0, 1].

    Identical maps score 1; if either map has no edge pixels the score is 0
    (identical blank maps still score 1 via the first rule).
    """
    a, b = _gray(map_a), _gray(map_b)
    _check_same_shape(a, b)
    if np.array_equal(a, b):
        return 1.0
    ea, eb = edge_map(a), edge_map(b)
    na, nb = int(ea.sum()), int(eb.sum())
    if na == 0 or nb == 0:
        return 0.0
    where_b: dict[tuple[int, int], list[int]] = {}
    for j, (y, x) in enumerate(zip(*np.nonzero(eb))):
        where_b.setdefault((int(y), int(x)), []).append(j)
    rows, cols = [], []
    for i, (y, x) in enumerate(zip(*np.nonzero(ea))):
        for dy, dx in _NEIGHBORHOOD:
            for j in where_b.get((int(y) + dy, int(x) + dx), ()):
                rows.append(i)
                cols.append(j)
    if not rows:
        return 0.0
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(na, nb))
    matched = int((maximum_bipartite_matching(graph, perm_type="column") != -1).sum())
    precision = matched / nb
    recall = matched / na
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class AlignmentScore:
    per_pair: dict[str, float]  # non-color property name -> F1 against color
    mean: float


def alignment_score(maps: dict[str, np.ndarray], color_key: str = "color") -> AlignmentScore:
    """Edge agreement of every non-color map against the color map."""
    if color_key not in maps:
        raise ValueError(f"no {color_key!r} map among {sorted(maps)}")
    pairs = {k: edge_alignment(maps[color_key], v) for k, v in maps.items() if k != color_key}
    if not pairs:
        raise ValueError("need at least one non-color map")
    return AlignmentScore(pairs, float(np.mean(list(pairs.values()))))


# ---------------------------------------------------------------------------
# rmse / ssim


def rmse(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean structural similarity, 11x11 Gaussian window, valid region only."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise ValueError(f"images must be at least 11x11, got {a.shape}")
    w = _gaussian_window()
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    half = 5
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx = ndimage.correlate(x, w, mode="constant")[half:-half, half:-half]
        my = ndimage.correlate(y, w, mode="constant")[half:-half, half:-half]
        mxx = ndimage.correlate(x * x, w, mode="constant")[half:-half, half:-half]
        myy = ndimage.correlate(y * y, w, mode="constant")[half:-half, half:-half]
        mxy = ndimage.correlate(x * y, w, mode="constant")[half:-half, half:-half]
        vx = mxx - mx * mx
        vy = myy - my * my
        cxy = mxy - mx * my
        num = (2.0 * mx * my + c1) * (2.0 * cxy + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        vals.append(num / den)
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# cost report


DEFAULT_RANKS = {
    "separate": LoraVariant.separate(48),
    "fused": LoraVariant.fused(48),
    "hybrid": LoraVariant.hybrid(48, 12),
    "tensor": LoraVariant.tensor(8, 8),
}

_ATTENTION_ORDER = ("vanilla", "cross_intrinsic", "query_broadcast")
_LORA_ORDER = ("separate", "fused", "hybrid", "tensor")


@dataclass(frozen=True)
class CostRow:
    attention: str
    lora: str
    params: int        # trainable adapter elements per block (K and V)
    lora_flops: int    # adapter FLOPs per block
    attn_flops: float  # attention FLOPs per block, stated per property


def cost_report(d: int = 3072, l_tokens: int = 1536, m: int = 5, heads: int = 16,
                ranks: dict[str, LoraVariant] | None = None) -> list[CostRow]:
    ranks = dict(DEFAULT_RANKS if ranks is None else ranks)
    rows = []
    for attn in _ATTENTION_ORDER:
        cfg = AttentionConfig(d=d, h=heads, m=m, variant=attn)
        if attn == "cross_intrinsic":
            # score/value work is M x vanilla's, so the per-property figure
            # equals the full vanilla total
            attn_cell = float(attention_flops(AttentionConfig(d, heads, m), l_tokens))
        else:
            attn_cell = attention_flops(cfg, l_tokens) / m
        for tag in _LORA_ORDER:
            v = ranks[tag]
            rows.append(CostRow(
                attention=attn,
                lora=tag,
                params=param_count(v, m, m, d, d, projections=2),
                lora_flops=flops_count(v, m, m, d, d, l_tokens, projections=2),
                attn_flops=attn_cell,
            ))
    return rows


def cost_report_tsv(rows: list[CostRow]) -> str:
    """Four-significant-digit TSV, parameters in millions and FLOPs in G."""
    lines = ["attention\tlora\tparams_m\tlora_gflops\tattn_gflops"]
    for r in rows:
        lines.append(
            f"{r.attention}\t{r.lora}\t{r.params / 1e6:.4g}"
            f"\t{r.lora_flops / 1e9:.4g}\t{r.attn_flops / 1e9:.4g}"
        )
    return "\n".join(lines) + "\n"
