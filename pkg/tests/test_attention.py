"""Attention regimes against dense per-stream references and counters."""

import math

import numpy as np
import pytest

from lumix import attention as A
from lumix import lora as L
from lumix import tensor as T
from lumix.tensor import ShapeError, Tensor


def rng(seed=0):
    return np.random.default_rng(seed)


def f64_weights(d, seed=0, adapter_k=None, adapter_v=None, adapter_q=None):
    r = rng(seed)
    lim = 1.0 / math.sqrt(d)
    mk = lambda: Tensor(r.uniform(-lim, lim, size=(d, d)))
    return A.AttentionBlockWeights(mk(), mk(), mk(), mk(),
                                   adapter_k=adapter_k, adapter_v=adapter_v,
                                   adapter_q=adapter_q)


class MacCounter:
    def __init__(self):
        self.macs = 0

    def matmul(self, a, b):
        self.macs += a.shape[0] * a.shape[1] * b.shape[1]
        return a @ b


def np_softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def dense_reference(variant, x, w, heads, color=0, counter=None):
    """Per-stream, per-head loops with explicit column slicing.

    Adapters, when present, act through their materialized block matrices
    applied token by token.
    """
    cnt = counter or MacCounter()
    m, l, d = x.shape
    dh = d // heads
    wq, wk, wv, wo = (t.data for t in (w.wq, w.wk, w.wv, w.wo))

    def adapter_delta(ad):
        if ad is None:
            return np.zeros((m, l, d))
        full = L.materialize(ad)
        out = np.zeros((m, l, d))
        for t in range(l):
            out[:, t, :] = (full @ x[:, t, :].reshape(m * d)).reshape(m, d)
        return out

    ks = [cnt.matmul(x[i], wk) for i in range(m)] + adapter_delta(w.adapter_k)
    vs = [cnt.matmul(x[i], wv) for i in range(m)] + adapter_delta(w.adapter_v)
    dq = adapter_delta(w.adapter_q)
    if variant == "query_broadcast":
        qc = cnt.matmul(x[color], wq) + dq[color]
        qs = [qc] * m
    else:
        qs = [cnt.matmul(x[i], wq) + dq[i] for i in range(m)]
    if variant == "cross_intrinsic":
        k_all = np.concatenate(list(ks), axis=0)
        v_all = np.concatenate(list(vs), axis=0)
    outs = []
    for i in range(m):
        k = k_all if variant == "cross_intrinsic" else ks[i]
        v = v_all if variant == "cross_intrinsic" else vs[i]
        merged = []
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            s = cnt.matmul(qs[i][:, sl], k[:, sl].T) / math.sqrt(dh)
            merged.append(cnt.matmul(np_softmax(s), v[:, sl]))
        outs.append(cnt.matmul(np.concatenate(merged, axis=1), wo))
    return np.stack(outs), cnt.macs


# ---------------------------------------------------------------------------
# forward correctness


@pytest.mark.parametrize("variant", A.VARIANTS)
def test_forward_matches_dense_reference(variant):
    cfg = A.AttentionConfig(d=8, h=2, m=3, color_index=1, variant=variant)
    w = f64_weights(8, seed=2)
    x = rng(3).normal(size=(3, 4, 8))
    ref, _ = dense_reference(variant, x, w, heads=2, color=1)
    got = A.forward(cfg, w, Tensor(x)).data
    np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("variant", A.VARIANTS)
def test_forward_with_adapters_matches_reference(variant):
    r = rng(5)
    ad_k = L.LoraAdapter.create(L.LoraVariant.tensor(2, 2), 3, 8, 8, r)
    ad_v = L.LoraAdapter.create(L.LoraVariant.separate(2), 3, 8, 8, r)
    for f in (ad_k, ad_v):
        for key in list(f.factors):
            f.factors[key] = Tensor(r.normal(size=f.factors[key].shape) * 0.3)
    cfg = A.AttentionConfig(d=8, h=2, m=3, variant=variant)
    w = f64_weights(8, seed=6, adapter_k=ad_k, adapter_v=ad_v)
    x = rng(7).normal(size=(3, 4, 8))
    ref, _ = dense_reference(variant, x, w, heads=2)
    got = A.forward(cfg, w, Tensor(x)).data
    np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-11)


def test_batched_input_matches_per_scene():
    cfg = A.AttentionConfig(d=8, h=2, m=2, variant="query_broadcast")
    w = f64_weights(8, seed=8)
    xb = rng(9).normal(size=(3, 2, 5, 8))
    got = A.forward(cfg, w, Tensor(xb)).data
    for b in range(3):
        single = A.forward(cfg, w, Tensor(xb[b])).data
        np.testing.assert_allclose(got[b], single, rtol=1e-12, atol=1e-14)


# ---------------------------------------------------------------------------
# degeneracies and symmetries


def test_single_stream_broadcast_equals_vanilla_bitwise():
    w = f64_weights(8, seed=10)
    x = Tensor(rng(11).normal(size=(1, 6, 8)))
    out_v = A.forward(A.AttentionConfig(8, 2, 1, variant="vanilla"), w, x).data
    out_q = A.forward(A.AttentionConfig(8, 2, 1, variant="query_broadcast"), w, x).data
    np.testing.assert_array_equal(out_v, out_q)


def test_single_stream_cross_equals_vanilla():
    w = f64_weights(8, seed=12)
    x = Tensor(rng(13).normal(size=(1, 6, 8)))
    out_v = A.forward(A.AttentionConfig(8, 2, 1, variant="vanilla"), w, x).data
    out_c = A.forward(A.AttentionConfig(8, 2, 1, variant="cross_intrinsic"), w, x).data
    np.testing.assert_allclose(out_c, out_v, rtol=1e-12, atol=1e-14)


def test_identical_streams_collapse_all_variants():
    w = f64_weights(8, seed=14)
    row = rng(15).normal(size=(4, 8))
    x = Tensor(np.stack([row] * 3))
    outs = {}
    for variant in A.VARIANTS:
        out = A.forward(A.AttentionConfig(8, 2, 3, variant=variant), w, x).data
        for i in range(1, 3):
            np.testing.assert_allclose(out[i], out[0], rtol=1e-12, atol=1e-13)
        outs[variant] = out
    np.testing.assert_array_equal(outs["vanilla"], outs["query_broadcast"])
    np.testing.assert_allclose(outs["cross_intrinsic"], outs["vanilla"],
                               rtol=1e-12, atol=1e-13)


def test_broadcast_weights_identical_across_streams_for_identical_inputs():
    cfg = A.AttentionConfig(d=8, h=2, m=3, variant="query_broadcast")
    w = f64_weights(8, seed=16)
    row = rng(17).normal(size=(5, 8))
    x = Tensor(np.stack([row] * 3))
    _, weights = A.forward(cfg, w, x, return_weights=True)
    wd = weights.data[0]  # [M, H, L, L]
    for i in range(1, 3):
        np.testing.assert_allclose(wd[i], wd[0], rtol=1e-12, atol=1e-14)


def test_broadcast_equivariant_to_non_color_permutation():
    m, d = 4, 8
    r = rng(18)
    ad = L.LoraAdapter.create(L.LoraVariant.separate(2), m, d, d, r)
    for key in list(ad.factors):
        ad.factors[key] = Tensor(r.normal(size=ad.factors[key].shape))
    cfg = A.AttentionConfig(d=d, h=2, m=m, color_index=0, variant="query_broadcast")
    w = f64_weights(d, seed=19, adapter_k=ad)
    x = r.normal(size=(m, 5, d))
    perm = [0, 3, 1, 2]  # color stays put
    ad_p = L.LoraAdapter.create(L.LoraVariant.separate(2), m, d, d, rng(0))
    for i in range(m):
        ad_p.factors[f"a{i}"] = ad.factors[f"a{perm[i]}"]
        ad_p.factors[f"b{i}"] = ad.factors[f"b{perm[i]}"]
    w_p = A.AttentionBlockWeights(w.wq, w.wk, w.wv, w.wo, adapter_k=ad_p)
    out = A.forward(cfg, w, Tensor(x)).data
    out_p = A.forward(cfg, w_p, Tensor(x[perm])).data
    np.testing.assert_array_equal(out_p, out[perm])


# ---------------------------------------------------------------------------
# gradients


@pytest.mark.parametrize("variant", A.VARIANTS)
def test_gradients_finite_difference(variant):
    r = rng(20)
    ad_k = L.LoraAdapter.create(L.LoraVariant.tensor(2, 1), 2, 4, 4, r)
    for key in list(ad_k.factors):
        ad_k.factors[key] = Tensor(r.normal(size=ad_k.factors[key].shape) * 0.4)
    cfg = A.AttentionConfig(d=4, h=2, m=2, variant=variant)
    w = f64_weights(4, seed=21, adapter_k=ad_k)
    x = Tensor(r.normal(size=(2, 3, 4)))
    params = dict(w.base_tensors())
    params.update({f"lora_{k}": f for k, f in ad_k.factors.items()})
    params["x"] = x
    worst = T.check_gradients(
        lambda: T.mean_all(T.mul(A.forward(cfg, w, x), A.forward(cfg, w, x))),
        params, rtol=1e-4,
    )
    assert max(worst.values()) <= 1e-4


# ---------------------------------------------------------------------------
# FLOPs accounting


def test_vanilla_flops_reference_width():
    cfg = A.AttentionConfig(d=3072, h=16, m=1, variant="vanilla")
    per_property = A.attention_flops(cfg, 1536)
    assert per_property == 8 * 1536 * 3072**2 + 4 * 1536**2 * 3072
    assert abs(per_property / 1e9 - 145.1) / 145.1 < 0.01


def test_cross_score_value_flops_are_m_times_vanilla():
    for m in (1, 2, 3, 5, 7):
        for d, h, l in ((8, 2, 4), (16, 4, 10), (3072, 16, 1536)):
            van = A.attention_flops(A.AttentionConfig(d, h, m, variant="vanilla"), l)
            cross = A.attention_flops(
                A.AttentionConfig(d, h, m, variant="cross_intrinsic"), l)
            proj = m * 8 * l * d * d
            assert cross - proj == m * (van - proj)


@pytest.mark.parametrize("variant", A.VARIANTS)
def test_flops_match_instrumented_execution(variant):
    for m, l, d, h in ((1, 1, 1, 1), (2, 3, 4, 2), (3, 2, 6, 3)):
        cfg = A.AttentionConfig(d=d, h=h, m=m, variant=variant)
        w = f64_weights(d, seed=23)
        x = rng(24).normal(size=(m, l, d))
        _, macs = dense_reference(variant, x, w, heads=h)
        assert 2 * macs == A.attention_flops(cfg, l)


def test_hand_countable_minimal_tally():
    cfg = A.AttentionConfig(d=1, h=1, m=1, variant="vanilla")
    # four projections of one token in one dimension: 4 MACs; one score,
    # one value product: 2 MACs; total 6 MACs = 12 FLOPs
    assert A.attention_flops(cfg, 1) == 12


# ---------------------------------------------------------------------------
# validation


def test_config_validation():
    with pytest.raises(ValueError):
        A.AttentionConfig(d=8, h=3, m=2)
    with pytest.raises(ValueError):
        A.AttentionConfig(d=8, h=2, m=2, color_index=2)
    with pytest.raises(ValueError):
        A.AttentionConfig(d=8, h=2, m=2, variant="dense")


def test_shape_mismatch_rejected():
    cfg = A.AttentionConfig(d=8, h=2, m=3)
    w = f64_weights(8)
    with pytest.raises(ShapeError):
        A.forward(cfg, w, Tensor(np.zeros((2, 4, 8))))
    with pytest.raises(ShapeError):
        A.forward(cfg, w, Tensor(np.zeros((3, 4, 6))))
    ad = L.LoraAdapter.create(L.LoraVariant.separate(1), 2, 8, 8, rng(0))
    w_bad = A.AttentionBlockWeights(w.wq, w.wk, w.wv, w.wo, adapter_k=ad)
    with pytest.raises(ShapeError):
        A.forward(cfg, w_bad, Tensor(np.zeros((3, 4, 8))))
