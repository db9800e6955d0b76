"""Adapter structures: materialization oracle, counting, linearity, gradients."""

import numpy as np
import pytest

from lumix import lora as L
from lumix import tensor as T
from lumix.tensor import ShapeError, Tensor


def rng(seed=0):
    return np.random.default_rng(seed)


def make(variant, m, d_in, d_out, seed=0, n=None):
    return L.LoraAdapter.create(variant, m, d_in, d_out, rng(seed), n=n)


def randomize(ad, seed):
    r = rng(seed)
    for k, f in list(ad.factors.items()):
        ad.factors[k] = Tensor(r.normal(size=f.shape))
    return ad


ALL_VARIANTS = [
    L.LoraVariant.separate(3),
    L.LoraVariant.fused(3),
    L.LoraVariant.hybrid(3, 1),
    L.LoraVariant.tensor(2, 2),
]


# ---------------------------------------------------------------------------
# construction and validation


def test_variant_validation():
    with pytest.raises(ValueError):
        L.LoraVariant.separate(0)
    with pytest.raises(ValueError):
        L.LoraVariant.hybrid(4, 4)  # off-diagonal rank must be strictly lower
    with pytest.raises(ValueError):
        L.LoraVariant.hybrid(4, 5)
    with pytest.raises(ValueError):
        L.LoraVariant("diagonal", r=1)
    assert L.LoraVariant.hybrid(8).r2 == 2  # default R2 = max(1, R1/4)
    assert L.LoraVariant.hybrid(2).r2 == 1


def test_fresh_adapter_is_identity_update():
    h = Tensor(rng(1).normal(size=(3, 5)))
    for v in ALL_VARIANTS:
        ad = make(v, 3, 5, 4)
        y = ad.apply(h)
        assert y.shape == (3, 4)
        np.testing.assert_array_equal(y.data, 0.0)


def test_separate_requires_square_stream_count():
    with pytest.raises(ShapeError):
        make(L.LoraVariant.separate(2), 3, 4, 4, n=2)


# ---------------------------------------------------------------------------
# frozen small example


def test_separate_axis_selector_example():
    # Rank-1 factors picking out one coordinate per stream:
    # delta^(0) = [1,0]^T [1,0] keeps feature 0, delta^(1) keeps feature 1.
    ad = make(L.LoraVariant.separate(1), 2, 2, 2)
    ad.factors["a0"] = Tensor(np.array([[1.0], [0.0]]))
    ad.factors["b0"] = Tensor(np.array([[1.0], [0.0]]))
    ad.factors["a1"] = Tensor(np.array([[0.0], [1.0]]))
    ad.factors["b1"] = Tensor(np.array([[0.0], [1.0]]))
    h = Tensor(np.array([[3.0, 4.0], [5.0, 6.0]]))
    np.testing.assert_allclose(ad.apply(h).data, [[3.0, 0.0], [0.0, 6.0]])


# ---------------------------------------------------------------------------
# apply == materialize . concat, 200 random configs


def test_apply_matches_materialized_block_matrix():
    r = rng(42)
    tags = ["separate", "fused", "hybrid", "tensor"]
    for trial in range(200):
        tag = tags[trial % 4]
        m = int(r.integers(1, 6))
        n = m if tag == "separate" else int(r.integers(1, 6))
        d_in = int(r.integers(1, 17))
        d_out = int(r.integers(1, 17))
        if tag in ("separate", "fused"):
            v = L.LoraVariant(tag, r=int(r.integers(1, 5)))
        elif tag == "hybrid":
            r1 = int(r.integers(2, 5))
            v = L.LoraVariant(tag, r1=r1, r2=int(r.integers(1, r1)))
        else:
            v = L.LoraVariant(tag, r1=int(r.integers(1, 5)), r2=int(r.integers(1, 5)))
        ad = randomize(make(v, m, d_in, d_out, n=n), trial)
        h = r.normal(size=(m, d_in))
        ref = (L.materialize(ad) @ h.reshape(m * d_in)).reshape(n, d_out)
        got = ad.apply(Tensor(h)).data
        np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-12)


def test_tensor_paths_agree_through_adapter():
    ad = randomize(make(L.LoraVariant.tensor(3, 2), 4, 6, 5), 7)
    h = Tensor(rng(8).normal(size=(4, 9, 6)))
    y_fused = ad.apply(h, path="fused").data
    y_3step = ad.apply(h, path="3step").data
    np.testing.assert_allclose(y_fused, y_3step, rtol=1e-11, atol=1e-13)


# ---------------------------------------------------------------------------
# materialized structure


def test_separate_materialization_block_diagonal():
    ad = randomize(make(L.LoraVariant.separate(2), 3, 4, 5), 3)
    full = L.materialize(ad)
    assert full.shape == (15, 12)
    for o in range(3):
        for i in range(3):
            block = full[o * 5:(o + 1) * 5, i * 4:(i + 1) * 4]
            if o == i:
                np.testing.assert_allclose(
                    block, ad.factors[f"a{o}"].data @ ad.factors[f"b{i}"].data.T
                )
            else:
                np.testing.assert_array_equal(block, 0.0)


def row_reduce_rank(mat, tol=1e-9):
    """Rank by Gaussian elimination with partial pivoting."""
    a = np.array(mat, dtype=np.float64)
    rows, cols = a.shape
    rank = 0
    for col in range(cols):
        if rank == rows:
            break
        pivot = rank + np.argmax(np.abs(a[rank:, col]))
        if abs(a[pivot, col]) <= tol:
            continue
        a[[rank, pivot]] = a[[pivot, rank]]
        a[rank] /= a[rank, col]
        for rr in range(rows):
            if rr != rank:
                a[rr] -= a[rr, col] * a[rank]
        rank += 1
    return rank


def test_fused_materialization_rank_bounded():
    v = L.LoraVariant.fused(2)
    ad = randomize(make(v, 3, 4, 4), 5)
    assert row_reduce_rank(L.materialize(ad)) <= 2


def test_tensor_materialization_loop_oracle():
    ad = randomize(make(L.LoraVariant.tensor(1, 1), 2, 3, 3), 11)
    a, b, c = (ad.factors[k].data for k in "abc")
    full = L.materialize(ad)
    for i in range(2):          # output stream
        for j in range(3):      # output feature
            for k in range(2):  # input stream
                for l in range(3):  # input feature
                    s = 0.0
                    for a1 in range(1):
                        for a2 in range(1):
                            s += a[i, j, a1] * b[i, k, a2] * c[i, l, a1, a2]
                    assert full[i * 3 + j, k * 3 + l] == pytest.approx(s, rel=1e-12)


# ---------------------------------------------------------------------------
# parameter counting


def test_param_count_equals_enumeration():
    r = rng(21)
    for trial in range(40):
        tag = ["separate", "fused", "hybrid", "tensor"][trial % 4]
        m = int(r.integers(1, 6))
        n = m if tag == "separate" else int(r.integers(1, 6))
        d_in, d_out = int(r.integers(1, 9)), int(r.integers(1, 9))
        if tag in ("separate", "fused"):
            v = L.LoraVariant(tag, r=int(r.integers(1, 5)))
        elif tag == "hybrid":
            r1 = int(r.integers(2, 5))
            v = L.LoraVariant(tag, r1=r1, r2=int(r.integers(1, r1)))
        else:
            v = L.LoraVariant(tag, r1=int(r.integers(1, 5)), r2=int(r.integers(1, 5)))
        ad = make(v, m, d_in, d_out, n=n)
        assert L.param_count(v, m, n, d_in, d_out) == ad.param_count()


def test_param_count_reference_configs():
    # separate, 5 streams, width 3072, rank 48, both adapted projections
    v = L.LoraVariant.separate(48)
    assert L.param_count(v, 5, 5, 3072, 3072, projections=2) == 2_949_120
    # tensor, 5 streams, width 3072, ranks 8x8, one projection
    vt = L.LoraVariant.tensor(8, 8)
    assert L.param_count(vt, 5, 5, 3072, 3072) == 122_880 + 200 + 983_040 == 1_106_120
    # minimal case
    assert L.param_count(L.LoraVariant.separate(1), 1, 1, 1, 1) == 2


def test_hybrid_param_count_doubles_separate_at_quarter_rank():
    # 5 diagonal rank-48 pairs plus 20 off-diagonal rank-12 pairs carry
    # exactly twice the elements of 5 rank-48 pairs.
    sep = L.param_count(L.LoraVariant.separate(48), 5, 5, 3072, 3072)
    hyb = L.param_count(L.LoraVariant.hybrid(48, 12), 5, 5, 3072, 3072)
    assert hyb == 2 * sep


def test_tensor_param_growth_quadratic_coefficient_is_r2():
    d, r1, r2 = 16, 3, 5
    ms = np.arange(1, 9)
    counts = [L.param_count(L.LoraVariant.tensor(r1, r2), m, m, d, d) for m in ms]
    coeffs = np.polyfit(ms, counts, 2)
    assert abs(coeffs[0] - r2) < 1e-8
    residual = np.polyval(coeffs, ms) - counts
    np.testing.assert_allclose(residual, 0.0, atol=1e-7)


# ---------------------------------------------------------------------------
# FLOPs


def test_separate_flops_reference_config():
    v = L.LoraVariant.separate(48)
    flops = L.flops_count(v, 5, 5, 3072, 3072, l_tokens=1536, projections=2)
    assert flops == 9_059_696_640
    assert abs(flops / 1e9 - 9.1) / 9.1 < 0.01


def test_hybrid_flops_reference_config():
    v = L.LoraVariant.hybrid(48, 12)
    flops = L.flops_count(v, 5, 5, 3072, 3072, l_tokens=1536, projections=2)
    assert abs(flops / 1e9 - 18.1) / 18.1 < 0.01


def test_zero_tokens_zero_flops():
    for v in ALL_VARIANTS:
        assert L.flops_count(v, 3, 3, 8, 8, l_tokens=0) == 0


def instrumented_tensor_3step(a, b, c, h):
    """Execute the three contractions with explicit loops, counting multiply-adds."""
    n, d_out, r1 = a.shape
    _, m, r2 = b.shape
    d_in = c.shape[1]
    l = h.shape[1]
    macs = 0
    ch = np.zeros((n, m, l, r1, r2))
    for ni in range(n):
        for mi in range(m):
            for t in range(l):
                for r in range(r1):
                    for s in range(r2):
                        acc = 0.0
                        for i in range(d_in):
                            acc += c[ni, i, r, s] * h[mi, t, i]
                            macs += 1
                        ch[ni, mi, t, r, s] = acc
    bch = np.zeros((n, l, r1))
    for ni in range(n):
        for t in range(l):
            for r in range(r1):
                acc = 0.0
                for mi in range(m):
                    for s in range(r2):
                        acc += b[ni, mi, s] * ch[ni, mi, t, r, s]
                        macs += 1
                bch[ni, t, r] = acc
    y = np.zeros((n, l, d_out))
    for ni in range(n):
        for t in range(l):
            for o in range(d_out):
                acc = 0.0
                for r in range(r1):
                    acc += a[ni, o, r] * bch[ni, t, r]
                    macs += 1
                y[ni, t, o] = acc
    return 2 * macs, y


def test_tensor_flops_match_instrumented_execution():
    v = L.LoraVariant.tensor(2, 1)
    m, n, d_in, d_out, l = 2, 2, 3, 2, 2
    ad = randomize(make(v, m, d_in, d_out, n=n), 13)
    h = rng(14).normal(size=(m, l, d_in))
    flops, y = instrumented_tensor_3step(
        ad.factors["a"].data, ad.factors["b"].data, ad.factors["c"].data, h
    )
    assert flops == L.flops_count(v, m, n, d_in, d_out, l_tokens=l)
    np.testing.assert_allclose(ad.apply(Tensor(h), path="3step").data, y, rtol=1e-10)


# ---------------------------------------------------------------------------
# structural invariants


def test_apply_linear_in_activations():
    r = rng(31)
    for v in ALL_VARIANTS:
        ad = randomize(make(v, 3, 6, 5), 32)
        h1, h2 = r.normal(size=(3, 6)), r.normal(size=(3, 6))
        alpha, beta = 1.7, -0.4
        lhs = ad.apply(Tensor(alpha * h1 + beta * h2)).data
        rhs = alpha * ad.apply(Tensor(h1)).data + beta * ad.apply(Tensor(h2)).data
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-12)


def test_hybrid_with_zero_offdiagonal_equals_separate():
    m, d, r1 = 3, 5, 2
    sep = randomize(make(L.LoraVariant.separate(r1), m, d, d), 41)
    hyb = make(L.LoraVariant.hybrid(r1, 1), m, d, d)
    for o in range(m):
        for i in range(m):
            if o == i:
                hyb.factors[f"a{o}_{i}"] = Tensor(sep.factors[f"a{o}"].data.copy())
                hyb.factors[f"b{o}_{i}"] = Tensor(sep.factors[f"b{o}"].data.copy())
            else:
                hyb.factors[f"b{o}_{i}"] = Tensor(np.zeros((d, 1)))
    h = Tensor(rng(43).normal(size=(m, d)))
    np.testing.assert_allclose(hyb.apply(h).data, sep.apply(h).data, rtol=1e-12, atol=1e-14)


def test_shape_mismatch_rejected():
    ad = make(L.LoraVariant.fused(2), 3, 4, 4)
    with pytest.raises(ShapeError):
        ad.apply(Tensor(np.zeros((2, 4))))
    with pytest.raises(ShapeError):
        ad.apply(Tensor(np.zeros((3, 5))))


# ---------------------------------------------------------------------------
# gradients flow through every structure


def test_adapter_gradients_against_finite_differences():
    h = Tensor(rng(51).normal(size=(2, 3, 4)))
    for v in [
        L.LoraVariant.separate(2),
        L.LoraVariant.fused(2),
        L.LoraVariant.hybrid(2, 1),
        L.LoraVariant.tensor(2, 1),
    ]:
        ad = randomize(make(v, 2, 4, 3), 52)
        params = {k: f for k, f in ad.factors.items()}
        params["h"] = h
        worst = T.check_gradients(
            lambda: T.mean_all(T.mul(ad.apply(h), ad.apply(h))), params, rtol=1e-4
        )
        assert max(worst.values()) <= 1e-4
