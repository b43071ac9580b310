import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernel_contracts.kernel_zoo import (
    REGISTRY,
    DimensionUnsupported,
    ExceptionalValue,
    IndexOutOfBounds,
    InvocationContext,
    KernelInput,
    UnknownImpl,
    get_impl,
    smoke_test,
    triple_for,
)
from kernel_contracts.kernel_zoo import kernels as K
from kernel_contracts.numerics import FORMATS, ShapeMismatch

EPS32 = FORMATS["FP32"].eps


def triple_loop(a, b):
    """Plain Python FP64 product, independent of numpy's matmul."""
    m, k = a.shape
    p = b.shape[1]
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i, j] = s
    return out


def test_identity_matmul_is_exact():
    a = np.random.default_rng(0).standard_normal((8, 8)).astype(np.float32)
    np.testing.assert_array_equal(K.matmul(a, np.eye(8, dtype=np.float32)), a)


def test_small_matmul_close_to_triple_loop():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(-1, 1, (8, 8)), rng.uniform(-1, 1, (8, 8))
    a32, b32 = a.astype(np.float32), b.astype(np.float32)
    ref = triple_loop(a32, b32)
    err = np.abs(K.matmul(a32, b32) - ref) / np.maximum(np.abs(ref), 1e-30)
    bound = 8 * EPS32 * (np.abs(a32) @ np.abs(b32)) / np.maximum(np.abs(ref), 1e-30)
    assert np.all(err <= bound)


def test_matmul_fp64_same_order_matches_triple_loop():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    np.testing.assert_array_equal(K.matmul_fp64_same_order(a, b), triple_loop(a, b))


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        K.matmul(np.zeros((2, 3)), np.zeros((4, 2)))


def test_bad_matmul_saturates_only_large_sums():
    small = np.ones((2, 16), np.float32), np.ones((16, 2), np.float32)
    np.testing.assert_array_equal(K.matmul(*small, variant="bad"), K.matmul(*small))
    a = np.full((1, 128), 64.0, np.float32)
    b = np.full((128, 1), 64.0, np.float32)
    assert K.matmul(a, b)[0, 0] == 128 * 4096
    assert K.matmul(a, b, variant="bad")[0, 0] == 65504.0


def test_single_element_sum():
    for s in range(len(K.BLOCK_SIZES)):
        assert K.reduce(np.array([3.25]), "sum", s) == 3.25


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_reduce_schedules_close_to_fp64(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 400))
    x = rng.uniform(-1, 1, n).astype(np.float32)
    exact = math.fsum(x.astype(np.float64))
    for s in range(len(K.BLOCK_SIZES)):
        assert abs(K.reduce(x, "sum", s) - exact) <= n * EPS32 * np.abs(x).max()


def test_welford_variance_on_large_offset():
    rng = np.random.default_rng(3)
    x = (2.0 ** 16 + rng.uniform(-1, 1, 4096)).astype(np.float32)
    want = K.variance_fp64(x)
    assert abs(K.reduce(x, "variance") - want) <= 1e-3 * want
    # the one-pass textbook formula loses everything at this offset
    assert abs(K.reduce(x, "variance", variant="bad") - want) > 1e-3 * want


def test_reduce_ops_and_errors():
    x = np.array([3.0, 4.0])
    assert K.reduce(x, "mean") == 3.5
    assert K.reduce(x, "norm") == 5.0
    with pytest.raises(ValueError):
        K.reduce(x, "median")
    with pytest.raises(ShapeMismatch):
        K.reduce(np.array([]))


def test_atomic_sum_good_ignores_seed_bad_does_not():
    x = np.random.default_rng(4).uniform(-1, 1, 1024).astype(np.float32)
    goods = {K.atomic_sum(x, "good", InvocationContext(seed=s)) for s in range(20)}
    bads = {K.atomic_sum(x, "bad", InvocationContext(seed=s)) for s in range(20)}
    assert len(goods) == 1 and len(bads) > 1


def test_collective_single_rank_equals_fp64_sum():
    x = np.random.default_rng(5).uniform(-1, 1, 777)
    got = K.simulated_collective_reduce(x, 1)
    assert got == float(np.float32(K.blocked_sum(x, 32, "FP64")))
    assert abs(got - math.fsum(x)) <= EPS32 * abs(math.fsum(x)) + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([1, 2, 3, 8, 16]))
def test_good_collective_is_bitwise_reproducible(seed, ranks):
    x = np.random.default_rng(seed).uniform(-1, 1, 500)
    vals = {K.simulated_collective_reduce(x, ranks, "good", InvocationContext(seed=s)) for s in range(5)}
    assert len(vals) == 1


def test_good_atomic_reproducible_over_100_seeds():
    x = np.random.default_rng(6).uniform(-1, 1, 1024).astype(np.float32)
    first = K.atomic_sum(x, "good", InvocationContext(seed=0))
    for s in range(100):
        assert K.atomic_sum(x, "good", InvocationContext(seed=s)) == first


def test_softmax_symmetry_and_shift_invariance():
    x = np.array([1.0, 2.0, 3.0], np.float32)
    y = K.softmax(x)
    assert abs(float(y.sum()) - 1) <= 4 * EPS32
    np.testing.assert_allclose(K.softmax(x[::-1]), y[::-1])
    np.testing.assert_allclose(K.softmax(x + 100), y, rtol=1e-6)
    np.testing.assert_allclose(y, K.softmax_fp64(x), rtol=1e-6)
    np.testing.assert_allclose(K.softmax(np.zeros(4)), 0.25)


def test_naive_softmax_overflows():
    y = K.softmax(np.array([100.0, 0.0], np.float32), "bad")
    assert not np.all(np.isfinite(y))
    np.testing.assert_allclose(K.softmax(np.array([100.0, 0.0], np.float32)), [1, math.exp(-100)], rtol=1e-5, atol=1e-44)


def test_denormal_policies():
    tiny = np.float32(2.0 ** -140)
    assert K.scale_denormal(np.array([tiny]))[0] == np.float32(2.0 ** -139)
    assert K.scale_denormal(np.array([tiny]), "good_ftz")[0] == 0
    assert K.scale_denormal(np.array([tiny]), "bad")[0] == 0
    assert K.scale_denormal(np.array([1.5], np.float32), "bad")[0] == 3.0


def test_exceptional_policies():
    x = np.array([1.0, np.nan, np.inf], np.float32)
    y = K.elementwise_with_exceptional(x)
    assert y[0] == 2.5 and np.isnan(y[1]) and y[2] == np.inf
    np.testing.assert_array_equal(K.elementwise_with_exceptional(x, variant="good_mask"), [2.5, 0, 0])
    with pytest.raises(ExceptionalValue) as e:
        K.elementwise_with_exceptional(x, variant="good_raise")
    assert e.value.position == 1
    assert K.elementwise_with_exceptional(x, variant="bad")[1] == 1.5


def test_gather_examples():
    data = np.arange(10.0).reshape(5, 2)
    np.testing.assert_array_equal(K.gather(data, [0, 4]), data[[0, 4]])
    with pytest.raises(IndexOutOfBounds) as e:
        K.gather(data, [1, 5, 7])
    assert (e.value.index, e.value.bound) == (5, 5)
    np.testing.assert_array_equal(K.gather(data, [-1, 5], variant="good_clamp"), data[[0, 4]])
    np.testing.assert_array_equal(K.gather(data, [2, 5], variant="good_zero"), [[4, 5], [0, 0]])
    np.testing.assert_array_equal(K.gather(data, [5, -1], variant="bad"), data[[0, 4]])
    with pytest.raises(IndexOutOfBounds):
        K.gather(data, [0], variant="baseline")


@given(st.lists(st.integers(-20, 20), min_size=1, max_size=20))
def test_gather_raise_iff_out_of_range(idx):
    data = np.arange(8.0)[:, None]
    oob = [i for i in idx if not 0 <= i < 8]
    if oob:
        with pytest.raises(IndexOutOfBounds) as e:
            K.gather(data, idx)
        assert e.value.index == oob[0]
    else:
        np.testing.assert_array_equal(K.gather(data, idx)[:, 0], idx)


def test_fused_bypass_equals_matmul():
    rng = np.random.default_rng(7)
    a, b = rng.standard_normal((4, 8)).astype(np.float32), rng.standard_normal((8, 3)).astype(np.float32)
    zero = np.zeros(3, np.float32)
    np.testing.assert_allclose(K.fused_bias_gelu_matmul(a, b, zero, activation=None), K.matmul(a, b), rtol=1e-6)
    bias = rng.standard_normal(3).astype(np.float32)
    np.testing.assert_allclose(K.fused_bias_gelu_matmul(a, b, bias), K.sequential_bias_gelu(a, b, bias),
                               rtol=1e-5, atol=1e-6)


def test_gelu_values():
    np.testing.assert_allclose(K.gelu(np.array([0.0, 1.0, -1.0])), [0.0, 0.8413447, -0.1586553], rtol=1e-6)


def test_shape_polymorphic_holdout():
    rng = np.random.default_rng(8)
    a, b = rng.standard_normal((64, 64)), rng.standard_normal((64, 65))
    ok = K.shape_polymorphic_matmul(a, b)
    np.testing.assert_allclose(ok, a @ b, rtol=1e-4, atol=1e-4)
    assert not np.allclose(K.shape_polymorphic_matmul(a, b, "bad"), a @ b, atol=1e-2)
    b64 = b[:, :64]
    np.testing.assert_allclose(K.shape_polymorphic_matmul(a, b64, "bad"), a @ b64, rtol=1e-4, atol=1e-4)


def _qkv(rng, s=40, d=64):
    q, k = rng.standard_normal((2, 1, 2, s, d))
    v = rng.uniform(0.5, 1, (1, 2, s, d))
    return q, k, v


def test_attention_matches_reference():
    q, k, v = _qkv(np.random.default_rng(9))
    ref = K.attention_reference(q, k, v, np.float64)
    np.testing.assert_allclose(K.attention(q, k, v), ref, rtol=1e-5)
    err = np.max(np.abs(K.attention(q, k, v, "bad") - ref) / np.abs(ref))
    assert 1e-4 < err < 1e-2


def test_attention_unsupported_dim():
    q, k, v = _qkv(np.random.default_rng(10), d=96)
    with pytest.raises(DimensionUnsupported):
        K.attention(q, k, v)
    out = K.attention(q, k, v, "bad_shape")
    assert out.shape == q.shape


def test_attention_nondet_variant_varies():
    q, k, v = _qkv(np.random.default_rng(11), s=128)
    outs = [K.attention(q, k, v, "bad_nondet", InvocationContext(seed=s)) for s in range(4)]
    assert any(not np.array_equal(outs[0], o) for o in outs[1:])
    goods = [K.attention(q, k, v, "good", InvocationContext(seed=s)) for s in range(4)]
    assert all(np.array_equal(goods[0], o) for o in goods[1:])


def test_random_small_instances_against_fp64():
    rng = np.random.default_rng(12)
    for _ in range(100):
        m, k, p = rng.integers(1, 12, 3)
        a = rng.uniform(-1, 1, (m, k)).astype(np.float32)
        b = rng.uniform(-1, 1, (k, p)).astype(np.float32)
        ref = K.matmul_fp64_same_order(a, b)
        assert np.all(np.abs(K.matmul(a, b) - ref) <= 2 * k * EPS32 * (np.abs(a) @ np.abs(b)) + 1e-30)
        x = rng.uniform(-1, 1, int(k * p)).astype(np.float32)
        assert abs(K.reduce(x) - math.fsum(x.astype(np.float64))) <= x.size * EPS32


def test_registry_ids_and_states():
    for impl_id, impl in REGISTRY.items():
        assert impl_id == impl.id
        assert impl.calibration_state in ("good", "bad", "baseline")
    with pytest.raises(UnknownImpl):
        get_impl("matmul.perfect")


def test_smoke_separates_baselines():
    for impl in REGISTRY.values():
        assert smoke_test(impl) == (impl.calibration_state != "baseline"), impl.id


def test_triples_and_fallback():
    good, bad, base = triple_for("C-PRC-01-FP8-ACCUMULATOR")
    assert (good.id, bad.id, base.id) == ("matmul.good", "matmul.bad", "matmul.baseline")
    with pytest.raises(KeyError):
        triple_for("C-PRC-04")


def test_impl_call_wraps_kernel_errors():
    out = get_impl("gather.good")(KernelInput({"data": np.zeros((3, 1)), "indices": np.array([3])}))
    assert out.raised and out.exception.kind == "INDEX_OUT_OF_BOUNDS"
