import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernel_contracts.contract_lang import RefSpec, ViolationSignature, parse_contract
from kernel_contracts.harness import (
    AlgebraicCheck,
    InputGenerator,
    OracleUnavailable,
    SampleResult,
    UnsupportedProtocol,
    UnsupportedReference,
    eval_tolerance_expr,
    in_scope,
    match_violation_signature,
    resolve_reference,
    run_protocol,
    shape_sweep,
    three_state_calibrate,
)
from kernel_contracts.harness.generators import boundary_indices, holdout_shape, near_saturation, sample_rng
from kernel_contracts.kernel_zoo import KernelInput, get_impl, triple_for
from kernel_contracts.numerics import FORMATS
from kernel_contracts.trace import MemorySink


@pytest.mark.parametrize("cid", ["C-PRC-01", "C-PRC-03", "C-ORD-02", "C-EXC-01", "C-EXC-02", "C-CMP-01",
                                 "C-CMP-03", "C-FA3-SHAPE"])
def test_calibration_separates_at_small_budget(corpus, cid):
    v = three_state_calibrate(corpus[cid], seed=0, sample_budget=32)
    assert v.separated, v.per_state


def test_degenerate_triple_is_not_separated(corpus):
    good, _, base = triple_for("C-PRC-01")
    v = three_state_calibrate(corpus["C-PRC-01"], (good, good, base), sample_budget=16)
    assert not v.separated
    assert v.per_state["bad"]["contract_pass"]


def test_run_protocol_is_deterministic(corpus):
    c, impl = corpus["C-ORD-01"], get_impl("reduce.good")
    a = run_protocol(c, impl, seed=3, sample_budget=20)
    b = run_protocol(c, impl, seed=3, sample_budget=20)
    assert [s.residual for s in a.samples] == [s.residual for s in b.samples]
    assert a.to_json() == b.to_json()


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 30))
def test_budget_prefix_monotone(seed, n):
    from kernel_contracts.harness import packaged_contracts
    c, impl = packaged_contracts()["C-EXC-02"], get_impl("gather.good_clamp")
    small = run_protocol(c, impl, seed, n)
    big = run_protocol(c, impl, seed, n + 10)
    assert [s.residual for s in big.samples[:n]] == [s.residual for s in small.samples]
    assert [s.input_hash for s in big.samples[:n]] == [s.input_hash for s in small.samples]


def test_one_trace_per_sample_and_none_when_out_of_scope(corpus):
    sink = MemorySink()
    rep = run_protocol(corpus["C-EXC-02"], get_impl("gather.bad"), sample_budget=12, sink=sink)
    assert rep.verdict == "violating" and len(sink.records) == 12
    sink = MemorySink()
    rep = run_protocol(corpus["C-PRC-03"], get_impl("matmul.good"), sample_budget=12, sink=sink)
    assert rep.verdict == "not_applicable" and rep.sample_count == 0
    assert sink.records == []


def test_custom_protocol_unsupported(corpus):
    with pytest.raises(UnsupportedProtocol):
        run_protocol(corpus["C-PRC-04"], get_impl("matmul.good"), sample_budget=4)


def test_alternate_stack_reference_unavailable(corpus):
    with pytest.raises(OracleUnavailable):
        run_protocol(corpus["C-CMP-03-SAKANA"], get_impl("shape_matmul.good"), sample_budget=4)


def test_scope_rules(corpus):
    assert in_scope(corpus["C-PRC-01"], get_impl("matmul.good"))
    assert in_scope(corpus["C-EXC-02"], get_impl("gather.bad"))
    assert not in_scope(corpus["C-EXC-02"], get_impl("softmax.good"))


def test_prc01_signature_and_details(corpus):
    rep = run_protocol(corpus["C-PRC-01"], get_impl("matmul.bad"), sample_budget=16)
    assert rep.verdict == "violating" and rep.matched_signature
    assert "65504" in rep.signature_details


def test_policy_signature_words(corpus):
    rep = run_protocol(corpus["C-EXC-02"], get_impl("gather.bad"), sample_budget=16)
    assert rep.matched_signature and "none of the four" in rep.signature_details
    rep = run_protocol(corpus["C-PRC-03"], get_impl("denormal.bad"), sample_budget=16)
    assert "behaves as FTZ while declaring IEEE" in rep.signature_details


def test_unstructured_signature():
    s = SampleResult(0, False, "abs", 1.0, "absolute", 0.1, {})
    assert match_violation_signature(ViolationSignature("it looks wrong"), [s]) == (False, "unstructured signature")


def test_shape_sweep_examples(corpus):
    c, bad = corpus["C-CMP-03"], get_impl("shape_matmul.bad")
    out = shape_sweep(c, bad, [(64, 64, 64), (64, 64, 65), (1, 1, 1)])
    assert [v for _, v, _ in out] == ["conforming", "violating", "conforming"]
    assert shape_sweep(c, bad, []) == []
    with pytest.raises(UnsupportedProtocol):
        shape_sweep(corpus["C-PRC-01"], get_impl("matmul.good"), [1])


def test_eval_tolerance_expr():
    eps = FORMATS["FP32"].eps
    assert eval_tolerance_expr("N * eps(P) * max|x|", fmt="FP32", N=1024, max_abs=2.0) == 2048 * eps
    assert eval_tolerance_expr("K * eps(P)", fmt="FP16", K=4) == 4 * FORMATS["FP16"].eps
    with pytest.raises(ValueError):
        eval_tolerance_expr("__import__('os')", fmt="FP32")


def test_resolve_reference_examples():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((3, 5)), rng.standard_normal((5, 2))
    inp = KernelInput({"a": a, "b": b})
    ref = resolve_reference(RefSpec("higher_precision", "FP64"), inp, get_impl("matmul.good"))
    np.testing.assert_allclose(ref, a @ b, rtol=1e-12)
    pad = resolve_reference(RefSpec("stable_algorithm", "same_kernel"), inp, get_impl("shape_matmul.bad"))
    np.testing.assert_allclose(pad, a @ b, rtol=1e-4, atol=1e-5)
    assert isinstance(resolve_reference(RefSpec("algebraic", "idempotence"), inp, get_impl("matmul.good")),
                      AlgebraicCheck)
    with pytest.raises(UnsupportedReference):
        resolve_reference(RefSpec("alternate_stack", "cuBLAS"), inp, get_impl("matmul.good"))
    with pytest.raises(UnsupportedReference):
        resolve_reference(RefSpec("higher_precision", "FP16"), inp, get_impl("matmul.good"))
    with pytest.raises(UnsupportedReference):
        resolve_reference(RefSpec("higher_precision", "FP64", (("bogus", "x"),)), inp, get_impl("matmul.good"))


def test_generators_are_deterministic():
    g = InputGenerator("index_mix", seed=5)
    x, y = g.sample(3), g.sample(3)
    for k in x.tensors:
        np.testing.assert_array_equal(x.tensors[k], y.tensors[k])
    assert len(list(g.stream(4))) == 4
    with pytest.raises(ValueError):
        InputGenerator("psychic")


def test_boundary_indices():
    assert list(boundary_indices(10)) == [0, 5, 9, -1, -10, 10, 20]


def test_near_saturation_reference_exceeds_fp16_max():
    for i in range(10):
        inp = near_saturation(sample_rng(0, i), fmt="FP16")
        a, b = inp.tensors["a"], inp.tensors["b"]
        ref = a.astype(np.float64) @ b.astype(np.float64)
        assert ref.max() > 65504
        assert np.all(ref == (a.astype(np.float32) @ b.astype(np.float32)))


def test_holdout_shapes_alternate():
    rng = np.random.default_rng(0)
    pow2 = lambda s: all(d & (d - 1) == 0 for d in s)
    assert pow2(holdout_shape(rng, 0))
    assert not pow2(holdout_shape(rng, 1))
    assert pow2(holdout_shape(rng, 1, only_benchmarked=True))
