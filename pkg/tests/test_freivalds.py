import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernel_contracts.freivalds import (
    NonFiniteInput,
    VerifierConfig,
    rademacher,
    row_thresholds,
    sensitivity_experiment,
    soundness_spot_check,
    threshold,
    to_csv,
    verify,
    SENSITIVITY_HEADER,
)
from kernel_contracts.numerics import ShapeMismatch


def problem(seed, m=64, n=32, p=16):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    B = rng.standard_normal((n, p))
    return A, B, A @ B


def test_exact_product_passes():
    A, B, C = problem(0)
    r = verify(A, B, C)
    assert r.passed and len(r.per_iteration_residuals) == 20
    assert r.max_residual < 1e-10


def test_fp32_product_passes():
    A, B, _ = problem(1, 128, 128, 128)
    C = (A.astype(np.float32) @ B.astype(np.float32)).astype(np.float64)
    assert verify(A, B, C).passed


def test_large_corruption_detected():
    A, B, C = problem(2)
    C[3, 4] += 100 * threshold(A, B, C)
    assert not verify(A, B, C).passed


def test_rademacher_entries_and_determinism():
    R = rademacher(50, 7, 3)
    assert set(np.unique(R)) <= {-1.0, 1.0}
    np.testing.assert_array_equal(R, rademacher(50, 7, 3))


def test_threshold_zero_and_linearity():
    A, B, _ = problem(3)
    assert threshold(A, B, atol=0, rtol=0) == 0
    t1 = threshold(A, B, atol=0, rtol=1e-4)
    assert math.isclose(threshold(2 * A, B, atol=0, rtol=1e-4), 2 * t1)
    assert math.isclose(threshold(A, 3 * B, atol=0, rtol=1e-4), 3 * t1)
    # scalar threshold is the RMS of the per-row thresholds' norm term
    rows = row_thresholds(A, B, 0, 1e-4)
    assert math.isclose(float(np.sqrt(np.mean(rows ** 2))), t1)


def test_errors():
    A, B, C = problem(4)
    with pytest.raises(ShapeMismatch):
        verify(A, B, C[:, :-1])
    C2 = C.copy()
    C2[0, 0] = np.nan
    with pytest.raises(NonFiniteInput):
        verify(A, B, C2)
    with pytest.raises(ValueError):
        VerifierConfig(k=0)
    with pytest.raises(ValueError):
        VerifierConfig(mode="fast")
    with pytest.raises(ValueError):
        sensitivity_experiment(trials=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0, 5))
def test_modes_agree(seed, mu):
    A, B, C = problem(seed, 16, 8, 12)
    C[1, 2] += mu * threshold(A, B, C)
    b = verify(A, B, C, VerifierConfig(seed=seed))
    n = verify(A, B, C, VerifierConfig(seed=seed, mode="naive"))
    assert b.passed == n.passed
    np.testing.assert_allclose(b.per_iteration_residuals, n.per_iteration_residuals, rtol=0,
                               atol=4 * np.finfo(np.float32).eps * 8)


def test_magnitude_zero_never_detected():
    rows = sensitivity_experiment((64, 32, 16), (0.0,), trials=20)
    assert rows[0]["detected"] == 0


def test_dead_and_safe_zones():
    rows = sensitivity_experiment((64, 32, 16), (0.25, 2.0), trials=200, cfg=VerifierConfig(k=20, seed=9))
    assert rows[0]["detected"] == 0
    assert rows[1]["detected"] == 200


def test_transition_rate_is_binomially_stable():
    # two independent realizations of the 1x transition rate should agree
    # to within a few binomial standard deviations
    n = 150
    r = [sensitivity_experiment((64, 32, 16), (1.0,), trials=n, cfg=VerifierConfig(seed=s))[0]["rate"]
         for s in (11, 12)]
    p = (r[0] + r[1]) / 2
    assert 0 < p < 1
    assert abs(r[0] - r[1]) <= 4 * math.sqrt(2 * p * (1 - p) / n) + 1e-9


def test_fp16_products_fail_fp32_thresholds():
    assert soundness_spot_check(10, VerifierConfig(k=20), n=128, product_format="FP16") == 10
    assert soundness_spot_check(10, VerifierConfig(k=20), n=128, product_format="FP64") == 0


def test_csv_layout():
    rows = sensitivity_experiment((16, 8, 4), (1.0, 10.0), trials=2)
    text = to_csv(rows, SENSITIVITY_HEADER)
    assert text.splitlines()[0] == ",".join(SENSITIVITY_HEADER)
    assert len(text.splitlines()) == 3
