"""Freivalds verification of C = A @ B with norm-based thresholds.

Each of the k random Rademacher columns r gives a residual vector
A(Br) - Cr computed in float64.  Row i of that vector is accepted when

    |res_i| <= tau_i = atol * sqrt(n) + rtol * ||A_i||_2 * ||B||_F / sqrt(p)

The scalar threshold reported (and used to scale corruptions) is the same
expression with the row norm replaced by its RMS over rows:

    tau = atol * sqrt(n) + rtol * ||A||_F * ||B||_F / sqrt(m * p)
"""

from __future__ import annotations

import csv
import io
import math
import statistics
import timeit
from dataclasses import dataclass, field

import numpy as np

from .numerics import ShapeMismatch

SENSITIVITY_HEADER = ("multiplier", "detected", "trials", "rate")
OVERHEAD_HEADER = ("n", "matmul_ms", "batched_ms", "naive_ms", "batched_pct", "naive_pct")
TABLE_MULTIPLIERS = (0.1, 0.5, 1.0, 1.5, 3.0, 10.0)


class NonFiniteInput(ValueError):
    pass


@dataclass(frozen=True)
class VerifierConfig:
    k: int = 20
    atol: float = 1e-4
    rtol: float = 1e-4
    mode: str = "batched"  # batched | naive
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.mode not in ("batched", "naive"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.atol < 0 or self.rtol < 0:
            raise ValueError("tolerances must be nonnegative")

    @property
    def false_accept_bound(self) -> float:
        return 2.0 ** -self.k


@dataclass
class VerifyResult:
    passed: bool
    max_residual: float
    per_iteration_residuals: list
    threshold_used: float
    per_iteration_ratios: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"pass": self.passed, "max_residual": self.max_residual,
                "per_iteration_residuals": self.per_iteration_residuals,
                "threshold_used": self.threshold_used}


def _check(A, B, C):
    A, B, C = (np.asarray(x) for x in (A, B, C))
    if A.ndim != 2 or B.ndim != 2 or C.ndim != 2:
        raise ShapeMismatch("A, B and C must be matrices")
    m, n = A.shape
    if B.shape[0] != n or C.shape != (m, B.shape[1]):
        raise ShapeMismatch(f"shapes {A.shape} @ {B.shape} -> {C.shape} do not conform")
    for name, x in (("A", A), ("B", B), ("C", C)):
        if not np.all(np.isfinite(x)):
            raise NonFiniteInput(f"{name} has non-finite entries")
    return A, B, C


def _norm_terms(A64, B64):
    """Row norms of A and the Frobenius norm of B, each from one pass."""
    return np.sqrt(np.einsum("ij,ij->i", A64, A64)), math.sqrt(float(np.einsum("ij,ij->", B64, B64)))


def _scalar_threshold(row_norms, b_norm, n, p, atol, rtol) -> float:
    m = row_norms.size
    if m == 0 or p == 0:
        return atol * math.sqrt(n)
    a_norm = math.sqrt(float(np.dot(row_norms, row_norms)))
    return atol * math.sqrt(n) + rtol * a_norm * b_norm / math.sqrt(m * p)


def row_thresholds(A, B, atol=1e-4, rtol=1e-4) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    n, p = B.shape
    rows, b_norm = _norm_terms(A, B)
    return atol * math.sqrt(n) + rtol * rows * b_norm / math.sqrt(p)


def threshold(A, B, C=None, atol=1e-4, rtol=1e-4) -> float:
    """Scalar norm-based threshold; C only fixes the shape convention."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    rows, b_norm = _norm_terms(A, B)
    return _scalar_threshold(rows, b_norm, A.shape[1], B.shape[1], atol, rtol)


def rademacher(p: int, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, (p, k)).astype(np.float64) * 2.0 - 1.0


ROW_BLOCK = 256  # rows converted to FP64 at a time, so temporaries stay in cache


def _row_blocks(m):
    return [slice(i, min(i + ROW_BLOCK, m)) for i in range(0, m, ROW_BLOCK)]


def _mat_rademacher(X, R, mode) -> np.ndarray:
    """X @ R in FP64, one row block of X at a time."""
    out = np.empty((X.shape[0], R.shape[1]))
    for blk in _row_blocks(X.shape[0]):
        X64 = np.asarray(X[blk], dtype=np.float64)
        if mode == "batched":
            out[blk] = X64 @ R
        else:
            for t in range(R.shape[1]):
                out[blk, t] = X64 @ R[:, t]
    return out


def _residuals_and_norms(A, B, C, R, mode):
    BR = _mat_rademacher(B, R, mode)
    b_sq = 0.0
    for blk in _row_blocks(B.shape[0]):
        B64 = np.asarray(B[blk], dtype=np.float64)
        b_sq += float(np.einsum("ij,ij->", B64, B64))
    m = A.shape[0]
    res = np.empty((m, R.shape[1]))
    rows = np.empty(m)
    for blk in _row_blocks(m):
        A64 = np.asarray(A[blk], dtype=np.float64)
        C64 = np.asarray(C[blk], dtype=np.float64)
        rows[blk] = np.sqrt(np.einsum("ij,ij->i", A64, A64))
        if mode == "batched":
            res[blk] = A64 @ BR - C64 @ R
        else:
            for t in range(R.shape[1]):
                res[blk, t] = A64 @ BR[:, t] - C64 @ R[:, t]
    return res, rows, math.sqrt(b_sq)


def verify(A, B, C, cfg: VerifierConfig | None = None) -> VerifyResult:
    cfg = cfg or VerifierConfig()
    A, B, C = _check(A, B, C)
    n, p = B.shape
    R = rademacher(p, cfg.k, cfg.seed)
    res, rows, b_norm = _residuals_and_norms(A, B, C, R, cfg.mode)
    res = np.abs(res)
    tau = (cfg.atol * math.sqrt(n) + cfg.rtol * rows * b_norm / math.sqrt(max(p, 1)))[:, None]
    per_iter = res.max(axis=0) if res.size else np.zeros(cfg.k)
    ratios = (res / tau).max(axis=0) if res.size else np.zeros(cfg.k)
    return VerifyResult(bool(np.all(ratios <= 1.0)), float(per_iter.max()), per_iter.tolist(),
                        _scalar_threshold(rows, b_norm, n, p, cfg.atol, cfg.rtol), ratios.tolist())


# ---------------------------------------------------------------------------
# experiments

def _fp32_product(A, B) -> np.ndarray:
    return (A.astype(np.float32) @ B.astype(np.float32)).astype(np.float64)


def _problem(rng, m, n, p):
    A = rng.standard_normal((m, n)).astype(np.float32).astype(np.float64)
    B = rng.standard_normal((n, p)).astype(np.float32).astype(np.float64)
    return A, B


def sensitivity_experiment(shape=(256, 128, 64), magnitudes=TABLE_MULTIPLIERS, trials: int = 40,
                           cfg: VerifierConfig | None = None) -> list[dict]:
    """Detection rate of one corrupted element per magnitude/threshold ratio.

    Trial t draws A, B, the corrupted position and the Freivalds vectors
    from (seed, t); every multiplier reuses the same trial data.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if any(mu < 0 for mu in magnitudes):
        raise ValueError("magnitudes must be nonnegative")
    cfg = cfg or VerifierConfig(k=20)
    m, n, p = shape
    detected = [0] * len(magnitudes)
    for t in range(trials):
        rng = np.random.default_rng([cfg.seed, t])
        A, B = _problem(rng, m, n, p)
        C = _fp32_product(A, B)
        tau = threshold(A, B, C, cfg.atol, cfg.rtol)
        i, j = int(rng.integers(m)), int(rng.integers(p))
        tcfg = VerifierConfig(cfg.k, cfg.atol, cfg.rtol, cfg.mode, int(rng.integers(2 ** 31)))
        for idx, mu in enumerate(magnitudes):
            Cc = C.copy()
            Cc[i, j] += mu * tau
            if not verify(A, B, Cc, tcfg).passed:
                detected[idx] += 1
    return [{"multiplier": float(mu), "detected": d, "trials": trials, "rate": d / trials}
            for mu, d in zip(magnitudes, detected)]


def soundness_spot_check(trials: int = 500, cfg: VerifierConfig | None = None, n: int = 256,
                         product_format: str = "FP32") -> int:
    """False-positive count on correct products computed in FP32 (or FP16
    to show the thresholds are precision dependent)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cfg = cfg or VerifierConfig(k=40)
    fails = 0
    for t in range(trials):
        rng = np.random.default_rng([cfg.seed, t, 1])
        A, B = _problem(rng, n, n, n)
        if product_format == "FP16":
            C = (A.astype(np.float16) @ B.astype(np.float16)).astype(np.float64)
        elif product_format == "FP64":
            C = A @ B
        else:
            C = _fp32_product(A, B)
        tcfg = VerifierConfig(cfg.k, cfg.atol, cfg.rtol, cfg.mode, int(rng.integers(2 ** 31)))
        fails += not verify(A, B, C, tcfg).passed
    return fails


def _median_ms(fn, reps=5) -> float:
    """Median per-call time; autorange batches fast calls into >= 0.2 s loops."""
    t = timeit.Timer(fn)
    number, _ = t.autorange()
    return statistics.median(t.repeat(reps, number)) / number * 1e3


def overhead_benchmark(sizes=(256, 512, 1024, 2048), cfg: VerifierConfig | None = None, reps: int = 5,
                       sink=None) -> list[dict]:
    """Time host FP32 matmul against both verifier modes at each size."""
    cfg = cfg or VerifierConfig(k=10)
    rows = []
    for idx, n in enumerate(sizes):
        rng = np.random.default_rng([cfg.seed, n])
        A = rng.standard_normal((n, n)).astype(np.float32)
        B = rng.standard_normal((n, n)).astype(np.float32)
        C = A @ B
        mm = _median_ms(lambda: A @ B, reps)
        bcfg = VerifierConfig(cfg.k, cfg.atol, cfg.rtol, "batched", cfg.seed)
        ncfg = VerifierConfig(cfg.k, cfg.atol, cfg.rtol, "naive", cfg.seed)
        vb = verify(A, B, C, bcfg)
        vn = verify(A, B, C, ncfg)
        bt = _median_ms(lambda: verify(A, B, C, bcfg), reps)
        nt = _median_ms(lambda: verify(A, B, C, ncfg), reps)
        row = {"n": n, "matmul_ms": mm, "batched_ms": bt, "naive_ms": nt,
               "batched_pct": 100.0 * bt / mm, "naive_pct": 100.0 * nt / mm,
               "batched_pass": vb.passed, "naive_pass": vn.passed}
        rows.append(row)
        if sink is not None:
            _emit_overhead(sink, row, idx, cfg.seed)
    return rows


def _emit_overhead(sink, row, idx, seed):
    from .trace import TraceRecord, input_ref, silicon_profile, utc_timestamp

    profile = silicon_profile()
    ref = input_ref({"n": np.array([row["n"]]), "seed": np.array([seed])})
    for mode in ("batched", "naive"):
        sink.emit(TraceRecord(
            contract_id="freivalds-overhead", contract_version="1", impl_id=f"freivalds.{mode}",
            silicon_profile=profile, input_ref=ref, residual_kind="overhead_pct",
            residual=float(row[f"{mode}_pct"]), tolerance_kind="none", tolerance=math.inf,
            verdict="pass" if row[f"{mode}_pass"] else "fail", sample_index=idx, seed=int(seed),
            timestamp=utc_timestamp()))


def to_csv(rows, header, stream=None) -> str:
    buf = stream or io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([r[h] for h in header])
    return buf.getvalue() if stream is None else ""
