"""Seeded input streams.  Sample ``i`` of a stream depends only on
(strategy, parameters, seed, i), so a larger budget extends a smaller one."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..kernel_zoo import KernelInput
from ..kernel_zoo.kernels import is_pow2
from ..numerics import FORMATS, quantize

STRATEGIES = ("uniform", "near_saturation", "wide_dynamic_range", "exceptional_injection",
              "index_mix", "holdout_shapes")

FP16_MAX = FORMATS["FP16"].max_finite
SOFTMAX_CENTERS = (0.0, 10.0, 100.0, 1e3, 1e4)


def sample_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(i)])


def _on_grid(x, fmt):
    """Quantize to ``fmt`` and hand the kernel float32 storage."""
    return quantize(np.asarray(x, dtype=np.float64), fmt).astype(np.float32)


# ---------------------------------------------------------------------------

def near_saturation(rng, *, kernel="matmul", fmt="FP16", m=4, k=128, p=4, n=1024,
                    lo=2.0 ** 16.5, hi=2.0 ** 18) -> KernelInput:
    """Integer-valued inputs on ``fmt``'s grid whose exact result lies in
    (lo, hi): above FP16 max, yet every partial sum is exact in FP32."""
    target = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    if kernel == "matmul":
        s = max(2, int(round(2 * np.sqrt(target / k))))
        a = _on_grid(rng.integers(1, s + 1, (m, k)), fmt)
        b = _on_grid(rng.integers(1, s + 1, (k, p)), fmt)
        ref = a.astype(np.float64) @ b.astype(np.float64)
        while ref.min() <= 1.05 * FP16_MAX:  # integers stay integers when doubled
            b = b * 2
            ref = ref * 2
        return KernelInput({"a": a, "b": b}, {"a": fmt, "b": fmt, "y": "FP32"},
                           {"target": target})
    s = max(2, int(round(2 * target / n)))
    x = _on_grid(rng.integers(1, s + 1, n), fmt)
    while x.astype(np.float64).sum() <= 1.05 * FP16_MAX:
        x = x * 2
    return KernelInput({"x": x}, {"x": fmt, "y": "FP32"}, {"op": "sum", "target": target})


def wide_dynamic_range(rng, *, kernel="softmax", i=0, n=64, half_width=50.0,
                       centers=SOFTMAX_CENTERS) -> KernelInput:
    """Values c + U[-w, w] with c cycling over ``centers``."""
    c = centers[i % len(centers)]
    if kernel == "variance":
        n = max(n, 1024)
    x = np.asarray(c + rng.uniform(-half_width, half_width, n), dtype=np.float32)
    attrs = {"center": c}
    if kernel == "variance":
        attrs["op"] = "variance"
    return KernelInput({"x": x}, {"x": "FP32", "y": "FP32"}, attrs)


def uniform(rng, *, kernel, i=0, fmt="FP32", lo=-1.0, hi=1.0, n=1024, config=None) -> KernelInput:
    if kernel in ("reduce", "reduce_atomic", "collective", "variance"):
        x = _on_grid(rng.uniform(lo, hi, n), fmt)
        return KernelInput({"x": x}, {"x": fmt, "y": "FP32"}, {"op": "sum"})
    if kernel == "softmax":
        return KernelInput({"x": _on_grid(rng.uniform(lo, hi, n), fmt)}, {"x": fmt, "y": "FP32"})
    if kernel in ("matmul", "shape_matmul"):
        m, k, p = config or (16, 16, 16)
        a = _on_grid(rng.uniform(lo, hi, (m, k)), fmt)
        b = _on_grid(rng.uniform(lo, hi, (k, p)), fmt)
        return KernelInput({"a": a, "b": b}, {"a": fmt, "b": fmt, "y": "FP32"})
    if kernel == "fused_bias_gelu":
        m, k, p = config or (8, 16, 8)
        a = _on_grid(rng.uniform(lo, hi, (m, k)), fmt)
        b = _on_grid(rng.uniform(lo, hi, (k, p)), fmt)
        bias = _on_grid(rng.uniform(lo, hi, p), fmt)
        return KernelInput({"a": a, "b": b, "bias": bias}, {"a": fmt, "b": fmt, "bias": fmt, "y": "FP32"})
    if kernel == "attention":
        s, d = config or (64, 64)
        q = _on_grid(rng.standard_normal((1, 1, s, d)), fmt)
        k_ = _on_grid(rng.standard_normal((1, 1, s, d)), fmt)
        v = _on_grid(rng.uniform(0.5, 1.0, (1, 1, s, d)), fmt)  # keeps outputs away from 0
        return KernelInput({"q": q, "k": k_, "v": v}, {"q": fmt, "k": fmt, "v": fmt, "y": "FP32"},
                           {"S": s, "D": d})
    raise ValueError(f"uniform generator has no layout for kernel {kernel!r}")


def exceptional_injection(rng, *, kind="nan", n=16, count=None) -> KernelInput:
    """FP32 vector with non-finite values (kind nan) or subnormals around
    2^-140 (kind denormal) at random positions."""
    x = rng.uniform(-1.0, 1.0, n)
    c = count or int(rng.integers(1, max(2, n // 4) + 1))
    pos = rng.choice(n, size=c, replace=False)
    if kind == "denormal":
        vals = 2.0 ** -140 * (1.0 + rng.uniform(0.0, 1.0, c)) * rng.choice([-1.0, 1.0], c)
    else:
        vals = rng.choice([np.nan, np.inf, -np.inf], c)
    x[pos] = vals
    return KernelInput({"x": x.astype(np.float32)}, {"x": "FP32", "y": "FP32"},
                       {"positions": np.sort(pos).tolist(), "kind": kind})


def boundary_indices(bound: int) -> np.ndarray:
    """Edge cases every index tensor carries."""
    return np.array([0, bound // 2, bound - 1, -1, -bound, bound, bound + 10], dtype=np.int64)


def index_mix(rng, *, rows_range=(4, 33), cols=3, extra=9, include_boundary=True) -> KernelInput:
    b = int(rng.integers(*rows_range))
    data = rng.uniform(-1.0, 1.0, (b, cols)).astype(np.float32)
    rand = rng.integers(-2 * b, 2 * b, extra)
    idx = np.concatenate([boundary_indices(b), rand]) if include_boundary else rand
    rng.shuffle(idx)
    return KernelInput({"data": data, "indices": idx.astype(np.int64)},
                       {"data": "FP32", "y": "FP32"}, {"bound": b})


POW2 = (1, 2, 4, 8, 16, 32, 64)


def holdout_shape(rng, i, *, only_benchmarked=False, max_dim=80):
    """Even samples (or all, if only_benchmarked) draw from the benchmarked
    set B of power-of-two shapes; odd samples draw outside B."""
    if only_benchmarked or i % 2 == 0:
        return tuple(int(rng.choice(POW2)) for _ in range(3))
    while True:
        s = tuple(int(v) for v in rng.integers(1, max_dim + 1, 3))
        if not all(is_pow2(v) for v in s):
            return s


def holdout_shapes(rng, *, i=0, only_benchmarked=False) -> KernelInput:
    m, k, p = holdout_shape(rng, i, only_benchmarked=only_benchmarked)
    a = rng.uniform(0.0, 1.0, (m, k)).astype(np.float32)
    b = rng.uniform(0.0, 1.0, (k, p)).astype(np.float32)
    return KernelInput({"a": a, "b": b}, {"a": "FP32", "b": "FP32", "y": "FP32"},
                       {"shape": (m, k, p), "benchmarked": all(is_pow2(v) for v in (m, k, p))})


_FUNCS = {
    "uniform": uniform,
    "near_saturation": near_saturation,
    "wide_dynamic_range": wide_dynamic_range,
    "exceptional_injection": exceptional_injection,
    "index_mix": index_mix,
    "holdout_shapes": holdout_shapes,
}
_TAKES_INDEX = {"uniform", "wide_dynamic_range", "holdout_shapes"}


@dataclass(frozen=True)
class InputGenerator:
    strategy: str
    params: dict = field(default_factory=dict, hash=False)
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in _FUNCS:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")

    def sample(self, i: int) -> KernelInput:
        kw = dict(self.params)
        if self.strategy in _TAKES_INDEX:
            kw["i"] = i
        return _FUNCS[self.strategy](sample_rng(self.seed, i), **kw)

    def stream(self, n: int):
        for i in range(n):
            yield self.sample(i)
