"""CPU kernels with conforming and deliberately violating variants.

Arithmetic runs natively in float32 where the declared accumulator is FP32;
lower formats are emulated by quantizing at each storage or accumulation
point.  Nondeterminism (atomic-style reordering) comes only from the seed
carried by the invocation context.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from ..numerics import FORMATS, ShapeMismatch, quantize
from .base import DimensionUnsupported, ExceptionalValue, IndexOutOfBounds, InvocationContext

F32 = np.float32

# block sizes of the emulated tuning space; schedule i uses BLOCK_SIZES[i]
BLOCK_SIZES = (1, 2, 4, 8, 16, 32, 64, 128)
DEFAULT_SCHEDULE = 5
SAT_THRESHOLD = 2.0 ** 12  # bad matmul: partials above this get stored as FP16
FP16_MAX = FORMATS["FP16"].max_finite
SUPPORTED_HEAD_DIMS = (64, 128, 256)


def _check_variant(variant, allowed):
    if variant not in allowed:
        raise ValueError(f"unknown variant {variant!r}; expected one of {allowed}")


def _f32(x) -> np.ndarray:
    return np.asarray(x, dtype=F32)


# ---------------------------------------------------------------------------
# matmul

def matmul(a, b, declared_accumulator: str = "FP32", variant: str = "good") -> np.ndarray:
    """good: accumulate in the declared format (FP32 or FP64) and round once.
    bad: FP32 K-blocks of 64, but any running sum past 2^12 is stored as FP16
    (saturating at 65504).  baseline: zeros."""
    _check_variant(variant, ("good", "bad", "baseline"))
    a, b = np.asarray(a), np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    m, p = a.shape[0], b.shape[1]
    if variant == "baseline":
        return np.zeros((m, p), dtype=F32)
    if variant == "good":
        if declared_accumulator == "FP64":
            return (a.astype(np.float64) @ b.astype(np.float64)).astype(F32)
        return _f32(a) @ _f32(b)
    acc = np.zeros((m, p), dtype=F32)
    a32, b32 = _f32(a), _f32(b)
    for k0 in range(0, a.shape[1], 64):
        acc = acc + a32[:, k0:k0 + 64] @ b32[k0:k0 + 64, :]
        big = np.abs(acc) > SAT_THRESHOLD
        if big.any():
            acc[big] = np.clip(quantize(acc[big], "FP16"), -FP16_MAX, FP16_MAX)
    return acc


def matmul_fp64_same_order(a, b) -> np.ndarray:
    """FP64 oracle summing k = 0..K-1 strictly in order."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    prods = a[:, :, None] * b[None, :, :]
    return np.cumsum(prods, axis=1)[:, -1, :] if a.shape[1] else np.zeros((a.shape[0], b.shape[1]))


# ---------------------------------------------------------------------------
# reductions

def _round(x, fmt):
    if fmt == "FP32":
        return np.asarray(x, dtype=F32)
    if fmt == "FP64":
        return np.asarray(x, dtype=np.float64)
    return quantize(np.asarray(x, dtype=np.float64), fmt)


def _add(x, y, fmt):
    if fmt in ("FP32", "FP64"):
        return x + y
    return quantize(np.asarray(x, dtype=np.float64) + y, fmt)


def blocked_sum(x, block: int, fmt: str = "FP32", order=None) -> float:
    """Pairwise tree inside blocks of ``block`` elements, then block partials
    accumulated left to right, every operation rounded to ``fmt``.  ``order``
    optionally permutes the partials (emulated atomics)."""
    x = _round(np.ravel(x), fmt)
    n = x.size
    if n == 0:
        return 0.0
    nb = -(-n // block)
    pad = nb * block - n
    if pad:
        x = np.concatenate([x, np.zeros(pad, dtype=x.dtype)])
    v = x.reshape(nb, block)
    while v.shape[1] > 1:
        if v.shape[1] % 2:
            v = np.concatenate([v, np.zeros((nb, 1), dtype=v.dtype)], axis=1)
        v = _add(v[:, 0::2], v[:, 1::2], fmt)
    parts = v[:, 0]
    if order is not None:
        parts = parts[order]
    if fmt in ("FP32", "FP64"):
        return float(np.cumsum(parts)[-1])
    acc = parts[0]
    for q in parts[1:]:
        acc = _add(acc, q, fmt)
    return float(acc)


def _chan_variance(x: np.ndarray) -> float:
    """Shifted Welford in float32: pairwise merge of (count, mean, M2) with
    Chan's update.  Population variance."""
    x = _f32(x)
    x = x - x[0]  # exact for the clustered data this targets; removes the common offset
    n = x.size
    size = 1 << max(0, int(np.ceil(np.log2(n))))
    cnt = np.zeros(size, dtype=F32)
    mean = np.zeros(size, dtype=F32)
    m2 = np.zeros(size, dtype=F32)
    cnt[:n], mean[:n] = 1, x
    while cnt.size > 1:
        na, nb = cnt[0::2], cnt[1::2]
        ma, mb = mean[0::2], mean[1::2]
        tot = na + nb
        safe = np.where(tot > 0, tot, F32(1))
        delta = mb - ma
        mean = ma + delta * (nb / safe)
        m2 = m2[0::2] + m2[1::2] + delta * delta * (na * nb / safe)
        cnt = tot
    return float(m2[0] / F32(n))


def reduce(x, op: str = "sum", schedule: int | None = None, variant: str = "good",
           accumulator: str = "FP32") -> float:
    """good: blocked pairwise reduction with the schedule's block size in the
    declared accumulator.  bad: schedules with blocks of 32 or more keep their
    partials in BF16 (a tuning-dependent precision drop).  baseline: 0."""
    _check_variant(variant, ("good", "bad", "baseline"))
    x = np.ravel(np.asarray(x))
    if x.size == 0:
        raise ShapeMismatch("reduce over empty input")
    if variant == "baseline":
        return 0.0
    s = DEFAULT_SCHEDULE if schedule is None else schedule
    block = BLOCK_SIZES[s]
    fmt = accumulator
    if variant == "bad" and block >= 32:
        fmt = "BF16"
    if op == "variance":
        if variant == "good":
            return float(F32(_chan_variance(x)))
        x32 = _f32(x)
        mean = F32(blocked_sum(x32, block, fmt)) / F32(x.size)
        msq = F32(blocked_sum(x32 * x32, block, fmt)) / F32(x.size)
        return float(msq - mean * mean)
    if op == "sum":
        return float(F32(blocked_sum(x, block, fmt)))
    if op == "mean":
        return float(F32(blocked_sum(x, block, fmt)) / F32(x.size))
    if op == "norm":
        x32 = _f32(x)
        return float(np.sqrt(F32(blocked_sum(x32 * x32, block, fmt))))
    raise ValueError(f"unknown reduction op {op!r}")


def atomic_sum(x, variant: str = "good", ctx: InvocationContext | None = None) -> float:
    """good: fixed tree order.  bad: partials of 1 element combined in a
    per-invocation random order, the emulated atomicAdd."""
    _check_variant(variant, ("good", "bad", "baseline"))
    x = np.ravel(np.asarray(x))
    if variant == "baseline":
        return 0.0
    if variant == "good":
        return float(F32(blocked_sum(x, BLOCK_SIZES[DEFAULT_SCHEDULE], "FP32")))
    order = (ctx or InvocationContext()).rng().permutation(x.size)
    return float(F32(blocked_sum(x, 1, "FP32", order=order)))


def variance_fp64(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean((x - x.mean()) ** 2))


# ---------------------------------------------------------------------------
# simulated collective

def simulated_collective_reduce(x, ranks: int, variant: str = "good",
                                ctx: InvocationContext | None = None) -> float:
    """Split ``x`` into ``ranks`` shards (zero-padding the last), reduce each,
    combine.  good: FP64 shard partials, binary-tree combine, one FP32
    rounding.  bad: BF16 shard accumulators combined in random order."""
    _check_variant(variant, ("good", "bad", "baseline"))
    if ranks < 1:
        raise ValueError("ranks must be >= 1")
    x = np.ravel(np.asarray(x, dtype=np.float64))
    if variant == "baseline":
        return 0.0
    per = -(-x.size // ranks)
    pad = per * ranks - x.size
    if pad:
        x = np.concatenate([x, np.zeros(pad)])
    shards = x.reshape(ranks, per)
    block = BLOCK_SIZES[DEFAULT_SCHEDULE]
    if variant == "good":
        parts = np.array([blocked_sum(s, block, "FP64") for s in shards])
        while parts.size > 1:
            if parts.size % 2:
                parts = np.append(parts, 0.0)
            parts = parts[0::2] + parts[1::2]
        return float(F32(parts[0]))
    parts = np.array([blocked_sum(_f32(s), 1, "BF16") for s in shards])
    order = (ctx or InvocationContext()).rng().permutation(ranks)
    acc = parts[order[0]]
    for i in order[1:]:
        acc = float(quantize(acc + parts[i], "BF16"))
    return float(F32(acc))


# ---------------------------------------------------------------------------
# softmax

def softmax(x, variant: str = "good") -> np.ndarray:
    """Softmax over the last axis.  good: max-subtraction in float32.
    bad: naive exp/sum (overflows for large inputs).  baseline: uniform."""
    _check_variant(variant, ("good", "bad", "baseline"))
    x = _f32(x)
    if variant == "baseline":
        return np.full(x.shape, 1.0 / x.shape[-1], dtype=F32)
    with np.errstate(over="ignore", invalid="ignore"):
        if variant == "good":
            e = np.exp(x - x.max(axis=-1, keepdims=True))
        else:
            e = np.exp(x)
        return e / e.sum(axis=-1, keepdims=True, dtype=F32)


def softmax_fp64(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# elementwise with exceptional values and denormals

def scale_denormal(x, variant: str = "good") -> np.ndarray:
    """y = 2x in float32.  good: IEEE subnormals preserved.  good_ftz:
    declared FTZ, flushes inputs and outputs.  bad: flushes while claiming
    IEEE.  baseline: zeros."""
    _check_variant(variant, ("good", "good_ftz", "bad", "baseline"))
    x = _f32(x)
    if variant == "baseline":
        return np.zeros_like(x)
    if variant == "good":
        return x * F32(2)
    tiny = np.finfo(F32).tiny
    xf = np.where(np.abs(x) < tiny, np.copysign(F32(0), x), x)
    y = xf * F32(2)
    return np.where(np.abs(y) < tiny, np.copysign(F32(0), y), y)


def elementwise_with_exceptional(x, c: float = 1.5, variant: str = "good") -> np.ndarray:
    """y = x + c.  good: IEEE propagation.  good_mask: non-finite inputs give 0.
    good_raise: raises on non-finite input.  bad: NaN silently read as 0 while
    claiming IEEE propagation.  baseline: zeros."""
    _check_variant(variant, ("good", "good_mask", "good_raise", "bad", "baseline"))
    x = _f32(x)
    if variant == "baseline":
        return np.zeros_like(x)
    if variant == "good":
        return x + F32(c)
    if variant == "good_mask":
        return np.where(np.isfinite(x), x + F32(c), F32(0))
    if variant == "good_raise":
        bad = np.flatnonzero(~np.isfinite(x))
        if bad.size:
            raise ExceptionalValue(bad[0])
        return x + F32(c)
    return np.where(np.isnan(x), F32(0), x) + F32(c)


# ---------------------------------------------------------------------------
# gather

def gather(data, indices, bound: int | None = None, variant: str = "good") -> np.ndarray:
    """Rows of ``data`` at ``indices``.  good raises on the first
    out-of-range index; good_clamp clamps; good_zero returns zero rows; bad
    wraps modulo ``bound`` without declaring it; baseline always raises."""
    _check_variant(variant, ("good", "good_clamp", "good_zero", "bad", "baseline"))
    data = np.asarray(data)
    idx = np.asarray(indices, dtype=np.int64)
    b = data.shape[0] if bound is None else int(bound)
    oob = (idx < 0) | (idx >= b)
    if variant == "baseline":
        raise IndexOutOfBounds(int(idx.flat[0]) if idx.size else 0, b)
    if variant == "good":
        if oob.any():
            raise IndexOutOfBounds(int(idx[oob].flat[0]), b)
        return data[idx]
    if variant == "good_clamp":
        return data[np.clip(idx, 0, b - 1)]
    if variant == "good_zero":
        out = data[np.where(oob, 0, idx)].copy()
        out[oob] = 0
        return out
    return data[(idx % b + b) % b]


# ---------------------------------------------------------------------------
# fused matmul + bias + activation

def gelu(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return z * ndtr(z)


def sequential_bias_gelu(a, b, bias, activation: str | None = "gelu") -> np.ndarray:
    """Unfused oracle with FP32 intermediates: matmul, then bias, then act."""
    h = _f32(a) @ _f32(b)
    z = h + _f32(bias)
    if activation is None:
        return z
    return gelu(z).astype(F32)


def fused_bias_gelu_matmul(a, b, bias, variant: str = "good", activation: str | None = "gelu") -> np.ndarray:
    """good: one pass keeping FP32 intermediates.  bad: the bias output is
    staged in FP16 before the activation.  baseline: bias dropped."""
    _check_variant(variant, ("good", "bad", "baseline"))
    a, b = np.asarray(a), np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    bias = np.asarray(bias)
    if bias.shape not in ((b.shape[1],), ()):
        raise ShapeMismatch(f"bias shape {bias.shape} does not match {b.shape[1]} columns")
    h = _f32(a) @ _f32(b)
    if variant == "baseline":
        z = h
    else:
        z = h + _f32(bias)
    if variant == "bad":
        z = quantize(z.astype(np.float64), "FP16").astype(F32)
    if activation is None:
        return z
    return gelu(z).astype(F32)


# ---------------------------------------------------------------------------
# shape-polymorphic matmul

def is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def shape_polymorphic_matmul(a, b, variant: str = "good") -> np.ndarray:
    """good: correct at every shape.  bad: correct when M, N, K are all powers
    of two, otherwise reads B as if it were stored column-major.
    baseline: zeros."""
    _check_variant(variant, ("good", "bad", "baseline"))
    a, b = _f32(a), _f32(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    if variant == "baseline":
        return np.zeros((m, n), dtype=F32)
    if variant == "good" or (is_pow2(m) and is_pow2(n) and is_pow2(k)):
        return a @ b
    b_misread = b.ravel().reshape(n, k).T
    return a @ b_misread


# ---------------------------------------------------------------------------
# attention

TILE = 32


def attention_reference(q, k, v, dtype=np.float32) -> np.ndarray:
    """Straightforward attention: max-subtracted softmax, row-major sums."""
    q, k, v = (np.asarray(t, dtype=dtype) for t in (q, k, v))
    scale = dtype(1.0 / np.sqrt(q.shape[-1]))
    s = (q @ np.swapaxes(k, -1, -2)) * scale
    p = np.exp(s - s.max(axis=-1, keepdims=True))
    return (p @ v) / p.sum(axis=-1, keepdims=True)


def attention(q, k, v, variant: str = "good", ctx: InvocationContext | None = None) -> np.ndarray:
    """Tiled online-softmax attention over (B, H, S, D) float32 inputs.

    good: FP32 throughout; raises DimensionUnsupported unless D is 64/128/256.
    bad: softmax numerator, running row sum and output accumulator stored in
    FP16.  bad_shape: accepts any D; off the supported set it takes a fallback
    path that skips the final normalization.  bad_nondet: visits key tiles
    in a per-invocation random order while claiming bitwise determinism.
    baseline: zeros.
    """
    _check_variant(variant, ("good", "bad", "bad_shape", "bad_nondet", "baseline"))
    q, k, v = _f32(q), _f32(k), _f32(v)
    if q.shape != k.shape or k.shape[:-1] != v.shape[:-1] or q.ndim != 4:
        raise ShapeMismatch(f"attention shapes {q.shape}, {k.shape}, {v.shape}")
    d = q.shape[-1]
    if variant == "baseline":
        return np.zeros(q.shape[:-1] + (v.shape[-1],), dtype=F32)
    supported = d in SUPPORTED_HEAD_DIMS
    if not supported and variant != "bad_shape":
        raise DimensionUnsupported(d, SUPPORTED_HEAD_DIMS)
    s_len = k.shape[-2]
    tiles = list(range(0, s_len, TILE))
    if variant == "bad_nondet":
        tiles = [tiles[i] for i in (ctx or InvocationContext()).rng().permutation(len(tiles))]
    low = variant == "bad"

    def store(t):
        return quantize(t.astype(np.float64), "FP16").astype(F32) if low else t

    scale = F32(1.0 / np.sqrt(d))
    m = np.full(q.shape[:-1] + (1,), -np.inf, dtype=F32)
    l = np.zeros(q.shape[:-1] + (1,), dtype=F32)
    o = np.zeros(q.shape[:-1] + (v.shape[-1],), dtype=F32)
    for t0 in tiles:
        kt, vt = k[..., t0:t0 + TILE, :], v[..., t0:t0 + TILE, :]
        s = (q @ np.swapaxes(kt, -1, -2)) * scale
        m_new = np.maximum(m, s.max(axis=-1, keepdims=True))
        alpha = np.exp(m - m_new)
        p = store(np.exp(s - m_new))
        l = store(l * alpha + p.sum(axis=-1, keepdims=True, dtype=F32))
        o = store(o * alpha + p @ vt)
        m = m_new
    if variant == "bad_shape" and not supported:
        return o
    return o / l
