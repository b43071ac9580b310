"""Immutable registry of kernel implementations, their declarations, the
calibration triples, and the visible smoke test for each kernel family."""

from __future__ import annotations

from types import MappingProxyType

import numpy as np

from . import kernels as K
from .base import InvocationContext, KernelError, KernelImpl, KernelInput, KernelOutput

STATES = ("good", "bad", "baseline")


def _wrap(fn):
    """Turn an array-level kernel into a KernelImpl entry.  Kernel errors
    become structured exceptions on the output; anything else propagates."""

    def entry(inp: KernelInput, ctx: InvocationContext) -> KernelOutput:
        try:
            y = fn(inp, ctx)
        except KernelError as exc:
            return KernelOutput({}, exc)
        return KernelOutput({"y": np.asarray(y)})

    return entry


def _matmul(variant):
    return lambda i, c: K.matmul(i.tensors["a"], i.tensors["b"], "FP32", variant)


def _reduce(variant, op):
    def fn(i, c):
        return K.reduce(i.tensors["x"], i.attributes.get("op", op), c.schedule, variant,
                        i.attributes.get("accumulator", "FP32"))
    return fn


def _atomic(variant):
    return lambda i, c: K.atomic_sum(i.tensors["x"], variant, c)


def _collective(variant):
    return lambda i, c: K.simulated_collective_reduce(i.tensors["x"], i.attributes.get("ranks", 1), variant, c)


def _softmax(variant):
    return lambda i, c: K.softmax(i.tensors["x"], variant)


def _denormal(variant):
    return lambda i, c: K.scale_denormal(i.tensors["x"], variant)


def _exceptional(variant):
    return lambda i, c: K.elementwise_with_exceptional(i.tensors["x"], i.attributes.get("c", 1.5), variant)


def _gather(variant):
    return lambda i, c: K.gather(i.tensors["data"], i.tensors["indices"], i.attributes.get("bound"), variant)


def _fused(variant):
    return lambda i, c: K.fused_bias_gelu_matmul(i.tensors["a"], i.tensors["b"], i.tensors["bias"], variant,
                                                 i.attributes.get("activation", "gelu"))


def _shape(variant):
    return lambda i, c: K.shape_polymorphic_matmul(i.tensors["a"], i.tensors["b"], variant)


def _attention(variant):
    return lambda i, c: K.attention(i.tensors["q"], i.tensors["k"], i.tensors["v"], variant, c)


# (kernel, op_class, state suffix, builder, declared, description)
_SPECS = [
    ("matmul", "matmul", "good", _matmul("good"), {"accumulator": "FP32"}, "FP32 accumulation"),
    ("matmul", "matmul", "bad", _matmul("bad"), {"accumulator": "FP32"},
     "large partial sums silently stored in FP16"),
    ("matmul", "matmul", "baseline", _matmul("baseline"), {"accumulator": "FP32"}, "returns zeros"),

    ("reduce", "reduction", "good", _reduce("good", "sum"),
     {"accumulator": "FP32", "determinism": "RUN_TO_RUN", "schedules": len(K.BLOCK_SIZES)},
     "blocked pairwise sum, FP32 partials"),
    ("reduce", "reduction", "bad", _reduce("bad", "sum"),
     {"accumulator": "FP32", "determinism": "RUN_TO_RUN", "schedules": len(K.BLOCK_SIZES)},
     "large-block schedules keep partials in BF16"),
    ("reduce", "reduction", "baseline", _reduce("baseline", "sum"),
     {"accumulator": "FP32", "schedules": len(K.BLOCK_SIZES)}, "returns 0"),

    ("variance", "variance", "good", _reduce("good", "variance"), {"accumulator": "FP32",
     "stabilization": "welford"}, "shifted pairwise Welford"),
    ("variance", "variance", "bad", _reduce("bad", "variance"), {"accumulator": "FP32"},
     "E[x^2] - E[x]^2 in FP32"),
    ("variance", "variance", "baseline", _reduce("baseline", "variance"), {"accumulator": "FP32"}, "returns 0"),

    ("reduce_atomic", "reduction", "good", _atomic("good"), {"accumulator": "FP32", "determinism": "BITWISE"},
     "fixed-order tree"),
    ("reduce_atomic", "reduction", "bad", _atomic("bad"), {"accumulator": "FP32", "determinism": "BITWISE"},
     "emulated atomicAdd order, declared BITWISE"),
    ("reduce_atomic", "reduction", "baseline", _atomic("baseline"), {"determinism": "BITWISE"}, "returns 0"),

    ("collective", "collective", "good", _collective("good"), {"accumulator": "FP64", "determinism": "BITWISE"},
     "FP64 shard partials, tree combine"),
    ("collective", "collective", "bad", _collective("bad"), {"accumulator": "FP32", "determinism": "BITWISE"},
     "BF16 shard partials, random combine order"),
    ("collective", "collective", "baseline", _collective("baseline"), {}, "returns 0"),

    ("softmax", "softmax", "good", _softmax("good"), {"accumulator": "FP32", "stabilization": "max_subtraction"},
     "max-subtraction"),
    ("softmax", "softmax", "bad", _softmax("bad"), {"accumulator": "FP32"}, "naive exp/sum"),
    ("softmax", "softmax", "baseline", _softmax("baseline"), {}, "uniform output"),

    ("denormal", "elementwise", "good", _denormal("good"), {"denormal": "IEEE"}, "subnormals preserved"),
    ("denormal", "elementwise", "good_ftz", _denormal("good_ftz"), {"denormal": "FTZ"}, "declared flush-to-zero"),
    ("denormal", "elementwise", "bad", _denormal("bad"), {"denormal": "IEEE"}, "flushes while declaring IEEE"),
    ("denormal", "elementwise", "baseline", _denormal("baseline"), {"denormal": "IEEE"}, "returns zeros"),

    ("exceptional", "elementwise", "good", _exceptional("good"), {"nan": "IEEE_PROPAGATE"}, "IEEE propagation"),
    ("exceptional", "elementwise", "good_mask", _exceptional("good_mask"), {"nan": "MASK"},
     "non-finite inputs masked to 0"),
    ("exceptional", "elementwise", "good_raise", _exceptional("good_raise"), {"nan": "RAISE"},
     "raises on non-finite input"),
    ("exceptional", "elementwise", "bad", _exceptional("bad"), {"nan": "IEEE_PROPAGATE"},
     "NaN read as 0 while declaring propagation"),
    ("exceptional", "elementwise", "baseline", _exceptional("baseline"), {"nan": "IEEE_PROPAGATE"},
     "returns zeros"),

    ("gather", "indexing", "good", _gather("good"), {"oob": "RAISE"}, "raises on out-of-range index"),
    ("gather", "indexing", "good_clamp", _gather("good_clamp"), {"oob": "CLAMP"}, "clamps indices"),
    ("gather", "indexing", "good_zero", _gather("good_zero"), {"oob": "ZERO"}, "zero rows"),
    ("gather", "indexing", "bad", _gather("bad"), {}, "wraps indices, declares nothing"),
    ("gather", "indexing", "baseline", _gather("baseline"), {"oob": "RAISE"}, "raises on every call"),

    ("fused_bias_gelu", "fused_matmul", "good", _fused("good"), {"accumulator": "FP32"}, "FP32 intermediates"),
    ("fused_bias_gelu", "fused_matmul", "bad", _fused("bad"), {"accumulator": "FP32"},
     "FP16 intermediate before activation"),
    ("fused_bias_gelu", "fused_matmul", "baseline", _fused("baseline"), {"accumulator": "FP32"}, "omits bias"),

    ("shape_matmul", "matmul", "good", _shape("good"), {"accumulator": "FP32", "shape_class": "all"},
     "correct at every shape"),
    ("shape_matmul", "matmul", "bad", _shape("bad"), {"accumulator": "FP32", "shape_class": "all"},
     "power-of-two fast path, broken fallback"),
    ("shape_matmul", "matmul", "baseline", _shape("baseline"), {"shape_class": "all"}, "returns zeros"),

    ("attention", "fused_attention", "good", _attention("good"),
     {"accumulator": "FP32", "determinism": "BITWISE", "shape_class": "D in {64, 128, 256}"},
     "FP32 online softmax"),
    ("attention", "fused_attention", "bad", _attention("bad"),
     {"accumulator": "FP32", "determinism": "BITWISE", "shape_class": "D in {64, 128, 256}"},
     "softmax accumulators stored in FP16"),
    ("attention", "fused_attention", "bad_shape", _attention("bad_shape"),
     {"accumulator": "FP32", "determinism": "BITWISE", "shape_class": "D in {64, 128, 256}"},
     "silent unnormalized fallback at unsupported D"),
    ("attention", "fused_attention", "bad_nondet", _attention("bad_nondet"),
     {"accumulator": "FP32", "determinism": "BITWISE", "shape_class": "D in {64, 128, 256}"},
     "random key-tile order, declared BITWISE"),
    ("attention", "fused_attention", "baseline", _attention("baseline"),
     {"accumulator": "FP32", "determinism": "BITWISE"}, "returns zeros"),
]


def _build():
    out = {}
    for kernel, op_class, state, fn, declared, desc in _SPECS:
        impl_id = f"{kernel}.{state}"
        cal = "bad" if state.startswith("bad") else ("good" if state.startswith("good") else "baseline")
        out[impl_id] = KernelImpl(impl_id, kernel, op_class, cal, MappingProxyType(dict(declared)), _wrap(fn), desc)
    return MappingProxyType(out)


REGISTRY = _build()


class UnknownImpl(KeyError):
    pass


def get_impl(impl_id: str) -> KernelImpl:
    try:
        return REGISTRY[impl_id]
    except KeyError:
        raise UnknownImpl(f"unknown implementation {impl_id!r}; known: {', '.join(sorted(REGISTRY))}") from None


def list_impls() -> list[KernelImpl]:
    return [REGISTRY[k] for k in sorted(REGISTRY)]


# contract class -> (good, bad, baseline) impl ids
TRIPLES = MappingProxyType({
    "C-PRC-01": ("matmul.good", "matmul.bad", "matmul.baseline"),
    "C-PRC-02": ("softmax.good", "softmax.bad", "softmax.baseline"),
    "C-PRC-03": ("denormal.good", "denormal.bad", "denormal.baseline"),
    "C-ORD-01": ("reduce.good", "reduce.bad", "reduce.baseline"),
    "C-ORD-02": ("reduce_atomic.good", "reduce_atomic.bad", "reduce_atomic.baseline"),
    "C-ORD-03": ("collective.good", "collective.bad", "collective.baseline"),
    "C-CMP-01": ("fused_bias_gelu.good", "fused_bias_gelu.bad", "fused_bias_gelu.baseline"),
    "C-CMP-02": ("reduce.good", "reduce.bad", "reduce.baseline"),
    "C-CMP-03": ("shape_matmul.good", "shape_matmul.bad", "shape_matmul.baseline"),
    "C-EXC-01": ("exceptional.good", "exceptional.bad", "exceptional.baseline"),
    "C-EXC-02": ("gather.good", "gather.bad", "gather.baseline"),
    "C-FA3-NUM": ("attention.good", "attention.bad", "attention.baseline"),
    "C-FA3-SHAPE": ("attention.good", "attention.bad_shape", "attention.baseline"),
    "C-FA3-DET": ("attention.good", "attention.bad_nondet", "attention.baseline"),
})


def triple_for(contract_id: str) -> tuple[KernelImpl, KernelImpl, KernelImpl]:
    """Triple for a contract id; extended ids (C-PRC-01-FP8-...) fall back to
    their base class."""
    ids = TRIPLES.get(contract_id)
    if ids is None:
        base = "-".join(contract_id.split("-")[:3])
        ids = TRIPLES.get(base)
    if ids is None:
        raise UnknownImpl(f"no calibration triple for {contract_id!r}")
    return tuple(get_impl(i) for i in ids)


# ---------------------------------------------------------------------------
# visible smoke tests: one tiny fixed instance per kernel family, relative 1e-2

def _smoke_case(kernel: str):
    r = np.random.default_rng(12345)
    if kernel in ("matmul", "shape_matmul"):
        x = r.uniform(-1, 1, (4, 4)).astype(np.float32)
        return KernelInput({"a": np.eye(4, dtype=np.float32), "b": x}), x
    if kernel in ("reduce", "reduce_atomic"):
        return KernelInput({"x": np.array([1, 2, 3, 4], np.float32)}, attributes={"op": "sum"}), np.array(10.0)
    if kernel == "variance":
        return KernelInput({"x": np.array([1, 2, 3, 4], np.float32)}, attributes={"op": "variance"}), np.array(1.25)
    if kernel == "collective":
        return (KernelInput({"x": np.arange(1, 9, dtype=np.float32)}, attributes={"ranks": 2}), np.array(36.0))
    if kernel == "softmax":
        x = np.array([1.0, 2.0, 3.0])
        e = np.exp(x - 3)
        return KernelInput({"x": x.astype(np.float32)}), e / e.sum()
    if kernel == "denormal":
        x = np.array([1.0, -2.0, 0.5], np.float32)
        return KernelInput({"x": x}), 2.0 * x
    if kernel == "exceptional":
        x = np.array([1.0, -2.0, 0.5], np.float32)
        return KernelInput({"x": x}), x + 1.5
    if kernel == "gather":
        data = np.arange(12, dtype=np.float32).reshape(4, 3)
        idx = np.array([0, 2, 3, 1])
        return KernelInput({"data": data, "indices": idx}, attributes={"bound": 4}), data[idx]
    if kernel == "fused_bias_gelu":
        x = r.uniform(-1, 1, (2, 4)).astype(np.float32)
        bias = np.full(4, 0.5, np.float32)
        return (KernelInput({"a": x, "b": np.eye(4, dtype=np.float32), "bias": bias}),
                K.gelu(x.astype(np.float64) + 0.5))
    if kernel == "attention":
        q, k, v = (r.standard_normal((1, 1, 8, 64)).astype(np.float32) for _ in range(3))
        return KernelInput({"q": q, "k": k, "v": v}), K.attention_reference(q, k, v, np.float64)
    raise UnknownImpl(f"no smoke test for kernel family {kernel!r}")


def smoke_test(impl: KernelImpl) -> bool:
    """Loose visible test: one fixed instance, relative 1e-2 on max norm."""
    inp, expected = _smoke_case(impl.kernel)
    out = impl(inp, InvocationContext(seed=0))
    if out.raised:
        return False
    y = np.asarray(out.y, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    if y.shape != expected.shape or not np.all(np.isfinite(y)):
        return False
    scale = max(np.max(np.abs(expected)), np.finfo(np.float64).tiny)
    return bool(np.max(np.abs(y - expected)) <= 1e-2 * scale)
