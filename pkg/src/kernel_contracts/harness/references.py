"""Reference oracles named by a contract's reference clause."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..contract_lang import RefSpec
from ..kernel_zoo import InvocationContext, KernelImpl, KernelInput
from ..kernel_zoo import kernels as K
from ..numerics import FORMATS


class UnsupportedReference(Exception):
    pass


class OracleUnavailable(Exception):
    pass


@dataclass(frozen=True)
class AlgebraicCheck:
    """A property the caller evaluates over kernel outputs, not a tensor."""

    property: str | None

    def compare_pairs(self) -> bool:
        return self.property == "idempotence"


KNOWN_OPTIONS = {
    "softmax_stabilization": ("max_subtraction",),
    "accumulator": tuple(FORMATS),
    "reduction_order": ("row_major", "same", "sequential"),
}


def _dtype(fmt: str):
    if fmt == "FP64":
        return np.float64
    if fmt == "FP32":
        return np.float32
    raise UnsupportedReference(f"no {fmt} oracle; references are computed in FP32 or FP64")


def _higher_precision(ref: RefSpec, inp: KernelInput, impl: KernelImpl):
    fmt = ref.target
    if fmt not in FORMATS:
        raise UnsupportedReference(f"unknown reference format {fmt!r}")
    for name, value in ref.options:
        if name not in KNOWN_OPTIONS:
            raise UnsupportedReference(f"unknown reference option {name!r}")
        if value not in KNOWN_OPTIONS[name]:
            raise UnsupportedReference(f"unsupported value {value!r} for {name}")
    dt = _dtype(ref.option("accumulator", fmt))
    t = inp.tensors
    kern = impl.kernel
    if kern in ("matmul", "shape_matmul"):
        if dt is np.float64:
            return K.matmul_fp64_same_order(t["a"], t["b"])
        return np.asarray(t["a"], np.float32) @ np.asarray(t["b"], np.float32)
    if kern in ("reduce", "reduce_atomic", "collective"):
        x = np.asarray(t["x"], dtype=dt)
        op = inp.attributes.get("op", "sum")
        s = np.cumsum(x)[-1]  # row-major, one element at a time
        if op == "sum":
            return np.asarray(s, dtype=np.float64)
        if op == "mean":
            return np.asarray(s / x.size, dtype=np.float64)
        if op == "norm":
            return np.asarray(np.sqrt(np.cumsum(x * x)[-1]), dtype=np.float64)
        if op == "variance":
            return np.asarray(K.variance_fp64(x), dtype=np.float64)
    if kern == "variance":
        return np.asarray(K.variance_fp64(t["x"]))
    if kern == "softmax":
        if dt is np.float64:
            return K.softmax_fp64(t["x"])
        return K.softmax(t["x"], "good")
    if kern == "fused_bias_gelu":
        a, b, bias = (np.asarray(t[n], dtype=dt) for n in ("a", "b", "bias"))
        z = a @ b + bias
        act = inp.attributes.get("activation", "gelu")
        return z if act is None else K.gelu(z)
    if kern == "attention":
        return K.attention_reference(t["q"], t["k"], t["v"], dt)
    raise UnsupportedReference(f"no {fmt} oracle for kernel family {kern!r}")


def _pad_to_pow2(a, rows, cols):
    out = np.zeros((rows, cols), dtype=a.dtype)
    out[:a.shape[0], :a.shape[1]] = a
    return out


def _next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def _stable_algorithm(ref: RefSpec, inp: KernelInput, impl: KernelImpl):
    name = (ref.target or "").lower()
    t = inp.tensors
    if name == "sequential_composition":
        if impl.kernel != "fused_bias_gelu":
            raise UnsupportedReference(f"sequential composition is defined for fused kernels, not {impl.kernel!r}")
        return K.sequential_bias_gelu(t["a"], t["b"], t["bias"], inp.attributes.get("activation", "gelu"))
    if name == "highest-precision_schedule":
        if "schedules" not in impl.declared:
            raise UnsupportedReference(f"{impl.id} declares no schedule space")
        # every schedule shares FP32, so the sequential block-size-1 schedule stands in
        out = impl(inp, InvocationContext(schedule=0))
        if out.raised:
            raise OracleUnavailable(f"reference schedule raised {out.exception.kind}")
        return out.y
    if name == "same_kernel":
        if impl.kernel not in ("matmul", "shape_matmul"):
            raise UnsupportedReference(f"no reference shape rule for {impl.kernel!r}")
        a, b = t["a"], t["b"]
        m, k = a.shape
        p = b.shape[1]
        M, Kd, P = _next_pow2(m), _next_pow2(k), _next_pow2(p)
        padded = KernelInput({"a": _pad_to_pow2(a, M, Kd), "b": _pad_to_pow2(b, Kd, P)}, inp.formats,
                             inp.attributes)
        out = impl(padded, InvocationContext())
        if out.raised:
            raise OracleUnavailable(f"reference shape raised {out.exception.kind}")
        return out.y[:m, :p]
    raise UnsupportedReference(f"unknown stable algorithm {ref.target!r}")


def resolve_reference(ref: RefSpec, inp: KernelInput, impl: KernelImpl):
    """Return the oracle tensor for ``inp`` or an AlgebraicCheck."""
    if ref.kind == "higher_precision":
        return _higher_precision(ref, inp, impl)
    if ref.kind == "stable_algorithm":
        return _stable_algorithm(ref, inp, impl)
    if ref.kind == "algebraic":
        return AlgebraicCheck(ref.target)
    raise UnsupportedReference(f"{ref.kind} reference ({ref.target}) cannot be computed on this host")
