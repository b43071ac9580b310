"""Software-emulated precision formats, ULP arithmetic and tolerance verdicts.

Every format is emulated on top of float64: values are carried as float64
numbers that happen to lie on the target format's grid.  Rounding is
round-to-nearest-even with an unbounded exponent, followed by the format's
overflow rule (infinity, or saturation for FP8_E4M3) and, under an FTZ
policy, a flush of subnormal results to signed zero.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "PrecisionFormat",
    "FORMATS",
    "get_format",
    "UnknownFormat",
    "quantize",
    "ulp_distance",
    "ulp_distances",
    "NOT_COMPARABLE",
    "ToleranceSpec",
    "Residual",
    "ToleranceVerdict",
    "ShapeMismatch",
    "evaluate_tolerance",
    "derived_bound",
    "UnknownClass",
    "registry_json",
    "registry_hash",
]


class UnknownFormat(KeyError):
    pass


class UnknownClass(KeyError):
    pass


class ShapeMismatch(ValueError):
    pass


class _NotComparable:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NOT_COMPARABLE"

    def __bool__(self):
        return False


NOT_COMPARABLE = _NotComparable()


@dataclass(frozen=True)
class PrecisionFormat:
    name: str
    mantissa_bits: int
    exponent_bits: int
    emin: int  # exponent of the smallest normal
    max_finite: float
    has_inf_nan: bool = True
    saturating: bool = False
    denormal_policy: str = "IEEE"

    @property
    def eps(self) -> float:
        return 2.0 ** -self.mantissa_bits

    @property
    def unit_roundoff(self) -> float:
        return self.eps / 2

    @property
    def min_normal(self) -> float:
        return 2.0 ** self.emin

    @property
    def min_subnormal(self) -> float:
        return 2.0 ** (self.emin - self.mantissa_bits)

    @property
    def bits(self) -> int:
        return 1 + self.exponent_bits + self.mantissa_bits

    def with_policy(self, denormal_policy: str) -> "PrecisionFormat":
        if denormal_policy not in ("IEEE", "FTZ"):
            raise ValueError(f"unknown denormal policy {denormal_policy!r}")
        return replace(self, denormal_policy=denormal_policy)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mantissa_bits": self.mantissa_bits,
            "exponent_bits": self.exponent_bits,
            "emin": self.emin,
            "eps": self.eps,
            "unit_roundoff": self.unit_roundoff,
            "max_finite": self.max_finite,
            "has_inf_nan": self.has_inf_nan,
            "saturating": self.saturating,
            "denormal_policy": self.denormal_policy,
        }


def _ieee_max(mb: int, emax: int) -> float:
    return (2.0 - 2.0 ** -mb) * 2.0 ** emax


FORMATS: dict[str, PrecisionFormat] = {
    f.name: f
    for f in (
        PrecisionFormat("FP64", 52, 11, -1022, float(np.finfo(np.float64).max)),
        PrecisionFormat("FP32", 23, 8, -126, _ieee_max(23, 127)),
        PrecisionFormat("FP16", 10, 5, -14, _ieee_max(10, 15)),
        PrecisionFormat("BF16", 7, 8, -126, _ieee_max(7, 127)),
        # E4M3 spends its top mantissa code of the top binade on NaN: 1.75 * 2^8
        PrecisionFormat("FP8_E4M3", 3, 4, -6, 448.0, has_inf_nan=False, saturating=True),
        PrecisionFormat("FP8_E5M2", 2, 5, -14, _ieee_max(2, 15)),
    )
}


def get_format(fmt) -> PrecisionFormat:
    if isinstance(fmt, PrecisionFormat):
        return fmt
    try:
        return FORMATS[fmt]
    except KeyError:
        raise UnknownFormat(fmt) from None


def registry_json() -> str:
    return json.dumps({k: v.to_dict() for k, v in sorted(FORMATS.items())}, sort_keys=True)


def registry_hash() -> str:
    return hashlib.sha256(registry_json().encode()).hexdigest()


# ---------------------------------------------------------------------------
# quantization

def _quantize_array(x: np.ndarray, f: PrecisionFormat) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if f.name == "FP64":
        q = x.copy()
    elif f.name == "FP32" and f.denormal_policy == "IEEE":
        # native cast is RNE with IEEE overflow; identical to the generic path
        with np.errstate(over="ignore"):
            q = x.astype(np.float32).astype(np.float64)
    else:
        q = np.array(x, dtype=np.float64, copy=True)
        finite = np.isfinite(x) & (x != 0)
        xs = x[finite]
        if xs.size:
            _, e = np.frexp(np.abs(xs))
            e = np.maximum(e - 1, f.emin)
            scale = np.ldexp(1.0, e - f.mantissa_bits)
            with np.errstate(over="ignore"):  # rounding past FP64 max lands in the overflow branch
                r = np.rint(xs / scale) * scale
            over = np.abs(r) > f.max_finite
            if over.any():
                if f.saturating or not f.has_inf_nan:
                    r[over] = np.copysign(f.max_finite, r[over])
                else:
                    r[over] = np.copysign(np.inf, r[over])
            q[finite] = r
        if not f.has_inf_nan:
            inf = np.isinf(x)
            q[inf] = np.copysign(f.max_finite, x[inf])
    if f.denormal_policy == "FTZ":
        sub = np.abs(q) < f.min_normal
        q[sub] = np.copysign(0.0, q[sub])
    q[np.isnan(q)] = np.nan  # collapse payloads and signs to one canonical NaN
    return q


def quantize(x, fmt):
    """Round ``x`` (scalar or array) to the nearest value of ``fmt`` (RNE)."""
    f = get_format(fmt)
    if np.ndim(x) == 0:
        return float(_quantize_array(np.array([x], dtype=np.float64), f)[0])
    return _quantize_array(x, f)


# ---------------------------------------------------------------------------
# ULP arithmetic

def _ordinals(v: np.ndarray, f: PrecisionFormat) -> np.ndarray:
    """Signed rank of each (representable) value on the format grid, as float64.

    Both zeros map to 0; +inf sits one step above max_finite.
    """
    a = np.abs(v)
    idx = np.zeros_like(a)
    sub = a < f.min_normal
    idx[sub] = a[sub] / f.min_subnormal
    norm = ~sub & np.isfinite(a)
    if norm.any():
        m, e = np.frexp(a[norm])
        e = e - 1
        idx[norm] = 2.0 ** f.mantissa_bits * (e - f.emin + 1) + (2 * m - 1) * 2.0 ** f.mantissa_bits
    inf = np.isinf(a)
    if inf.any():
        top = _ordinals(np.array([f.max_finite]), f)[0]
        idx[inf] = top + 1
    return np.copysign(idx, v) * (v != 0)


def _fp64_ordinal(v: float) -> int:
    i = int(np.array([v], dtype=np.float64).view(np.int64)[0])
    return -(i & 0x7FFF_FFFF_FFFF_FFFF) if i < 0 else i


def ulp_distance(a: float, b: float, fmt):
    """Rank difference of two representable values; NOT_COMPARABLE for NaN or
    opposite infinities."""
    f = get_format(fmt)
    a, b = float(a), float(b)
    if math.isnan(a) or math.isnan(b):
        return NOT_COMPARABLE
    if math.isinf(a) and math.isinf(b) and (a > 0) != (b > 0):
        return NOT_COMPARABLE
    if f.name == "FP64":
        return abs(_fp64_ordinal(a) - _fp64_ordinal(b))
    oa, ob = _ordinals(np.array([a, b]), f)
    return int(abs(oa - ob))


def ulp_distances(y, r, fmt) -> np.ndarray:
    """Elementwise ULP distance as float64; both-NaN counts as 0, anything
    not comparable as +inf."""
    f = get_format(fmt)
    y = np.asarray(y, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if f.name == "FP64":
        iy = y.view(np.int64)
        ir = r.view(np.int64)
        oy = np.where(iy < 0, -(iy & 0x7FFF_FFFF_FFFF_FFFF), iy).astype(np.float64)
        orr = np.where(ir < 0, -(ir & 0x7FFF_FFFF_FFFF_FFFF), ir).astype(np.float64)
        d = np.abs(oy - orr)
        d[(y == 0) & (r == 0)] = 0.0
    else:
        with np.errstate(invalid="ignore"):
            d = np.abs(_ordinals(np.nan_to_num(y, nan=0.0), f) - _ordinals(np.nan_to_num(r, nan=0.0), f))
    ny, nr = np.isnan(y), np.isnan(r)
    d[ny ^ nr] = np.inf
    d[ny & nr] = 0.0
    opposite = np.isinf(y) & np.isinf(r) & (np.sign(y) != np.sign(r))
    d[opposite] = np.inf
    return d


# ---------------------------------------------------------------------------
# tolerances

TOLERANCE_KINDS = ("absolute", "relative", "ulp", "elementwise", "per_precision", "none")


@dataclass(frozen=True)
class ToleranceSpec:
    """A tolerance tree.

    Leaves are absolute/relative/ulp with either a numeric ``value`` or a
    symbolic ``expr`` (e.g. ``N * eps(P) * max|x|``) that must be instantiated
    before evaluation.  ``deferred`` marks a tolerance borrowed from a
    companion contract.
    """

    kind: str
    value: float | None = None
    children: tuple["ToleranceSpec", ...] = ()
    keys: tuple[str, ...] = ()
    expr: str | None = None
    note: str = ""
    deferred: bool = False

    def __post_init__(self):
        if self.kind not in TOLERANCE_KINDS:
            raise ValueError(f"unknown tolerance kind {self.kind!r}")
        if self.value is not None and self.value < 0:
            raise ValueError("tolerance value must be nonnegative")
        if self.kind == "ulp" and self.value is not None and self.value != int(self.value):
            raise ValueError("ulp tolerance must be an integer")
        if self.kind == "elementwise" and not self.children:
            raise ValueError("elementwise tolerance needs at least one child")
        if self.kind == "per_precision":
            if len(self.keys) != len(self.children):
                raise ValueError("per_precision keys and children differ in length")
            if len(set(self.keys)) != len(self.keys):
                raise ValueError("per_precision keys must be unique")

    @classmethod
    def absolute(cls, v):
        return cls("absolute", float(v))

    @classmethod
    def relative(cls, v):
        return cls("relative", float(v))

    @classmethod
    def ulp(cls, n):
        return cls("ulp", float(int(n)))

    @classmethod
    def none(cls):
        return cls("none")

    def leaves(self) -> list["ToleranceSpec"]:
        if self.kind in ("elementwise", "per_precision"):
            return [leaf for c in self.children for leaf in c.leaves()]
        return [self]

    def has_explicit_bound(self) -> bool:
        """True if some leaf states a bound (numeric, ulp or formula)."""
        return any(l.kind != "none" and (l.value is not None or l.expr) for l in self.leaves())

    def resolve(self, keys: Iterable[str]) -> "ToleranceSpec":
        """Pick the per_precision child matching the first key that is present."""
        if self.kind != "per_precision":
            return self
        table = dict(zip(self.keys, self.children))
        for k in keys:
            if k in table:
                return table[k].resolve(keys)
        raise KeyError(f"no per_precision entry for any of {list(keys)} (have {list(self.keys)})")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.value is not None:
            d["value"] = self.value
        if self.expr:
            d["expr"] = self.expr
        if self.children:
            d["children"] = [c.to_dict() for c in self.children]
        if self.keys:
            d["keys"] = list(self.keys)
        if self.deferred:
            d["deferred"] = True
        return d


@dataclass(frozen=True)
class Residual:
    kind: str
    value: float
    location: int | None = None


@dataclass(frozen=True)
class ToleranceVerdict:
    passed: bool
    residual: Residual
    bound: float
    tolerance_kind: str
    relative_floor: float | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "residual": {"kind": self.residual.kind, "value": self.residual.value,
                         "location": self.residual.location},
            "bound": self.bound,
            "tolerance_kind": self.tolerance_kind,
        }


def _abs_diff(y: np.ndarray, r: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", over="ignore"):
        d = np.abs(y - r)
    same = (y == r) | (np.isnan(y) & np.isnan(r))
    d = np.where(same, 0.0, d)
    return np.where(np.isnan(d), np.inf, d)


def _worst(values: np.ndarray) -> tuple[float, int | None]:
    if values.size == 0:
        return 0.0, None
    i = int(np.argmax(values))
    return float(values.flat[i]), i


def evaluate_tolerance(y, ref, tol: ToleranceSpec, fmt) -> ToleranceVerdict:
    """Compare ``y`` against ``ref`` under ``tol``.

    Relative error uses ``|y - r| / max(|r|, floor)`` with floor the smallest
    normal of ``fmt``.  Pass iff residual <= bound.
    """
    f = get_format(fmt)
    y = np.asarray(y, dtype=np.float64)
    r = np.asarray(ref, dtype=np.float64)
    if y.shape != r.shape:
        raise ShapeMismatch(f"output shape {y.shape} != reference shape {r.shape}")
    if tol.kind == "per_precision":
        tol = tol.resolve([f.name])
    if tol.kind == "none":
        return ToleranceVerdict(True, Residual("absolute", 0.0, None), math.inf, "none")
    if tol.kind == "elementwise":
        verdicts = [evaluate_tolerance(y, r, c, f) for c in tol.children]

        def ratio(v):
            if v.bound > 0:
                return v.residual.value / v.bound
            return math.inf if v.residual.value > 0 else 0.0

        failing = [v for v in verdicts if not v.passed]
        worst = max(failing or verdicts, key=ratio)
        return replace(worst, passed=not failing, tolerance_kind="elementwise")
    if tol.value is None:
        raise ValueError(f"symbolic tolerance {tol.expr!r} must be instantiated before evaluation")
    y, r = y.ravel(), r.ravel()
    if tol.kind == "absolute":
        value, loc = _worst(_abs_diff(y, r))
        floor = None
    elif tol.kind == "relative":
        floor = f.min_normal
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = _abs_diff(y, r) / np.maximum(np.abs(r), floor)
        rel = np.where(np.isnan(rel), 0.0, rel)  # inf/inf only where both sides matched
        value, loc = _worst(rel)
    else:
        floor = None
        value, loc = _worst(ulp_distances(quantize(y, f), quantize(r, f), f))
    bound = float(tol.value)
    return ToleranceVerdict(value <= bound, Residual(tol.kind, value, loc), bound, tol.kind, floor)


# ---------------------------------------------------------------------------
# derived bounds

DERIVED_CLASSES = ("C-ORD-01", "C-ORD-03", "generic-simple", "generic-reduction")


def derived_bound(class_id: str, *, fmt, N: int | None = None, K: int | None = None,
                  max_abs: float | None = None) -> ToleranceSpec:
    """Instantiate a class's tolerance formula for concrete parameters."""
    f = get_format(fmt)
    if class_id == "C-ORD-01":
        if N is None or max_abs is None:
            raise ValueError("C-ORD-01 needs N and max_abs")
        return ToleranceSpec("absolute", N * f.eps * float(max_abs), note=f"N * eps({f.name}) * max|x|")
    if class_id == "C-ORD-03":
        return ToleranceSpec("relative", max(1, K or 1) * f.eps, note=f"K * eps({f.name})")
    if class_id == "generic-simple":
        return ToleranceSpec("relative", f.eps, note=f"eps({f.name})")
    if class_id == "generic-reduction":
        k = max(1.0, math.log2(N)) if N else 1.0
        return ToleranceSpec("relative", k * f.eps, note=f"max(1, log2 N) * eps({f.name})")
    raise UnknownClass(class_id)


def fp32(x) -> np.ndarray:
    """Cast to float32 (native RNE) and back to float64."""
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def max_abs(x: Sequence[float] | np.ndarray) -> float:
    a = np.abs(np.asarray(x, dtype=np.float64))
    return float(a.max()) if a.size else 0.0
