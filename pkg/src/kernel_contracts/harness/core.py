"""Protocol execution, signature matching and three-state calibration."""

from __future__ import annotations

import ast as pyast
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from ..contract_lang import ContractAst, ViolationSignature, canonical_serialize, parse_corpus
from ..kernel_zoo import (
    InvocationContext,
    KernelError,
    KernelImpl,
    KernelInput,
    smoke_test,
    triple_for,
)
from ..kernel_zoo.kernels import BLOCK_SIZES, SUPPORTED_HEAD_DIMS
from ..numerics import FORMATS, ToleranceSpec, evaluate_tolerance, get_format, ulp_distances
from ..trace import FIXED_TIMESTAMP, TraceRecord, input_ref, silicon_profile, utc_timestamp
from . import generators as G
from .references import AlgebraicCheck, OracleUnavailable, UnsupportedReference, resolve_reference

DEFAULT_BUDGET = 256
NUMBER_WORDS = {1: "one", 2: "two", 3: "three", 4: "four", 5: "five", 6: "six"}


class UnsupportedProtocol(Exception):
    pass


# ---------------------------------------------------------------------------
# results

@dataclass
class SampleResult:
    index: int
    passed: bool
    residual_kind: str
    residual: float
    tolerance_kind: str
    tolerance: float
    tensors: dict
    formats: dict = field(default_factory=dict)
    y: np.ndarray | None = None
    ref: np.ndarray | None = None
    raised: KernelError | None = None
    meta: dict = field(default_factory=dict)

    @property
    def input_hash(self) -> str:
        return input_ref(self.tensors, self.formats)


@dataclass
class ConformanceReport:
    contract_id: str
    contract_version: str
    impl_id: str
    verdict: str  # conforming | violating | not_applicable
    residual_summary: dict
    matched_signature: bool
    signature_details: str
    trace_ids: list
    sample_count: int
    seed: int
    reason: str = ""
    samples: list = field(default_factory=list, repr=False)

    @property
    def failures(self) -> list[SampleResult]:
        return [s for s in self.samples if not s.passed]

    def to_dict(self) -> dict:
        return {
            "contract_id": self.contract_id,
            "contract_version": self.contract_version,
            "impl_id": self.impl_id,
            "verdict": self.verdict,
            "residual_summary": self.residual_summary,
            "matched_signature": {"matched": self.matched_signature, "details": self.signature_details},
            "trace_ids": self.trace_ids,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "reason": self.reason,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=_json_default)


def _json_default(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    raise TypeError(f"not serializable: {type(x).__name__}")


@dataclass
class CalibrationVerdict:
    contract_id: str
    separated: bool
    per_state: dict

    def to_dict(self) -> dict:
        return {"contract_id": self.contract_id, "separated": self.separated, "per_state": self.per_state}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def contract_version(contract: ContractAst) -> str:
    return hashlib.sha256(canonical_serialize(contract).encode()).hexdigest()


# ---------------------------------------------------------------------------
# scope

def scope_covers(name: str, impl: KernelImpl) -> bool:
    """Does scope entry ``name`` include ``impl``?  Builtin op classes match
    exactly; descriptive scopes map onto the zoo's declarations."""
    if name == impl.op_class:
        return True
    n = name.lower()
    if n.startswith("all_"):
        return True
    if "atomicadd" in n:
        return impl.op_class in ("reduction", "collective", "fused_attention")
    if n.startswith("fused"):
        return impl.op_class.startswith("fused")
    if n.startswith("autotuned"):
        return "schedules" in impl.declared
    if "shape_class" in n:
        return "shape_class" in impl.declared
    return False


def in_scope(contract: ContractAst, impl: KernelImpl) -> bool:
    return any(scope_covers(oc.name, impl) for oc in contract.scope)


# ---------------------------------------------------------------------------
# tolerances

_EXPR_NODES = (pyast.Expression, pyast.BinOp, pyast.Mult, pyast.Div, pyast.Add, pyast.Sub, pyast.Pow,
               pyast.Name, pyast.Load, pyast.Constant, pyast.UnaryOp, pyast.USub)


def eval_tolerance_expr(expr: str, *, fmt, N=None, K=None, max_abs=None) -> float:
    """Evaluate formulas such as ``N * eps(P) * max|x|`` or ``K * eps(P)``."""
    f = get_format(fmt)
    text = expr.replace("max|x|", "MAXABS").replace("eps(P)", "EPS").replace("u(P)", "U")
    tree = pyast.parse(text, mode="eval")
    for node in pyast.walk(tree):
        if not isinstance(node, _EXPR_NODES):
            raise ValueError(f"unsupported construct in tolerance formula {expr!r}")
    env = {"EPS": f.eps, "U": f.unit_roundoff, "N": N, "K": K, "MAXABS": max_abs}
    for node in pyast.walk(tree):
        if isinstance(node, pyast.Name):
            if env.get(node.id) is None:
                raise ValueError(f"tolerance formula {expr!r} needs {node.id}")
    return float(eval(compile(tree, "<tolerance>", "eval"), {"__builtins__": {}}, env))


def instantiate(tol: ToleranceSpec, *, fmt, N=None, K=None, max_abs=None) -> ToleranceSpec:
    if tol.kind in ("elementwise", "per_precision"):
        kids = tuple(instantiate(c, fmt=fmt, N=N, K=K, max_abs=max_abs) for c in tol.children)
        return ToleranceSpec(tol.kind, children=kids, keys=tol.keys, note=tol.note)
    if tol.expr and tol.value is None:
        v = eval_tolerance_expr(tol.expr, fmt=fmt, N=N, K=K, max_abs=max_abs)
        if tol.kind == "ulp":
            v = math.ceil(v)
        return ToleranceSpec(tol.kind, v, note=tol.expr)
    return tol


@lru_cache(maxsize=1)
def packaged_contracts() -> dict:
    root = resources.files("kernel_contracts") / "contracts"
    with resources.as_file(root) as d:
        return {a.id: a for _, a in parse_corpus(d) if isinstance(a, ContractAst)}


def companion_tolerance(contract: ContractAst) -> ToleranceSpec:
    """A deferred tolerance is borrowed from the packaged contract that
    extends this id (C-CMP-03 -> C-CMP-03-SAKANA)."""
    for cid, other in sorted(packaged_contracts().items()):
        if cid.startswith(contract.id + "-") and not other.tolerance.deferred:
            return other.tolerance
    raise OracleUnavailable(f"{contract.id} defers its tolerance but no companion contract is packaged")


def _fmt_of(inp: KernelInput, name: str) -> str:
    return inp.formats.get(name, "FP32")


# ---------------------------------------------------------------------------
# plan context

class _Plan:
    """One measurement plan: ``run(i)`` performs verification call ``i``."""

    def __init__(self, contract, impl, seed, options):
        self.contract = contract
        self.impl = impl
        self.seed = int(seed)
        self.options = dict(options or {})
        self.memo: dict = {}

    def tolerance(self, keys=(), **kw) -> ToleranceSpec:
        tol = self.contract.tolerance
        if tol.deferred:
            tol = companion_tolerance(self.contract)
        if tol.kind == "per_precision":
            tol = tol.resolve(list(keys) + ["FP32"])
        return instantiate(tol, **kw)

    def reference(self, inp):
        try:
            return resolve_reference(self.contract.reference, inp, self.impl)
        except UnsupportedReference as e:
            raise OracleUnavailable(str(e)) from e

    def call(self, inp, ctx=None):
        return self.impl(inp, ctx or InvocationContext(seed=self.seed))


def _closeness_sample(plan: _Plan, i: int, inp: KernelInput, keys=(), fmt="FP32", **tolkw) -> SampleResult:
    ref = plan.reference(inp)
    if isinstance(ref, AlgebraicCheck):
        raise OracleUnavailable(f"algebraic reference {ref.property!r} gives no tensor to compare against")
    out = plan.call(inp)
    tol = plan.tolerance(keys, fmt=fmt, **tolkw)
    tkind = tol.kind
    if out.raised:
        bound = float(tol.value) if tol.value is not None else math.inf
        return SampleResult(i, False, tkind if tkind != "none" else "absolute", math.inf, tkind, bound,
                            inp.tensors, inp.formats, None, np.asarray(ref), out.exception, dict(inp.attributes))
    v = evaluate_tolerance(out.y, ref, tol, fmt)
    return SampleResult(i, v.passed, v.residual.kind, v.residual.value, v.tolerance_kind, v.bound,
                        inp.tensors, inp.formats, np.asarray(out.y), np.asarray(ref), None,
                        dict(inp.attributes))


def _input_formats(contract: ContractAst, narrower_than: int | None = None) -> list[str]:
    fmts = []
    for p in contract.pre:
        for f in p.formats:
            if f in FORMATS and f not in fmts and (narrower_than is None or FORMATS[f].bits < narrower_than):
                fmts.append(f)
    return fmts


ATTENTION_CONFIGS = ((64, 64), (128, 64), (64, 128), (128, 128))


class SamplePlan(_Plan):
    def run(self, i):
        k = self.impl.kernel
        constructed = self.contract.measure.config_class == "constructed"
        rng = G.sample_rng(self.seed, i)
        if constructed and k in ("matmul", "reduce"):
            fmts = _input_formats(self.contract, 32) or ["FP16"]
            fmt = fmts[i % len(fmts)]
            inp = G.near_saturation(rng, kernel=k, fmt=fmt)
            acc = self.impl.declared.get("accumulator", "FP32")
            return _closeness_sample(self, i, inp, keys=[acc, fmt], fmt=acc)
        if constructed and k in ("softmax", "variance"):
            inp = G.wide_dynamic_range(rng, kernel=k, i=i)
            return _closeness_sample(self, i, inp, keys=["FP32"], fmt="FP32")
        if k == "attention":
            fmts = _input_formats(self.contract) or ["FP32"]
            fmt = fmts[i % len(fmts)]
            cfg = ATTENTION_CONFIGS[(i // len(fmts)) % len(ATTENTION_CONFIGS)]
            inp = G.uniform(rng, kernel=k, fmt=fmt, config=cfg)
            return _closeness_sample(self, i, inp, keys=[fmt], fmt="FP32")
        if k == "fused_bias_gelu":
            inp = G.uniform(rng, kernel=k)
            return _closeness_sample(self, i, inp, keys=["FP32"], fmt="FP32")
        raise _NoPlan


class CollectiveSweepPlan(_Plan):
    def run(self, i):
        values = self.options.get("values") or self.contract.measure.values or (1,)
        ranks = int(values[i % len(values)])
        inp = G.uniform(G.sample_rng(self.seed, i), kernel="collective")
        inp.attributes["ranks"] = ranks
        r = _closeness_sample(self, i, inp, keys=["FP32"], fmt="FP32", K=ranks)
        r.meta["K"] = ranks
        return r


class ShapeSweepPlan(_Plan):
    def run(self, i):
        rng = G.sample_rng(self.seed, i)
        values = self.options.get("values")
        if values:
            m, k, p = values[i % len(values)]
            a = rng.uniform(0.0, 1.0, (m, k)).astype(np.float32)
            b = rng.uniform(0.0, 1.0, (k, p)).astype(np.float32)
            from ..kernel_zoo.kernels import is_pow2
            inp = KernelInput({"a": a, "b": b}, {"a": "FP32", "b": "FP32", "y": "FP32"},
                              {"shape": (m, k, p), "benchmarked": all(is_pow2(v) for v in (m, k, p))})
        else:
            inp = G.holdout_shapes(rng, i=i, only_benchmarked=self.options.get("only_benchmarked", False))
        return _closeness_sample(self, i, inp, keys=["FP32"], fmt="FP32")


class HeadDimSweepPlan(_Plan):
    """Sweep D: supported values must compute, unsupported ones must raise
    the declared error.  Divergence from the reference is recorded either way."""

    S = 32

    def run(self, i):
        post = self.contract.post
        values = self.options.get("values") or self.contract.measure.values
        d = int(values[i % len(values)])
        supported_set = tuple(post.domain[1]) if post.domain else SUPPORTED_HEAD_DIMS
        supported = d in supported_set
        rng = G.sample_rng(self.seed, i)
        q, k, v = (rng.standard_normal((1, 1, self.S, d)).astype(np.float32) for _ in range(3))
        inp = KernelInput({"q": q, "k": k, "v": v}, {"q": "FP32", "k": "FP32", "v": "FP32"}, {"D": d})
        out = self.call(inp)
        meta = {"D": d, "supported": supported, "benchmarked": supported, "raised": out.raised}
        divergence = 0.0
        ref = None
        if not out.raised:
            from ..kernel_zoo.kernels import attention_reference
            ref = attention_reference(q, k, v, np.float64)
            y = np.asarray(out.y, dtype=np.float64)
            with np.errstate(invalid="ignore"):
                divergence = float(np.max(np.abs(y - ref)) / max(np.max(np.abs(ref)), np.finfo(float).tiny))
            if not np.isfinite(divergence):
                divergence = math.inf
        meta["divergence"] = divergence
        if supported:
            passed = not out.raised
        else:
            want = post.raises or "DIMENSION_UNSUPPORTED"
            passed = out.raised and out.exception.kind == want
        return SampleResult(i, passed, "relative", divergence, "none", math.inf, inp.tensors, inp.formats,
                            None if out.raised else np.asarray(out.y), ref, out.exception, meta)


class EnumeratePlan(_Plan):
    """Run every block schedule on one input and bound the spread."""

    N = 1024

    def run(self, i):
        rng = G.sample_rng(self.seed, i)
        tol0 = self.contract.tolerance
        ref_is_schedule = self.contract.reference.kind == "stable_algorithm"
        if ref_is_schedule or tol0.kind == "relative":
            x = rng.uniform(0.0, 1.0, self.N).astype(np.float32)
        else:
            x = rng.uniform(-1.0, 1.0, self.N)
            x = (x / np.max(np.abs(x))).astype(np.float32)
        inp = KernelInput({"x": x}, {"x": "FP32", "y": "FP32"}, {"op": "sum"})
        ys = []
        for s in range(len(BLOCK_SIZES)):
            out = self.impl(inp, InvocationContext(seed=self.seed, schedule=s))
            ys.append(math.nan if out.raised else float(np.asarray(out.y)))
        ys = np.asarray(ys)
        mx = float(np.max(np.abs(x)))
        tol = self.tolerance(["FP32"], fmt="FP32", N=self.N, max_abs=mx)
        meta = {"schedule_outputs": ys.tolist()}
        if ref_is_schedule:
            ref = float(np.asarray(self.reference(inp)))
            v = evaluate_tolerance(ys, np.full_like(ys, ref), tol, "FP32")
            return SampleResult(i, v.passed, v.residual.kind, v.residual.value, v.tolerance_kind, v.bound,
                                inp.tensors, inp.formats, ys, np.full_like(ys, ref), None, meta)
        spread = float(np.max(ys) - np.min(ys)) if np.all(np.isfinite(ys)) else math.inf
        if tol.kind == "relative":
            spread = spread / max(abs(float(np.median(ys))), FORMATS["FP32"].min_normal)
        bound = float(tol.value)
        return SampleResult(i, spread <= bound, tol.kind, spread, tol.kind, bound, inp.tensors, inp.formats,
                            ys, None, None, meta)


def _invocation_seed(seed, r, j) -> int:
    return int(np.random.SeedSequence([int(seed), int(r), int(j)]).generate_state(1)[0])


class RepeatPlan(_Plan):
    """Verification call i compares invocation j against invocation 0 of
    input r, with r = i // (count - 1) and j = i % (count - 1) + 1."""

    def _input(self, r):
        k = self.impl.kernel
        rng = G.sample_rng(self.seed, r)
        if k == "attention":
            return G.uniform(rng, kernel=k, config=(128, 64))
        inp = G.uniform(rng, kernel=k)
        if k == "collective":
            inp.attributes["ranks"] = 8
        return inp

    def tolerance_for_impl(self):
        tol = self.contract.tolerance
        if tol.kind == "per_precision":
            declared = self.impl.declared.get("determinism", "NONE")
            return tol.resolve([declared, "NONE"])
        return tol

    def run(self, i):
        count = self.contract.measure.count or 100
        per = max(1, count - 1)
        r, j = divmod(i, per)
        j += 1
        if r not in self.memo:
            inp = self._input(r)
            out0 = self.impl(inp, InvocationContext(seed=_invocation_seed(self.seed, r, 0)))
            self.memo = {r: (inp, out0)}  # only the current input is needed
        inp, out0 = self.memo[r]
        out = self.impl(inp, InvocationContext(seed=_invocation_seed(self.seed, r, j)))
        tol = self.tolerance_for_impl()
        meta = {"input": r, "invocation": j}
        if out0.raised or out.raised:
            same = out0.raised and out.raised and out0.exception.kind == out.exception.kind
            return SampleResult(i, same, "ulp", 0.0 if same else math.inf, tol.kind,
                                float(tol.value) if tol.value is not None else math.inf,
                                inp.tensors, inp.formats, None, None, out.exception, meta)
        v = evaluate_tolerance(out.y, out0.y, tol, "FP32")
        return SampleResult(i, v.passed, v.residual.kind, v.residual.value, v.tolerance_kind, v.bound,
                            inp.tensors, inp.formats, np.asarray(out.y), np.asarray(out0.y), None, meta)


# --- injection with policy enumeration -------------------------------------

def _bitwise_equal(a, b) -> bool:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        return False
    return bool(np.all(ulp_distances(a, b, "FP64") == 0))


def _max_ulp(y, cand) -> float:
    y = np.asarray(y, dtype=np.float64)
    c = np.asarray(cand, dtype=np.float64)
    if y.shape != c.shape:
        return math.inf
    d = ulp_distances(y, c, "FP32")
    return float(d.max()) if d.size else 0.0


def _flush32(x):
    tiny = np.finfo(np.float32).tiny
    x = np.asarray(x, dtype=np.float32)
    return np.where(np.abs(x) < tiny, np.copysign(np.float32(0), x), x)


def denormal_candidates(inp: KernelInput) -> dict:
    """Both admissible behaviours of y = 2x for a subnormal-bearing input."""
    x = np.asarray(inp.tensors["x"], dtype=np.float32)
    return {"IEEE": x * np.float32(2), "FTZ": _flush32(_flush32(x) * np.float32(2))}


def exceptional_candidates(inp: KernelInput) -> dict:
    x = np.asarray(inp.tensors["x"], dtype=np.float32)
    c = np.float32(inp.attributes.get("c", 1.5))
    return {"IEEE_PROPAGATE": x + c, "MASK": np.where(np.isfinite(x), x + c, np.float32(0)),
            "RAISE": ("EXCEPTIONAL_VALUE", None)}


def gather_candidates(inp: KernelInput) -> dict:
    """Expected behaviour per out-of-bounds policy, one entry per policy."""
    data = np.asarray(inp.tensors["data"])
    idx = np.asarray(inp.tensors["indices"], dtype=np.int64)
    b = int(inp.attributes.get("bound", data.shape[0]))
    oob = (idx < 0) | (idx >= b)
    zero = data[np.where(oob, 0, idx)].copy()
    zero[oob] = 0
    first = int(idx[oob].flat[0]) if oob.any() else None
    return {"RAISE": ("INDEX_OUT_OF_BOUNDS", first), "CLAMP": data[np.clip(idx, 0, b - 1)], "ZERO": zero}


class InjectPlan(_Plan):
    def __init__(self, contract, impl, seed, options, family):
        super().__init__(contract, impl, seed, options)
        self.family = family

    def _generate(self, i):
        rng = G.sample_rng(self.seed, i)
        if self.family == "denormal":
            return G.exceptional_injection(rng, kind="denormal"), denormal_candidates, "denormal"
        if self.family == "nan":
            return G.exceptional_injection(rng, kind="nan"), exceptional_candidates, "nan"
        return G.index_mix(rng), gather_candidates, "oob"

    def run(self, i):
        inp, cand_fn, decl_key = self._generate(i)
        cands = cand_fn(inp)
        admitted = self.contract.post.policies
        if admitted:
            cands = {k: v for k, v in cands.items() if k in admitted}
        out = self.call(inp)
        matches = []
        for name, c in cands.items():
            if isinstance(c, tuple):
                kind, detail = c
                if out.raised and out.exception.kind == kind:
                    if detail is None or getattr(out.exception, "index", detail) == detail:
                        matches.append(name)
            elif not out.raised and _bitwise_equal(out.y, c):
                matches.append(name)
        declared = self.impl.declared.get(decl_key)
        if declared == "UNDEFINED":
            passed = True
        elif declared is None:
            # no declaration: only raising is acceptable
            passed = out.raised
        else:
            passed = declared in matches
        target = cands.get(declared) if declared else None
        if passed:
            residual = 0.0
        elif target is None or isinstance(target, tuple) or out.raised:
            residual = math.inf
        else:
            residual = _max_ulp(out.y, target)
        tol = self.contract.tolerance
        bound = float(tol.value) if tol.value is not None else 0.0
        meta = {"declared": declared, "matches": matches, "candidates": list(cands),
                "raised": out.exception.kind if out.raised else None}
        meta.update({k: v for k, v in inp.attributes.items() if k != "positions"})
        return SampleResult(i, passed, "ulp", residual, "ulp", bound, inp.tensors, inp.formats,
                            None if out.raised else np.asarray(out.y), None, out.exception, meta)


class _NoPlan(Exception):
    pass


def _inject_family(anomaly: str) -> str | None:
    a = (anomaly or "").lower()
    if "denormal" in a or "subnormal" in a:
        return "denormal"
    if "nan" in a or "inf" in a:
        return "nan"
    if "bound" in a or "index" in a:
        return "oob"
    return None


_INJECT_KERNELS = {"denormal": "denormal", "nan": "exceptional", "oob": "gather"}


def select_plan(contract: ContractAst, impl: KernelImpl, seed=0, options=None) -> _Plan:
    """Pick the measurement plan for (protocol, kernel family); raises
    _NoPlan when the zoo has no way to exercise this pairing."""
    m = contract.measure
    k = impl.kernel
    if m.kind == "custom":
        raise UnsupportedProtocol(f"{contract.id}: free-text measurement protocol is not executed")
    if m.kind == "sample":
        ok = ((m.config_class == "constructed" and k in ("matmul", "reduce", "softmax", "variance"))
              or k in ("attention", "fused_bias_gelu"))
        if ok:
            return SamplePlan(contract, impl, seed, options)
    elif m.kind == "sweep":
        param = (m.param or "").lower()
        if param == "k" and k == "collective":
            return CollectiveSweepPlan(contract, impl, seed, options)
        if param == "d" and k == "attention":
            return HeadDimSweepPlan(contract, impl, seed, options)
        if param.startswith("shape") and k in ("matmul", "shape_matmul"):
            return ShapeSweepPlan(contract, impl, seed, options)
    elif m.kind == "enumerate":
        if "schedules" in impl.declared:
            return EnumeratePlan(contract, impl, seed, options)
    elif m.kind == "repeat":
        if k in ("reduce", "reduce_atomic", "collective", "attention"):
            return RepeatPlan(contract, impl, seed, options)
    elif m.kind == "inject":
        fam = _inject_family(m.anomaly)
        if fam and _INJECT_KERNELS[fam] == k:
            return InjectPlan(contract, impl, seed, options, fam)
    raise _NoPlan(f"no {m.kind} measurement plan for kernel family {k!r}")


# ---------------------------------------------------------------------------
# signatures

def _at_value(y: np.ndarray, v: float) -> np.ndarray:
    if math.isnan(v):
        return np.isnan(y)
    if math.isinf(v):
        return np.isinf(y)
    if v == 0:
        return y == 0
    with np.errstate(invalid="ignore"):
        return np.abs(np.abs(y) - v) <= 0.01 * v


def _saturation_values(matcher, contract) -> list[float]:
    vals = [float(v) for v in matcher.get("values", ()) or ()]
    if not vals and matcher.get("mode") == "lower_precision_max":
        fmts = _input_formats(contract, 32) if contract is not None else []
        vals = sorted({FORMATS[f].max_finite for f in (fmts or ["FP16"])})
    return vals


def match_violation_signature(sig: ViolationSignature, failures, passes=(), contract: ContractAst | None = None):
    """Return (matched, details) for a contract's violation signature."""
    m = sig.matcher
    if m is None:
        return False, "unstructured signature"
    failures = list(failures)
    if not failures:
        return False, "no failing samples"
    if m.kind == "saturation-at-value":
        vals = _saturation_values(m, contract)
        hits = 0
        for s in failures:
            if s.y is None or s.ref is None:
                continue
            y = np.asarray(s.y, dtype=np.float64)
            r = np.broadcast_to(np.asarray(s.ref, dtype=np.float64), y.shape)
            for v in vals:
                if np.any(_at_value(y, v) & np.isfinite(r) & ~_at_value(r, v)):
                    hits += 1
                    break
        shown = ", ".join(f"{v:g}" for v in vals)
        if hits == len(failures):
            return True, f"all {hits} failing samples saturate at {{{shown}}} where the reference is finite"
        return False, f"{hits} of {len(failures)} failing samples saturate at {{{shown}}}"
    if m.kind == "policy-mismatch":
        n_pol = len(contract.post.policies) if contract is not None and contract.post.policies else 0
        none = [s for s in failures if not s.meta.get("matches")]
        if len(none) == len(failures):
            word = NUMBER_WORDS.get(n_pol, str(n_pol))
            return True, f"matches none of the {word} declared policies ({len(none)} samples)"
        other = failures[0]
        declared = other.meta.get("declared") or "no policy"
        seen = "/".join(other.meta.get("matches") or ["none"])
        return True, f"behaves as {seen} while declaring {declared}"
    if m.kind == "holdout-divergence":
        thr = float(m.get("threshold", 0) or 0)
        inside = [s for s in failures if s.meta.get("benchmarked")]
        if inside:
            return False, f"{len(inside)} failures inside the benchmarked set"
        silent = [s for s in failures if not s.meta.get("raised") and s.meta.get("divergence", math.inf) > thr]
        if thr and len(silent) != len(failures):
            return False, f"{len(failures) - len(silent)} held-out failures raised or stayed within {thr:g}"
        n_in = sum(1 for s in passes if s.meta.get("benchmarked"))
        return True, (f"{len(failures)} failures all outside the benchmarked set; "
                      f"{n_in} benchmarked samples pass")
    if m.kind == "bitwise-mismatch":
        differ = [s for s in failures if s.residual > 0]
        return bool(differ), f"{len(differ)} invocation pairs differ bitwise"
    if m.kind == "tolerance-exceeded-fraction":
        n = len(failures) + len(list(passes))
        return True, f"{len(failures)} of {n} samples exceeded tolerance"
    return False, f"unknown matcher {m.kind!r}"


# ---------------------------------------------------------------------------
# driver

def _summary(samples) -> dict:
    if not samples:
        return {"max": 0.0, "mean": 0.0, "bound": None, "kind": None, "failures": 0}
    res = np.array([s.residual for s in samples], dtype=np.float64)
    finite = res[np.isfinite(res)]
    return {
        "max": float(np.nanmax(res)) if not np.all(np.isnan(res)) else math.nan,
        "mean": float(finite.mean()) if finite.size else math.inf,
        "bound": max(float(s.tolerance) for s in samples),
        "kind": samples[0].residual_kind,
        "tolerance_kind": samples[0].tolerance_kind,
        "failures": int(sum(not s.passed for s in samples)),
    }


def run_protocol(contract: ContractAst, impl: KernelImpl, seed: int = 0, sample_budget: int = DEFAULT_BUDGET,
                 sink=None, *, options=None, timestamps: bool = True) -> ConformanceReport:
    """Execute ``contract``'s measurement protocol against ``impl``.

    Exactly ``sample_budget`` verification calls are made, each emitting one
    trace record to ``sink`` (if given).  Any failing call makes the verdict
    violating.  Out-of-scope pairings return not_applicable with no traces.
    """
    version = contract_version(contract)

    def na(reason):
        return ConformanceReport(contract.id, version, impl.id, "not_applicable",
                                 _summary([]), False, "", [], 0, seed, reason)

    if contract.measure.kind == "custom":
        raise UnsupportedProtocol(f"{contract.id}: free-text measurement protocol is not executed")
    if not in_scope(contract, impl):
        return na(f"op class {impl.op_class!r} is outside scope "
                  f"{', '.join(oc.name for oc in contract.scope)}")
    try:
        plan = select_plan(contract, impl, seed, options)
    except _NoPlan as e:
        return na(str(e))
    profile = silicon_profile()
    samples, trace_ids = [], []
    for i in range(int(sample_budget)):
        s = plan.run(i)
        samples.append(s)
        tid = f"{contract.id}/{impl.id}/{seed}/{i}"
        trace_ids.append(tid)
        if sink is not None:
            sink.emit(TraceRecord(
                contract_id=contract.id, contract_version=version, impl_id=impl.id,
                silicon_profile=profile, input_ref=s.input_hash, residual_kind=s.residual_kind,
                residual=float(s.residual), tolerance_kind=s.tolerance_kind, tolerance=float(s.tolerance),
                verdict="pass" if s.passed else "fail", sample_index=i, seed=int(seed),
                timestamp=utc_timestamp() if timestamps else FIXED_TIMESTAMP))
    failures = [s for s in samples if not s.passed]
    verdict = "violating" if failures else "conforming"
    if failures:
        matched, details = match_violation_signature(contract.violation, failures,
                                                     [s for s in samples if s.passed], contract)
    else:
        matched, details = False, "no failing samples"
    return ConformanceReport(contract.id, version, impl.id, verdict, _summary(samples), matched, details,
                             trace_ids, len(samples), seed, "", samples)


def shape_sweep(contract: ContractAst, impl: KernelImpl, dims, seed: int = 0) -> list[tuple]:
    """One (value, verdict, sample) per swept value, in order."""
    dims = list(dims)
    if contract.measure.kind != "sweep":
        raise UnsupportedProtocol(f"{contract.id} has a {contract.measure.kind} protocol, not a sweep")
    if not dims:
        return []
    plan = select_plan(contract, impl, seed, {"values": tuple(dims)})
    out = []
    for i, v in enumerate(dims):
        s = plan.run(i)
        out.append((v, "conforming" if s.passed else "violating", s))
    return out


def three_state_calibrate(contract: ContractAst, triple=None, seed: int = 0,
                          sample_budget: int = DEFAULT_BUDGET, sink=None, *, options=None,
                          timestamps: bool = True) -> CalibrationVerdict:
    """Smoke test and contract measurement for good, bad and baseline."""
    if triple is None:
        triple = triple_for(contract.id)
    if isinstance(triple, dict):
        triple = (triple["good"], triple["bad"], triple["baseline"])
    per_state = {}
    for state, impl in zip(("good", "bad", "baseline"), triple):
        smoke = smoke_test(impl)
        rep = run_protocol(contract, impl, seed, sample_budget, sink, options=options, timestamps=timestamps)
        per_state[state] = {"impl": impl.id, "smoke_pass": smoke, "contract_pass": rep.verdict == "conforming",
                            "verdict": rep.verdict}
    g, b, z = per_state["good"], per_state["bad"], per_state["baseline"]
    separated = (g["smoke_pass"] and g["contract_pass"] and b["smoke_pass"] and not b["contract_pass"]
                 and not z["smoke_pass"])
    return CalibrationVerdict(contract.id, bool(separated), per_state)
