"""AST node types.  Structural equality ignores source positions."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..numerics import ToleranceSpec

BUILTIN_OP_CLASSES = (
    "matmul", "reduction", "fused_attention", "elementwise", "softmax",
    "variance", "log_sum_exp", "indexing", "embedding", "collective",
)

CLAUSE_KEYWORDS = ("scope", "pre", "post", "tolerance", "reference", "measure", "violation")

PROTOCOL_KINDS = ("sample", "sweep", "inject", "enumerate", "repeat", "custom")
REFERENCE_KINDS = ("higher_precision", "alternate_stack", "algebraic", "stable_algorithm", "spec")
MATCHER_KINDS = ("saturation-at-value", "policy-mismatch", "tolerance-exceeded-fraction",
                 "bitwise-mismatch", "holdout-divergence")


@dataclass(frozen=True)
class OpClass:
    name: str
    extension: bool = False
    qualifier: str = ""


@dataclass(frozen=True)
class Predicate:
    kind: str  # precision, shape, value_range, env, version, text
    text: str
    tensors: tuple[str, ...] = ()
    formats: tuple[str, ...] = ()
    spec: str = ""


@dataclass(frozen=True)
class Relation:
    kind: str  # closeness, policy, bitwise, raise, text
    text: str
    output: str | None = None
    policies: tuple[str, ...] = ()
    raises: str | None = None
    domain: tuple = ()


@dataclass(frozen=True)
class RefSpec:
    kind: str
    target: str | None = None
    options: tuple[tuple[str, str], ...] = ()
    note: str = ""

    def option(self, name: str, default=None):
        return dict(self.options).get(name, default)


@dataclass(frozen=True)
class Protocol:
    kind: str
    text: str
    count: int | None = None
    param: str | None = None
    values: tuple | None = None
    anomaly: str | None = None
    action: str = ""
    config_class: str | None = None
    aggregate: str | None = None
    bound: str | None = None


@dataclass(frozen=True)
class Matcher:
    kind: str
    params: tuple[tuple[str, object], ...] = ()

    def get(self, name: str, default=None):
        return dict(self.params).get(name, default)


@dataclass(frozen=True)
class ViolationSignature:
    text: str
    matcher: Matcher | None = None


@dataclass(frozen=True)
class ContractAst:
    id: str
    scope: tuple[OpClass, ...]
    pre: tuple[Predicate, ...]
    post: Relation
    tolerance: ToleranceSpec
    reference: RefSpec
    measure: Protocol
    violation: ViolationSignature
    # normalized clause bodies in keyword order; canonical serialization reads these
    clauses: tuple[tuple[str, str], ...] = ()
    positions: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    @property
    def class_id(self) -> str:
        """Family prefix such as ``C-PRC-01`` for ``C-PRC-01-FP8-ACCUMULATOR``."""
        parts = self.id.split("-")
        return "-".join(parts[:3]) if len(parts) >= 3 else self.id

    def clause_text(self, keyword: str) -> str:
        return dict(self.clauses)[keyword]
