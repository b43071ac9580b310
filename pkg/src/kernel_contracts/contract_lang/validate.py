"""Static checks over a parsed contract.  Findings are data, never raised."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from ..numerics import FORMATS
from .nodes import BUILTIN_OP_CLASSES, ContractAst

ID_RE = re.compile(r"^C-[A-Z0-9]+-[A-Z0-9]+(?:-[A-Z0-9]+)*$")
REF_OPTIONS = ("accumulator", "softmax_stabilization", "reduction_order")


@dataclass(frozen=True)
class FormatAndClassRegistry:
    formats: frozenset = field(default_factory=lambda: frozenset(FORMATS))
    op_classes: frozenset = field(default_factory=lambda: frozenset(BUILTIN_OP_CLASSES))


def default_registry() -> FormatAndClassRegistry:
    return FormatAndClassRegistry()


@dataclass(frozen=True)
class Finding:
    rule: str
    severity: str  # error | warning
    message: str
    line: int | None = None
    column: int | None = None

    def to_dict(self) -> dict:
        return {"rule": self.rule, "severity": self.severity, "message": self.message,
                "line": self.line, "column": self.column}


@dataclass
class ValidationReport:
    contract_id: str
    findings: list[Finding] = field(default_factory=list)

    @property
    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "error"]

    @property
    def warnings(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_json(self) -> str:
        return json.dumps([f.to_dict() for f in self.findings])


def validate(ast: ContractAst, registry: FormatAndClassRegistry | None = None) -> ValidationReport:
    reg = registry or default_registry()
    rep = ValidationReport(ast.id)
    pos = ast.positions

    def add(rule, severity, message, part):
        line, col = pos.get(part, (None, None))
        rep.findings.append(Finding(rule, severity, message, line, col))

    if not ID_RE.match(ast.id):
        add("ID_FORMAT", "warning", f"identifier {ast.id!r} does not follow C-FAM-NN", "id")

    if not ast.scope:
        add("SCOPE_EMPTY", "error", "scope names no op class", "scope")
    for oc in ast.scope:
        if oc.name not in reg.op_classes:
            add("EXTENSION_OP_CLASS", "warning", f"op class {oc.name!r} is an extension", "scope")

    precision_formats: set[str] = set()
    for p in ast.pre:
        if p.kind == "precision":
            precision_formats.update(p.formats)
            for f in p.formats:
                if f not in reg.formats:
                    add("EXTENSION_FORMAT", "warning", f"precision {f!r} is not a registered format", "pre")

    tol = ast.tolerance
    ref = ast.reference
    if ref.kind == "algebraic":
        if ref.target is None:
            add("ALG_NO_PROPERTY", "warning", "algebraic reference names no property", "reference")
        elif not tol.has_explicit_bound():
            add("ALG_NO_EPSILON", "error",
                f"algebraic reference {ref.target!r} needs an explicit epsilon or ulp bound", "tolerance")

    if tol.kind == "per_precision":
        keys = set(tol.keys)
        for k in tol.keys:
            if k not in reg.formats:
                add("PER_PRECISION_EXTENSION_KEY", "warning", f"per_precision key {k!r} is not a registered format",
                    "tolerance")
        if precision_formats:
            missing = sorted(precision_formats - keys)
            if missing:
                add("PER_PRECISION_MISSING", "error",
                    f"no tolerance given for precision(s) {', '.join(missing)}", "tolerance")
            elif keys == precision_formats:
                add("PER_PRECISION_COVERAGE", "warning",
                    f"per-precision tolerances cover exactly {{{', '.join(sorted(keys))}}}, "
                    "the precisions admitted by the precondition; any other precision is unconstrained",
                    "tolerance")
    if tol.deferred:
        add("TOLERANCE_DEFERRED", "warning", "tolerance is borrowed from a companion contract", "tolerance")

    if ref.kind == "higher_precision":
        if ref.target not in reg.formats:
            add("REF_UNKNOWN_FORMAT", "error", f"reference precision {ref.target!r} is not registered", "reference")
        for name, _ in ref.options:
            if name not in REF_OPTIONS:
                add("REF_UNKNOWN_OPTION", "warning", f"unknown reference option {name!r}", "reference")
    elif ref.kind in ("alternate_stack", "spec"):
        add("REF_NOT_EXECUTABLE", "warning",
            f"{ref.kind} reference cannot be computed on a single host", "reference")

    if ast.measure.kind == "custom":
        add("PROTOCOL_CUSTOM", "warning", "measurement protocol is free text and will not be executed", "measure")

    if ast.violation.matcher is None:
        add("SIGNATURE_UNSTRUCTURED", "warning", "violation signature has no structured matcher", "violation")
    return rep
