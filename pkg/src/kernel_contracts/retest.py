"""Which contracts to re-verify after a stack version change."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

ALWAYS = ("C-PRC-01", "C-PRC-03", "C-ORD-01", "C-CMP-02", "C-EXC-01", "C-EXC-02")
# contract -> tags that trigger a retest when release notes mention them
CONDITIONAL = {
    "C-PRC-02": ("PRC", "softmax", "variance", "log_sum_exp"),
    "C-PRC-04": ("PRC", "training_loop"),
    "C-CMP-01": ("CMP", "fused_kernels", "fused_matmul", "fused_attention"),
}
MAJOR_ONLY = ("C-ORD-02", "C-ORD-03", "C-CMP-03")
POLICY_CONTRACTS = tuple(sorted(ALWAYS + tuple(CONDITIONAL) + MAJOR_ONLY))

_VERSION_RE = re.compile(r"^\s*v?(\d+(?:\.\d+)*)\s*$")


class VersionParseError(ValueError):
    pass


def parse_version(text: str) -> tuple[int, ...]:
    m = _VERSION_RE.match(str(text))
    if not m:
        raise VersionParseError(f"version {text!r} is not a dotted numeric literal")
    return tuple(int(p) for p in m.group(1).split("."))


def change_class(from_version: str, to_version: str) -> str:
    a, b = parse_version(from_version), parse_version(to_version)
    if a[0] != b[0]:
        return "major"
    a2, b2 = (a + (0,))[1], (b + (0,))[1]
    return "minor" if a2 != b2 else "patch"


@dataclass
class RetestPlan:
    from_version: str
    to_version: str
    change_class: str
    release_note_subsystems: frozenset
    per_contract: dict = field(default_factory=dict)

    @property
    def retest(self) -> set[str]:
        return {c for c, d in self.per_contract.items() if d["decision"] == "retest"}

    @property
    def skip(self) -> set[str]:
        return {c for c, d in self.per_contract.items() if d["decision"] == "skip"}

    def to_dict(self) -> dict:
        return {"from_version": self.from_version, "to_version": self.to_version,
                "change_class": self.change_class,
                "release_note_subsystems": sorted(self.release_note_subsystems),
                "per_contract": {k: self.per_contract[k] for k in sorted(self.per_contract)}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _base(cid: str) -> str:
    parts = cid.split("-")
    return "-".join(parts[:3]) if len(parts) >= 3 else cid


def _scope_tags(contract) -> set[str]:
    return {oc.name for oc in getattr(contract, "scope", ())}


def retest_plan(from_version: str, to_version: str, release_note_subsystems=(), contract_set=None) -> RetestPlan:
    """Apply the always / release-note / major-version policy.

    ``contract_set`` holds contract ids or parsed contracts (whose scope
    op classes also count as tags); it defaults to the twelve policy classes.
    A major bump retests everything.
    """
    cc = change_class(from_version, to_version)
    tags = {str(t).strip() for t in release_note_subsystems if str(t).strip()}
    upper = {t.upper() for t in tags}
    plan = RetestPlan(str(from_version), str(to_version), cc, frozenset(tags))
    for item in (contract_set if contract_set is not None else POLICY_CONTRACTS):
        cid = item if isinstance(item, str) else item.id
        extra = set() if isinstance(item, str) else _scope_tags(item)
        base = _base(cid)
        if base in ALWAYS:
            d = ("retest", "always retested")
        elif base in CONDITIONAL:
            trig = set(CONDITIONAL[base]) | extra
            hit = sorted(t for t in tags if t in trig or t.upper() in trig)
            if hit:
                d = ("retest", f"release notes mention {', '.join(hit)}")
            elif cc == "major":
                d = ("retest", "major version change")
            else:
                d = ("skip", "no matching subsystem in release notes")
        elif base in MAJOR_ONLY:
            d = ("retest", "major version change") if cc == "major" else ("skip", f"{cc} change; retested per major")
        else:
            fam = base.split("-")[1] if base.count("-") >= 2 else ""
            d = ("retest", "not covered by the retest policy; retested conservatively")
            if fam and fam in upper:
                d = ("retest", f"release notes mention {fam}")
        plan.per_contract[cid] = {"decision": d[0], "reason": d[1]}
    return plan
