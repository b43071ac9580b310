"""JSONL trace records: one line per verification call."""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
import platform
from collections import OrderedDict
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .numerics import registry_hash

TRACE_FIELDS = (
    "contract_id", "contract_version", "impl_id", "silicon_profile", "input_ref",
    "residual_kind", "residual", "tolerance_kind", "tolerance", "verdict",
    "sample_index", "seed", "timestamp",
)
FIXED_TIMESTAMP = "1970-01-01T00:00:00.000Z"
DEFAULT_TRACE_DIR = "traces"
ENV_TRACE_DIR = "KC_TRACE_DIR"

_NONFINITE = {"Infinity": math.inf, "-Infinity": -math.inf, "NaN": math.nan}


class SinkError(OSError):
    pass


class TraceRecordError(ValueError):
    pass


@dataclass(frozen=True)
class TraceRecord:
    contract_id: str
    contract_version: str
    impl_id: str
    silicon_profile: dict
    input_ref: str
    residual_kind: str
    residual: float
    tolerance_kind: str
    tolerance: float
    verdict: str  # pass | fail
    sample_index: int
    seed: int
    timestamp: str

    def validate(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) is None:
                raise TraceRecordError(f"trace field {f.name!r} is missing")
        if self.verdict not in ("pass", "fail"):
            raise TraceRecordError(f"verdict must be pass or fail, got {self.verdict!r}")
        if len(self.input_ref) != 64:
            raise TraceRecordError("input_ref must be a 64-hex-char digest")

    def to_json(self) -> str:
        d = OrderedDict((name, getattr(self, name)) for name in TRACE_FIELDS)
        d["residual"] = _encode_float(self.residual)
        d["tolerance"] = _encode_float(self.tolerance)
        return json.dumps(d, separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "TraceRecord":
        missing = [k for k in TRACE_FIELDS if k not in d]
        if missing:
            raise TraceRecordError(f"missing fields: {', '.join(missing)}")
        kw = {k: d[k] for k in TRACE_FIELDS}
        kw["residual"] = _decode_float(kw["residual"])
        kw["tolerance"] = _decode_float(kw["tolerance"])
        rec = cls(**kw)
        rec.validate()
        return rec


def _encode_float(x) -> float | str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return x


def _decode_float(x) -> float:
    if isinstance(x, str):
        if x not in _NONFINITE:
            raise TraceRecordError(f"bad numeric value {x!r}")
        return _NONFINITE[x]
    return float(x)


def silicon_profile() -> dict:
    return {
        "format_registry_hash": registry_hash(),
        "host_arch": platform.machine() or "unknown",
        "toolkit_version": f"numpy-{np.__version__}",
    }


def input_ref(tensors: dict, formats: dict | None = None) -> str:
    """sha256 over name, format, little-endian shape and little-endian data
    of every tensor, in name order."""
    formats = formats or {}
    h = hashlib.sha256()
    for name in sorted(tensors):
        a = np.asarray(tensors[name])
        if a.dtype.kind in "iub":
            data = a.astype("<i8")
        else:
            data = a.astype("<f8")
        h.update(name.encode())
        h.update(b"\0")
        h.update(str(formats.get(name, a.dtype.name)).encode())
        h.update(b"\0")
        h.update(np.asarray(a.shape, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(data).tobytes())
    return h.hexdigest()


def utc_timestamp() -> str:
    now = datetime.now(timezone.utc)
    return now.strftime("%Y-%m-%dT%H:%M:%S.") + f"{now.microsecond // 1000:03d}Z"


def resolve_trace_path(trace_out: str | os.PathLike | None, stem: str) -> Path:
    """--trace-out wins, then $KC_TRACE_DIR, then ./traces.  An existing
    directory (or a path without suffix) receives ``<stem>.jsonl``."""
    if trace_out is not None:
        p = Path(trace_out)
        if p.suffix and not p.is_dir():
            return p
        return p / f"{stem}.jsonl"
    return Path(os.environ.get(ENV_TRACE_DIR, DEFAULT_TRACE_DIR)) / f"{stem}.jsonl"


class MemorySink:
    def __init__(self):
        self.records: list[TraceRecord] = []

    def emit(self, record: TraceRecord) -> int:
        record.validate()
        self.records.append(record)
        return len(self.records)

    def close(self):
        pass


class TraceWriter:
    """Single-writer append stream.  Every emit writes and flushes one line."""

    def __init__(self, target, mode: str = "a"):
        self._owned = False
        self.count = 0
        if isinstance(target, (str, os.PathLike)):
            path = Path(target)
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = open(path, mode, encoding="utf-8")
            except OSError as e:
                raise SinkError(f"cannot open trace sink {path}: {e}") from e
            self._owned = True
            self.path = path
        else:
            self._fh = target
            self.path = None

    def emit(self, record: TraceRecord) -> int:
        record.validate()
        try:
            self._fh.write(record.to_json() + "\n")
            self._fh.flush()
        except (OSError, ValueError) as e:
            raise SinkError(f"trace write failed: {e}") from e
        self.count += 1
        return self.count

    def close(self):
        if self._owned:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def emit_trace(record: TraceRecord, sink) -> int:
    return sink.emit(record)


@dataclass(frozen=True)
class TraceDiagnostic:
    line: int
    message: str


def read_traces(source) -> tuple[list[TraceRecord], list[TraceDiagnostic]]:
    """Parse a JSONL stream.  Malformed lines become diagnostics with their
    1-based line numbers; valid lines keep their order."""
    if isinstance(source, (str, os.PathLike)):
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as e:
            raise SinkError(f"cannot read traces from {source}: {e}") from e
        lines = text.splitlines()
    elif isinstance(source, io.IOBase) or hasattr(source, "read"):
        lines = source.read().splitlines()
    else:
        lines = list(source)
    records, diags = [], []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            if not isinstance(d, dict):
                raise TraceRecordError("line is not a JSON object")
            records.append(TraceRecord.from_dict(d))
        except (json.JSONDecodeError, TraceRecordError, TypeError) as e:
            diags.append(TraceDiagnostic(n, str(e)))
    return records, diags


HIST_EDGES = tuple(10.0 ** e for e in range(-16, 1))


def histogram_labels() -> list[str]:
    """Underflow bucket, one bucket per decade from 1e-16 to 1e0, overflow."""
    return (["<1e-16"] + [f"[1e{e},1e{e + 1})" for e in range(-16, 0)] + [">=1e0"])


def _bucket(r: float) -> str:
    labels = histogram_labels()
    if math.isnan(r) or r >= HIST_EDGES[-1]:
        return labels[-1]
    if r < HIST_EDGES[0]:
        return labels[0]
    i = int(np.searchsorted(HIST_EDGES, r, side="right"))
    return labels[i]


def summarize_traces(records) -> dict:
    """Aggregate per (contract_id, impl_id) in first-seen order.  NaN
    residuals count as the maximum."""
    out: dict = {}
    for r in records:
        key = (r.contract_id, r.impl_id)
        agg = out.get(key)
        if agg is None:
            agg = out[key] = {"runs": 0, "fails": 0, "max_residual": 0.0,
                              "residual_histogram": dict.fromkeys(histogram_labels(), 0)}
        agg["runs"] += 1
        agg["fails"] += r.verdict == "fail"
        res = r.residual
        if math.isnan(res) or (not math.isnan(agg["max_residual"]) and res > agg["max_residual"]):
            agg["max_residual"] = res
        agg["residual_histogram"][_bucket(res)] += 1
    return out
