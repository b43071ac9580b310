"""Command-line entry point: ``kc <subcommand>``.

Exit codes: 0 conforming/success, 1 violating/detection, 2 usage or
unsupported, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import freivalds as FV
from .contract_lang import ContractError, IoError, parse_contracts, parse_file, validate
from .harness import (
    DEFAULT_BUDGET,
    OracleUnavailable,
    UnsupportedProtocol,
    run_protocol,
    three_state_calibrate,
)
from .kernel_zoo import UnknownImpl, get_impl, list_impls, triple_for
from .retest import VersionParseError, retest_plan
from .trace import FIXED_TIMESTAMP, SinkError, TraceWriter, resolve_trace_path

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _dump(obj) -> str:
    def default(x):
        if isinstance(x, (np.integer,)):
            return int(x)
        if isinstance(x, (np.floating,)):
            return float(x)
        raise TypeError(type(x).__name__)

    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return "NaN" if math.isnan(x) else ("Infinity" if x > 0 else "-Infinity")
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        return x

    return json.dumps(clean(obj), sort_keys=True, default=default, allow_nan=False)


def _load_contract(path: str, contract_id: str | None):
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e}") from e
    contracts = parse_contracts(text)
    if contract_id:
        for c in contracts:
            if c.id == contract_id:
                return c
        raise UsageError(f"{path} has no contract {contract_id!r}")
    if not contracts:
        raise UsageError(f"{path} contains no contract")
    return contracts[0]


def _require_valid(contract):
    rep = validate(contract)
    if not rep.ok:
        msgs = "; ".join(f"{f.rule}: {f.message}" for f in rep.errors)
        raise UsageError(f"{contract.id} fails validation: {msgs}")


def _print_report(rep, as_json: bool, out):
    if as_json:
        print(rep.to_json() if hasattr(rep, "to_json") else _dump(rep), file=out)
        return
    rs = rep.residual_summary
    print(f"{rep.contract_id}  {rep.impl_id}  {rep.verdict.upper()}", file=out)
    if rep.verdict == "not_applicable":
        print(f"  reason: {rep.reason}", file=out)
        return
    print(f"  samples: {rep.sample_count}  seed: {rep.seed}  failures: {rs['failures']}", file=out)
    print(f"  residual ({rs['kind']}): max {rs['max']:.6g}  mean {rs['mean']:.6g}  "
          f"bound ({rs['tolerance_kind']}) {rs['bound']:.6g}", file=out)
    if rep.verdict == "violating":
        flag = "matched" if rep.matched_signature else "not matched"
        print(f"  signature {flag}: {rep.signature_details}", file=out)


def _trace_sink(args, stem):
    path = resolve_trace_path(args.trace_out, stem)
    return TraceWriter(path, mode="w"), path


# ---------------------------------------------------------------------------
# subcommands

def cmd_check(args, out):
    contract = _load_contract(args.contract, args.contract_id)
    _require_valid(contract)
    try:
        impl = get_impl(args.impl)
    except UnknownImpl as e:
        raise UsageError(str(e.args[0])) from e
    sink, path = _trace_sink(args, f"{contract.id}_{impl.id}_s{args.seed}")
    with sink:
        rep = run_protocol(contract, impl, args.seed, args.budget, sink, timestamps=not args.no_timestamp)
    _print_report(rep, args.json, out)
    if not args.json and rep.sample_count:
        print(f"  traces: {path} ({sink.count} records)", file=out)
    return {"conforming": EXIT_OK, "violating": EXIT_VIOLATION}.get(rep.verdict, EXIT_USAGE)


def cmd_calibrate(args, out):
    contract = _load_contract(args.contract, args.contract_id)
    _require_valid(contract)
    try:
        if args.triple:
            ids = [s.strip() for s in args.triple.split(",")]
            if len(ids) != 3:
                raise UsageError("--triple needs good,bad,baseline")
            triple = tuple(get_impl(i) for i in ids)
        else:
            triple = triple_for(contract.id)
    except UnknownImpl as e:
        raise UsageError(str(e.args[0])) from e
    sink, path = _trace_sink(args, f"{contract.id}_calibrate_s{args.seed}")
    with sink:
        v = three_state_calibrate(contract, triple, args.seed, args.budget, sink,
                                  timestamps=not args.no_timestamp)
    if args.json:
        print(v.to_json(), file=out)
    else:
        print(f"{v.contract_id}  separated={str(v.separated).lower()}", file=out)
        for state in ("good", "bad", "baseline"):
            s = v.per_state[state]
            print(f"  {state:<9} {s['impl']:<28} smoke={'pass' if s['smoke_pass'] else 'fail'}  "
                  f"contract={s['verdict']}", file=out)
    return EXIT_OK if v.separated else EXIT_VIOLATION


def _load_matrix(path):
    try:
        return np.load(path)
    except (OSError, ValueError) as e:
        raise UsageError(f"cannot load {path}: {e}") from e


def cmd_verify_matmul(args, out):
    cfg = FV.VerifierConfig(args.k, args.atol, args.rtol, args.mode, args.seed)
    if args.a or args.b or args.c:
        if not (args.a and args.b and args.c):
            raise UsageError("--a, --b and --c must be given together")
        A, B, C = (_load_matrix(p) for p in (args.a, args.b, args.c))
    else:
        m, n, p = _shape(args.shape)
        rng = np.random.default_rng(args.seed)
        A = rng.standard_normal((m, n)).astype(np.float32)
        B = rng.standard_normal((n, p)).astype(np.float32)
        C = (A @ B).astype(np.float64)
        if args.corrupt:
            C[rng.integers(m), rng.integers(p)] += args.corrupt * FV.threshold(A, B, C, cfg.atol, cfg.rtol)
    try:
        res = FV.verify(A, B, C, cfg)
    except (FV.NonFiniteInput, ValueError) as e:
        raise UsageError(str(e)) from e
    if args.json:
        print(_dump(res.to_dict()), file=out)
    else:
        print(f"{'PASS' if res.passed else 'DETECTED'}  k={cfg.k} mode={cfg.mode}  "
              f"max_residual={res.max_residual:.6g}  threshold={res.threshold_used:.6g}", file=out)
    return EXIT_OK if res.passed else EXIT_VIOLATION


def _shape(text):
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"bad shape {text!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise UsageError("shape must be m,n,p with positive entries")
    return dims


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"bad number list {text!r}") from None


def cmd_sensitivity(args, out):
    cfg = FV.VerifierConfig(args.k, args.atol, args.rtol, args.mode, args.seed)
    rows = FV.sensitivity_experiment(_shape(args.shape), _floats(args.magnitudes), args.trials, cfg)
    text = FV.to_csv(rows, FV.SENSITIVITY_HEADER)
    if args.csv_out:
        Path(args.csv_out).write_text(text)
    print(_dump(rows) if args.json else text.rstrip("\n"), file=out)
    return EXIT_OK


def cmd_bench(args, out):
    cfg = FV.VerifierConfig(args.k, args.atol, args.rtol, "batched", args.seed)
    sizes = tuple(int(v) for v in _floats(args.sizes))
    sink, path = _trace_sink(args, f"bench_overhead_s{args.seed}")
    with sink:
        rows = FV.overhead_benchmark(sizes, cfg, args.reps, sink)
    text = FV.to_csv(rows, FV.OVERHEAD_HEADER)
    if args.csv_out:
        Path(args.csv_out).write_text(text)
    print(_dump(rows) if args.json else text.rstrip("\n"), file=out)
    return EXIT_OK


def cmd_retest(args, out):
    subs = [s for s in (args.subsystems or "").split(",") if s.strip()]
    try:
        plan = retest_plan(args.from_version, args.to_version, subs)
    except VersionParseError as e:
        raise UsageError(str(e)) from e
    if args.json:
        print(plan.to_json(), file=out)
    else:
        print(f"{plan.from_version} -> {plan.to_version} ({plan.change_class})", file=out)
        for cid, d in plan.to_dict()["per_contract"].items():
            print(f"  {cid:<10} {d['decision']:<6} {d['reason']}", file=out)
    return EXIT_OK


def cmd_list(args, out):
    impls = list_impls()
    if args.json:
        print(_dump([i.to_dict() | {"declared": dict(i.declared)} for i in impls]), file=out)
    else:
        for i in impls:
            print(f"{i.id:<28} {i.op_class:<16} {i.calibration_state:<9} {i.declared_json()}", file=out)
    return EXIT_OK


def cmd_parse(args, out):
    files = []
    for p in args.paths:
        path = Path(p)
        if path.is_dir():
            files.extend(sorted(path.glob("*.kc")))
        elif path.exists():
            files.append(path)
        else:
            raise UsageError(f"no such file or directory: {p}")
    results, bad = [], 0
    for f in files:
        try:
            text = f.read_text(encoding="utf-8")
            contracts = parse_contracts(text)
        except (ContractError, IoError, OSError, UnicodeDecodeError) as e:
            bad += 1
            loc = f":{e.line}:{e.column}" if getattr(e, "line", None) else ""
            results.append({"file": str(f), "ok": False, "error": f"{f}{loc}: {e}"})
            continue
        for c in contracts:
            rep = validate(c)
            bad += not rep.ok
            results.append({"file": str(f), "id": c.id, "ok": rep.ok,
                            "findings": [x.to_dict() for x in rep.findings]})
    if args.json:
        print(_dump(results), file=out)
    else:
        for r in results:
            if "error" in r:
                print(f"FAIL  {r['error']}", file=out)
                continue
            n_err = sum(x["severity"] == "error" for x in r["findings"])
            n_warn = len(r["findings"]) - n_err
            print(f"{'OK  ' if r['ok'] else 'FAIL'}  {r['file']}  {r['id']}  "
                  f"({n_err} errors, {n_warn} warnings)", file=out)
            for x in r["findings"]:
                where = f"{x['line']}:{x['column']}" if x["line"] else "-"
                print(f"      {x['severity']:<7} {x['rule']} at {where}: {x['message']}", file=out)
        print(f"{len(files)} files, {len(files) - len({r['file'] for r in results if not r['ok']})} OK", file=out)
    return EXIT_VIOLATION if bad else EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--trace-out", default=None, help="trace file or directory (default $KC_TRACE_DIR or ./traces)")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--no-timestamp", action="store_true", help=f"write {FIXED_TIMESTAMP} in traces")

    ap = argparse.ArgumentParser(prog="kc", description="Executable numerical kernel contracts")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[common], help="run a contract's measurement protocol on one kernel")
    p.add_argument("contract")
    p.add_argument("--impl", required=True)
    p.add_argument("--contract-id", default=None)
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("calibrate", parents=[common], help="three-state calibration of a contract")
    p.add_argument("contract")
    p.add_argument("--triple", default=None, help="good,bad,baseline impl ids")
    p.add_argument("--contract-id", default=None)
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p.set_defaults(func=cmd_calibrate)

    def verifier_opts(p, k):
        p.add_argument("--k", type=int, default=k)
        p.add_argument("--atol", type=float, default=1e-4)
        p.add_argument("--rtol", type=float, default=1e-4)

    p = sub.add_parser("verify-matmul", parents=[common], help="Freivalds check of C = A @ B")
    verifier_opts(p, 20)
    p.add_argument("--mode", choices=("batched", "naive"), default="batched")
    p.add_argument("--a")
    p.add_argument("--b")
    p.add_argument("--c")
    p.add_argument("--shape", default="256,128,64", help="random problem m,n,p when no files are given")
    p.add_argument("--corrupt", type=float, default=0.0, help="corrupt one element by this many thresholds")
    p.set_defaults(func=cmd_verify_matmul)

    p = sub.add_parser("sensitivity", parents=[common], help="detection rate vs corruption magnitude")
    verifier_opts(p, 20)
    p.add_argument("--mode", choices=("batched", "naive"), default="batched")
    p.add_argument("--shape", default="256,128,64")
    p.add_argument("--magnitudes", default=",".join(str(m) for m in FV.TABLE_MULTIPLIERS))
    p.add_argument("--trials", type=int, default=40)
    p.add_argument("--csv-out", default=None)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("bench-overhead", parents=[common], help="verifier overhead relative to matmul")
    verifier_opts(p, 10)
    p.add_argument("--sizes", default="256,512,1024,2048")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--csv-out", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("retest-plan", parents=[common], help="contracts to re-verify after a version change")
    p.add_argument("from_version")
    p.add_argument("to_version")
    p.add_argument("--subsystems", default="", help="comma-separated release-note tags (PRC, ORD, softmax, ...)")
    p.set_defaults(func=cmd_retest)

    p = sub.add_parser("list-kernels", parents=[common], help="registered implementations")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("parse", parents=[common], help="parse and validate .kc files or directories")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_parse)
    return ap


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args, out)
    except UsageError as e:
        print(f"kc: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ContractError as e:
        print(f"kc: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SinkError as e:
        print(f"kc: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (UnsupportedProtocol, OracleUnavailable) as e:
        print(f"kc: unsupported: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - the exit code is the contract here
        print(f"kc: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
