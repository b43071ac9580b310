import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kernel_contracts.cli import main
from kernel_contracts.retest import (
    ALWAYS,
    POLICY_CONTRACTS,
    VersionParseError,
    change_class,
    parse_version,
    retest_plan,
)
from kernel_contracts.trace import (
    TRACE_FIELDS,
    TraceRecord,
    TraceRecordError,
    TraceWriter,
    histogram_labels,
    input_ref,
    read_traces,
    resolve_trace_path,
    summarize_traces,
)


def record(i=0, residual=0.5, verdict="pass", impl="matmul.good"):
    return TraceRecord(
        contract_id="C-PRC-01", contract_version="v" * 64, impl_id=impl,
        silicon_profile={"host_arch": "x86_64"}, input_ref="0" * 64, residual_kind="relative",
        residual=residual, tolerance_kind="relative", tolerance=1e-3, verdict=verdict,
        sample_index=i, seed=7, timestamp="1970-01-01T00:00:00.000Z")


def run_cli(*argv):
    buf = io.StringIO()
    code = main(list(argv), buf)
    return code, buf.getvalue()


# -- traces -----------------------------------------------------------------

def test_thirteen_fields():
    assert len(TRACE_FIELDS) == 13
    assert list(json.loads(record().to_json())) == list(TRACE_FIELDS)


def test_round_trip_many_records(tmp_path):
    path = tmp_path / "t.jsonl"
    rng = np.random.default_rng(0)
    res = rng.exponential(size=10 ** 4)
    res[:3] = (math.inf, -math.inf, math.nan)
    with TraceWriter(path) as w:
        for i, r in enumerate(res):
            w.emit(record(i, float(r)))
    recs, diags = read_traces(path)
    assert diags == [] and len(recs) == 10 ** 4
    got = np.array([r.residual for r in recs])
    np.testing.assert_array_equal(got, res)
    assert [r.sample_index for r in recs] == list(range(10 ** 4))


def test_nonfinite_written_as_strings():
    d = json.loads(record(residual=math.nan).to_json())
    assert d["residual"] == "NaN"


def test_truncated_line_gives_diagnostic():
    good = record().to_json()
    recs, diags = read_traces([good, good[:40], good])
    assert len(recs) == 2
    assert [d.line for d in diags] == [2]


def test_empty_file(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    assert read_traces(p) == ([], [])


def test_missing_field_rejected():
    d = json.loads(record().to_json())
    del d["seed"]
    with pytest.raises(TraceRecordError):
        TraceRecord.from_dict(d)
    recs, diags = read_traces([json.dumps(d)])
    assert recs == [] and len(diags) == 1


def test_bad_verdict_rejected():
    with pytest.raises(TraceRecordError):
        record(verdict="maybe").validate()


def test_input_ref_depends_on_content_and_format():
    x = {"a": np.arange(4.0)}
    h = input_ref(x, {"a": "FP32"})
    assert len(h) == 64 and h == input_ref({"a": np.arange(4.0)}, {"a": "FP32"})
    assert h != input_ref(x, {"a": "FP16"})
    assert h != input_ref({"a": np.arange(4.0).reshape(2, 2)}, {"a": "FP32"})


def test_summarize():
    recs = [record(0, 1e-5), record(1, 2.0, "fail"), record(2, math.nan, "fail"), record(3, 0.0, impl="x")]
    s = summarize_traces(recs)
    agg = s[("C-PRC-01", "matmul.good")]
    assert agg["runs"] == 3 and agg["fails"] == 2
    assert math.isnan(agg["max_residual"])
    assert agg["residual_histogram"]["[1e-5,1e-4)"] == 1
    assert agg["residual_histogram"][">=1e0"] == 2
    assert s[("C-PRC-01", "x")]["residual_histogram"]["<1e-16"] == 1
    assert len(histogram_labels()) == 18


def test_trace_path_resolution(tmp_path, monkeypatch):
    assert resolve_trace_path(tmp_path / "a.jsonl", "s") == tmp_path / "a.jsonl"
    assert resolve_trace_path(tmp_path, "s") == tmp_path / "s.jsonl"
    monkeypatch.setenv("KC_TRACE_DIR", str(tmp_path / "env"))
    assert resolve_trace_path(None, "s") == tmp_path / "env" / "s.jsonl"


# -- retest -----------------------------------------------------------------

def test_patch_change_retests_always_set():
    assert retest_plan("6.2", "6.3").retest == set(ALWAYS)


def test_major_change_retests_everything():
    plan = retest_plan("6.2", "7.0")
    assert plan.retest == set(POLICY_CONTRACTS) and len(plan.retest) == 12


def test_same_version_still_retests_always():
    plan = retest_plan("6.2", "6.2")
    assert plan.change_class == "patch" and plan.retest == set(ALWAYS)


def test_release_note_tags():
    plan = retest_plan("6.2", "6.3", ["softmax"])
    assert "C-PRC-02" in plan.retest and "C-CMP-01" in plan.skip
    assert "C-CMP-01" in retest_plan("6.2", "6.3", ["CMP"]).retest


def test_unknown_contract_retested_conservatively():
    plan = retest_plan("1.0", "1.1", contract_set=["C-ZZZ-01", "C-PRC-01-FP8-ACCUMULATOR"])
    assert plan.retest == {"C-ZZZ-01", "C-PRC-01-FP8-ACCUMULATOR"}


@given(st.sets(st.sampled_from(["PRC", "CMP", "softmax", "training_loop", "ORD", "fused_attention"])),
       st.sets(st.sampled_from(["PRC", "CMP", "softmax", "training_loop", "ORD", "fused_attention"])))
def test_more_tags_never_retest_less(a, b):
    assert retest_plan("6.2", "6.3", a).retest <= retest_plan("6.2", "6.3", a | b).retest


def test_version_parsing():
    assert parse_version("v10.2.1") == (10, 2, 1)
    assert change_class("6", "6.1") == "minor"
    with pytest.raises(VersionParseError):
        parse_version("six")
    with pytest.raises(VersionParseError):
        retest_plan("6.x", "7.0")


# -- cli --------------------------------------------------------------------

def test_cli_check_exit_codes(contract_dir, tmp_path):
    code, out = run_cli("check", str(contract_dir / "c-exc-02.kc"), "--impl", "gather.good",
                        "--budget", "8", "--trace-out", str(tmp_path))
    assert code == 0 and "CONFORMING" in out
    code, out = run_cli("check", str(contract_dir / "c-exc-02.kc"), "--impl", "gather.bad",
                        "--budget", "8", "--trace-out", str(tmp_path))
    assert code == 1 and "VIOLATING" in out


def test_cli_usage_errors(contract_dir, tmp_path):
    assert run_cli("check", str(contract_dir / "c-exc-02.kc"), "--impl", "nope",
                   "--trace-out", str(tmp_path))[0] == 2
    assert run_cli("check", str(tmp_path / "missing.kc"), "--impl", "gather.good")[0] == 2
    assert run_cli("frobnicate")[0] == 2
    assert run_cli("check", str(contract_dir / "c-prc-04.kc"), "--impl", "matmul.good",
                   "--trace-out", str(tmp_path))[0] == 2
    assert run_cli("retest-plan", "six", "7")[0] == 2
    assert run_cli("--help")[0] == 0


def test_cli_parse_reports_failures(contract_dir, tmp_path):
    code, out = run_cli("parse", str(contract_dir))
    assert code == 0 and "18 files, 18 OK" in out
    (tmp_path / "bad.kc").write_text("contract C-X-01 { scope matmul }")
    assert run_cli("parse", str(tmp_path))[0] == 1


def test_cli_no_timestamp_is_byte_identical(contract_dir, tmp_path):
    args = ["check", str(contract_dir / "c-ord-02.kc"), "--impl", "reduce_atomic.bad", "--budget", "6",
            "--no-timestamp", "--json"]
    c1, o1 = run_cli(*args, "--trace-out", str(tmp_path / "a.jsonl"))
    c2, o2 = run_cli(*args, "--trace-out", str(tmp_path / "b.jsonl"))
    assert c1 == c2 == 1 and o1 == o2
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_cli_uses_trace_env_dir(contract_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("KC_TRACE_DIR", str(tmp_path))
    code, _ = run_cli("check", str(contract_dir / "c-exc-01.kc"), "--impl", "exceptional.good", "--budget", "3")
    assert code == 0
    files = list(tmp_path.glob("*.jsonl"))
    assert len(files) == 1 and len(read_traces(files[0])[0]) == 3


def test_cli_verify_and_retest_json():
    code, out = run_cli("verify-matmul", "--shape", "32,16,8")
    assert code == 0 and out.startswith("PASS")
    assert run_cli("verify-matmul", "--shape", "32,16,8", "--corrupt", "50")[0] == 1
    code, out = run_cli("retest-plan", "6.2", "6.3", "--json")
    plan = json.loads(out)
    assert code == 0 and {k for k, v in plan["per_contract"].items() if v["decision"] == "retest"} == set(ALWAYS)


def test_cli_verify_matmul_files(tmp_path):
    A, B = np.eye(3), np.ones((3, 2))
    for n, m in (("a", A), ("b", B), ("c", A @ B)):
        np.save(tmp_path / f"{n}.npy", m)
    args = ["verify-matmul", "--a", str(tmp_path / "a.npy"), "--b", str(tmp_path / "b.npy")]
    assert run_cli(*args, "--c", str(tmp_path / "c.npy"))[0] == 0
    assert run_cli(*args)[0] == 2


def test_cli_list_kernels():
    code, out = run_cli("list-kernels")
    assert code == 0 and "matmul.good" in out


def test_dotted_directory_is_a_directory(tmp_path):
    d = tmp_path / "run.v2"
    d.mkdir()
    assert resolve_trace_path(d, "s") == d / "s.jsonl"


def test_cli_unwritable_trace_target_is_usage_error(contract_dir, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _ = run_cli("check", str(contract_dir / "c-exc-01.kc"), "--impl", "exceptional.good", "--budget", "2",
                      "--trace-out", str(blocker / "sub" / "t.jsonl"))
    assert code == 2
