import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernel_contracts.contract_lang import (
    PARTS,
    ContractSyntaxError,
    DuplicatePartError,
    IoError,
    MissingPartError,
    canonical_serialize,
    lex,
    parse_contract,
    parse_contracts,
    parse_corpus,
    parse_file,
    validate,
)

MINIMAL = """contract C-TST-01 {
scope      matmul
pre        inputs at precision FP32
post       output equals exact product
tolerance  ulp 0
reference  higher_precision FP64
measure    sample 16 inputs uniformly
violation  more than 5% of samples exceed tolerance
}
"""


def test_corpus_has_eighteen_contracts(corpus):
    assert len(corpus) == 18
    assert {"C-PRC-01", "C-FA3-NUM", "C-EXC-02-AMD-INDEX"} <= set(corpus)


def test_corpus_validates_without_errors(corpus):
    for cid, ast in corpus.items():
        rep = validate(ast)
        assert rep.ok, (cid, [f.message for f in rep.errors])


def test_corpus_round_trip(corpus):
    for cid, ast in corpus.items():
        text = canonical_serialize(ast)
        again = parse_contract(text)
        assert again == ast, cid
        assert canonical_serialize(again) == text


def test_parse_corpus_reports_failures_as_values(tmp_path):
    (tmp_path / "good.kc").write_text(MINIMAL)
    (tmp_path / "bad.kc").write_text("contract C-X-1 { scope matmul }")
    out = dict(parse_corpus(tmp_path))
    assert isinstance(out["bad.kc"], MissingPartError)
    assert out["good.kc"].id == "C-TST-01"


def test_io_errors(tmp_path):
    with pytest.raises(IoError):
        parse_file(tmp_path / "missing.kc")
    with pytest.raises(IoError):
        parse_corpus(tmp_path / "nope")


def test_minimal_contract_structure():
    ast = parse_contract(MINIMAL)
    assert ast.scope[0].name == "matmul"
    assert ast.tolerance.kind == "ulp" and ast.tolerance.value == 0
    assert ast.reference.kind == "higher_precision" and ast.reference.target == "FP64"
    assert ast.measure.kind == "sample" and ast.measure.count == 16
    assert ast.violation.matcher.kind == "tolerance-exceeded-fraction"
    assert ast.positions["scope"] == (2, 1)


@pytest.mark.parametrize("part", PARTS[1:])
def test_each_missing_part_is_named(part):
    lines = [ln for ln in MINIMAL.splitlines() if not ln.startswith(part + " ")]
    with pytest.raises(MissingPartError) as e:
        parse_contract("\n".join(lines))
    assert e.value.parts == (part,)


def test_missing_identifier():
    with pytest.raises(MissingPartError) as e:
        parse_contract(MINIMAL.replace("C-TST-01 ", ""))
    assert "id" in e.value.parts


def test_empty_body_lists_all_clauses():
    with pytest.raises(MissingPartError) as e:
        parse_contract("contract C-X-01 {}")
    assert e.value.parts == PARTS[1:]


def test_duplicate_clause():
    src = MINIMAL.replace("reference  higher_precision FP64", "reference  higher_precision FP64\nreference  spec")
    with pytest.raises(DuplicatePartError) as e:
        parse_contract(src)
    assert e.value.part == "reference"


def test_unclosed_body_position():
    with pytest.raises(ContractSyntaxError) as e:
        parse_contract(MINIMAL.rstrip().rstrip("}"))
    assert e.value.line >= 1 and "}" in e.value.expected


def test_unterminated_string():
    with pytest.raises(ContractSyntaxError) as e:
        lex('contract "abc')
    assert (e.value.line, e.value.column) == (1, 10)


def test_multiple_contracts_per_source():
    both = parse_contracts(MINIMAL + MINIMAL.replace("C-TST-01", "C-TST-02"))
    assert [a.id for a in both] == ["C-TST-01", "C-TST-02"]
    with pytest.raises(ContractSyntaxError):
        parse_contract(MINIMAL + MINIMAL)


def test_extension_op_class_warns():
    ast = parse_contract(MINIMAL.replace("scope      matmul", "scope      matmul, ragged_scan"))
    rep = validate(ast)
    assert rep.ok
    assert any(f.rule == "EXTENSION_OP_CLASS" for f in rep.warnings)


def test_algebraic_reference_requires_bound():
    src = MINIMAL.replace("higher_precision FP64", "algebraic idempotence").replace("ulp 0", "none")
    rep = validate(parse_contract(src))
    assert [f.rule for f in rep.errors] == ["ALG_NO_EPSILON"]


def test_per_precision_must_cover_preconditions():
    src = (MINIMAL.replace("inputs at precision FP32", "precision(A, B) in {FP16, BF16}")
           .replace("ulp 0", "per_precision { FP16: relative 1e-3 }"))
    rep = validate(parse_contract(src))
    assert any(f.rule == "PER_PRECISION_MISSING" for f in rep.errors)


def test_unknown_reference_format_is_error():
    rep = validate(parse_contract(MINIMAL.replace("higher_precision FP64", "higher_precision FP128")))
    assert any(f.rule == "REF_UNKNOWN_FORMAT" for f in rep.errors)


def test_free_text_measure_is_custom_warning():
    src = MINIMAL.replace("sample 16 inputs uniformly", "ask an expert to eyeball the output")
    ast = parse_contract(src)
    assert ast.measure.kind == "custom"
    assert any(f.rule == "PROTOCOL_CUSTOM" for f in validate(ast).warnings)


def test_comments_and_whitespace_ignored():
    noisy = MINIMAL.replace("scope      matmul", "# leading comment\nscope   matmul   # trailing")
    assert parse_contract(noisy) == parse_contract(MINIMAL)


def _tokens(src):
    return [t for t in lex(src) if t.kind != "EOF"]


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_token_deletion_errors_point_into_source(data):
    toks = _tokens(MINIMAL)
    k = data.draw(st.integers(0, len(toks) - 1))
    t = toks[k]
    lines = MINIMAL.split("\n")
    row = lines[t.line - 1]
    lines[t.line - 1] = row[:t.col - 1] + " " * len(t.text) + row[t.col - 1 + len(t.text):]
    src = "\n".join(lines)
    try:
        parse_contract(src)
    except ContractSyntaxError as e:
        assert 1 <= e.line <= src.count("\n") + 1
        assert e.column >= 1
    except MissingPartError as e:
        assert e.parts
    # some deletions leave a still-valid contract, which is fine


def test_error_message_format():
    with pytest.raises(ContractSyntaxError) as e:
        parse_contract("module C-X-01 {}")
    assert re.match(r"^1:1: ", str(e.value))
    assert e.value.expected == ("contract",)
