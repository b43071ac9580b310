from pathlib import Path

import pytest

from kernel_contracts.contract_lang import parse_corpus

CONTRACT_DIR = Path(__file__).resolve().parents[1] / "src" / "kernel_contracts" / "contracts"


@pytest.fixture(scope="session")
def contract_dir():
    return CONTRACT_DIR


@pytest.fixture(scope="session")
def corpus():
    return {a.id: a for _, a in parse_corpus(CONTRACT_DIR)}


ACCEPT_LINES: list[str] = []


@pytest.fixture
def accept():
    """Record one pass/fail line per acceptance criterion, then assert."""

    def report(n: int, ok: bool, detail: str):
        line = f"ACCEPT {n:>2} {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        ACCEPT_LINES.append(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPT_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
