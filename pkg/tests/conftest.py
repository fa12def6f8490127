import pytest

_ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion; printed in the summary."""
    def rec(key: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {key:<4} {detail}"
        _ACCEPTANCE[key] = line
        print(line)
        return ok
    return rec


def _order(key: str):
    num = "".join(ch for ch in key if ch.isdigit())
    return int(num), key


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=_order):
        terminalreporter.write_line(_ACCEPTANCE[key])
