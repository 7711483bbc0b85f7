import pytest

# criterion id -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        passed, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid}: {'PASS' if passed else 'FAIL'}  {detail}")
