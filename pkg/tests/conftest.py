import pytest

# criterion number -> list of (part, passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{name}: {'ok' if good else 'FAILED'} ({info})" for name, good, info in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")


@pytest.fixture
def acceptance_record():
    def record(n: int, part: str, passed: bool, detail: str = ""):
        ACCEPTANCE.setdefault(n, []).append((part, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'} criterion {n} [{part}] {detail}")
        return bool(passed)

    return record
