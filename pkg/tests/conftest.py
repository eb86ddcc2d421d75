import pytest

# (criterion, passed, detail) recorded by test_acceptance.py
VERDICTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def verdict():
    def record(name: str, passed: bool, detail: str) -> bool:
        VERDICTS.append((name, bool(passed), detail))
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in VERDICTS:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
