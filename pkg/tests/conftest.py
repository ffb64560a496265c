"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""

import pytest

CHECKS: dict[int, tuple[str, list]] = {}


def verdict_lines(number: int) -> list[str]:
    title, checks = CHECKS[number]
    passed = all(c.passed for c in checks)
    head = f"[{'PASS' if passed else 'FAIL'}] criterion {number} {title}"
    failing = sum(not c.passed for c in checks)
    if failing:
        head += f" ({failing}/{len(checks)} sub-checks failed)"
    return [head] + ["    " + c.line() for c in checks]


@pytest.fixture
def record_verdict():
    """Add checks to a criterion; parametrized tests accumulate into one verdict."""

    def record(number: int, title: str, checks) -> bool:
        checks = list(checks)
        CHECKS.setdefault(number, (title, []))[1].extend(checks)
        print("\n".join(verdict_lines(number)))
        return all(c.passed for c in checks)

    return record


def pytest_terminal_summary(terminalreporter):
    if not CHECKS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CHECKS):
        for line in verdict_lines(number):
            terminalreporter.write_line(line)
