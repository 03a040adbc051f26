from __future__ import annotations

import contextlib

import pytest

ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion."""

    @contextlib.contextmanager
    def check(number: int, title: str):
        try:
            yield
        except BaseException as exc:
            line = f"criterion {number:2d}: FAIL  {title}  ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})"
            ACCEPTANCE.append(line)
            print(line)
            raise
        line = f"criterion {number:2d}: PASS  {title}"
        ACCEPTANCE.append(line)
        print(line)

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
