"""Shared test plumbing: a human-readable acceptance-criteria report."""

from __future__ import annotations

import contextlib

import pytest

_LINES: list[tuple[int, str]] = []


@pytest.fixture
def acceptance():
    """Context manager recording one PASS/FAIL line per acceptance criterion.

    Usage::

        with acceptance(3, "oracle equivalence") as note:
            ...asserts...
            note["detail"] = "worst gap 9.6e-04 over 1000 tournaments"

    The body completing marks the criterion PASS; any exception marks it FAIL
    (and still fails the test). Lines are echoed immediately and repeated in a
    terminal-summary section so they survive output capture.
    """

    @contextlib.contextmanager
    def runner(number: int, title: str):
        note: dict[str, str] = {}
        try:
            yield note
        except BaseException:
            _record(number, f"criterion {number:2d} — {title}: FAIL")
            raise
        detail = note.get("detail", "")
        suffix = f" ({detail})" if detail else ""
        _record(number, f"criterion {number:2d} — {title}: PASS{suffix}")

    return runner


def _record(number: int, line: str) -> None:
    _LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES):
        terminalreporter.write_line(line)
