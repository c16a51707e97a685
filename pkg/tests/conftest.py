"""Collects the acceptance-criterion verdicts and prints them after the run."""

import pytest

N_CRITERIA = 8
_verdicts: dict[int, tuple[bool, str]] = {}
_acceptance_collected = False


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records the verdict for criterion ``n``."""

    def record(n: int, ok: bool, detail: str) -> bool:
        _verdicts[n] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_collection_modifyitems(session, config, items):
    global _acceptance_collected
    _acceptance_collected = any(item.module.__name__ == "test_acceptance" for item in items)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_collected:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in _verdicts:
            ok, detail = _verdicts[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: FAIL  (not reached)")
