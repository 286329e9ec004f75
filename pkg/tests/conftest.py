"""Shared pytest plumbing: the acceptance tests record one line per
criterion here, and the terminal summary replays them after the run so
the pass/fail verdicts are visible regardless of output capturing.
"""

CRITERIA = {}


def record_criterion(number: int, passed: bool, detail: str = "") -> None:
    CRITERIA[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERIA:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number]
        verdict = "PASS" if passed else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}{suffix}")
