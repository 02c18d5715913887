import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import acceptance_report  # noqa: E402

_OUTCOMES: dict[str, str] = {}


def _criterion(nodeid: str) -> str | None:
    m = re.search(r"test_acceptance\.py::test_ac(\d+)\w*(\[[^\]]+\])?", nodeid)
    if not m:
        return None
    return f"AC-{int(m.group(1))}{m.group(2) or ''}"


def pytest_runtest_logreport(report):
    key = _criterion(report.nodeid)
    if key is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        if hasattr(report, "wasxfail"):
            _OUTCOMES[key] = "FAIL (trend not reproduced, expected-fail)"
        else:
            _OUTCOMES[key] = "PASS" if report.passed else "FAIL"


def _order(key):
    m = re.match(r"AC-(\d+)(.*)", key)
    return int(m.group(1)), m.group(2)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_OUTCOMES, key=_order):
        detail = acceptance_report.DETAILS.get(key, "")
        terminalreporter.write_line(f"{key} {_OUTCOMES[key]}" + (f"  {detail}" if detail else ""))
