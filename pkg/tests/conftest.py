from __future__ import annotations

import sys
from pathlib import Path

from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

import acceptance_log  # noqa: E402

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    rows = acceptance_log.lines()
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for row in rows:
        terminalreporter.write_line(row)
