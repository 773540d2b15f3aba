import os
import tempfile

import pytest
from hypothesis import settings

# keep the oracle cache out of the user's home during tests
os.environ.setdefault("RIL_CACHE_DIR", tempfile.mkdtemp(prefix="ril-cache-"))

settings.register_profile("ril", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("ril")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_criterion():
    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
