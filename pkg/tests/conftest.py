import time
from pathlib import Path

import pytest

from mirrorquant.harness import load_config, records_to_csv, train

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class RunCache:
    """Trains each shipped config once per session and remembers the wall time."""

    def __init__(self):
        self._runs = {}

    def get(self, name):
        if name not in self._runs:
            cfg = load_config(CONFIG_DIR / f"{name}.json")
            start = time.perf_counter()
            result = train(cfg)
            self._runs[name] = (result, time.perf_counter() - start, records_to_csv(result.records))
        return self._runs[name]


@pytest.fixture(scope="session")
def runs():
    return RunCache()


@pytest.fixture(scope="session")
def config_dir():
    return CONFIG_DIR


@pytest.fixture(scope="session")
def acceptance_log(request):
    lines = []
    request.config._acceptance_lines = lines
    return lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
