import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from datlab import datagen  # noqa: E402


@pytest.fixture(scope="session")
def default_data():
    cfg = datagen.default_config(seed=0)
    return (cfg, *datagen.generate(cfg))


@pytest.fixture(scope="session")
def small_data():
    """A reduced default config: 200 records per domain, quick to train on."""
    cfg = datagen.default_config(seed=1, samples_per_domain=200)
    return (cfg, *datagen.generate(cfg))


ACCEPTANCE_LINES: dict[str, str] = {}


def record_acceptance(key: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[key] = f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.rstrip("abcd")), k)):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
