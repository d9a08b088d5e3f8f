import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
for path in (ROOT, ROOT / "tests"):
    if str(path) not in sys.path:
        sys.path.insert(0, str(path))

from hddp_model import load_model, parse_model  # noqa: E402
from zoo import ZOO  # noqa: E402

FIXTURES = ROOT / "fixtures"


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="Run the full-motion solves.")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def fixtures_path() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def rh5():
    return load_model(FIXTURES / "rh5.model")


@pytest.fixture(scope="session")
def zoo():
    return {name: parse_model(text, f"{name}.model") for name, text in ZOO.items()}


@pytest.fixture(autouse=True)
def _isolated_config(monkeypatch, tmp_path):
    """Keep a developer's hddp_config.json out of the tests."""
    monkeypatch.setenv("HDDP_CONFIG", str(tmp_path / "no-config.json"))
