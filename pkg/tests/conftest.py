import json
from pathlib import Path

import pytest

from optospec.config import load

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def config_params(name):
    return load(CONFIGS / f"{name}.json")["_params"]


@pytest.fixture
def fig2d():
    return config_params("fig2d")


@pytest.fixture
def write_config(tmp_path):
    def write(doc, name="cfg.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc))
        return path

    return write


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
