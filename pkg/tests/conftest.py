import json
from pathlib import Path

import pytest

from approxmac.fixtures import data_dir

GOLDEN = Path(__file__).parent / "golden"
_criteria = {}


def record_criterion(num, ok, detail):
    _criteria[num] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        ok, detail = _criteria[num]
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def mnist_paths():
    d = data_dir() / "mnist"
    return d / "t1k-images-idx3-ubyte", d / "t1k-labels-idx1-ubyte"


@pytest.fixture(scope="session")
def golden_lenet():
    return json.loads((GOLDEN / "lenet_exact.json").read_text())
