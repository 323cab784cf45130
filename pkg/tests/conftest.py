import sys
from pathlib import Path

import pytest

from fmce import fmcs_dataset
from fmce.original_task import TrainConfig, generate_dataset, train_original

FIXTURES = Path(__file__).parent / "fixtures"

SMALL_MARKERS = (2, 4, 6)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    """Six-epoch original-task run on 50 images per class."""
    data = generate_dataset(seed=0, n_per_class=50)
    trace = train_original(data, tmp_path_factory.mktemp("trace"), TrainConfig(epochs=6, batch_size=32, seed=0))
    return data, trace


@pytest.fixture(scope="session")
def small_fmcs_bytes(small_run):
    data, trace = small_run
    ds = fmcs_dataset.build_fmcs_dataset(trace, SMALL_MARKERS, data)
    fmcs_dataset.split(ds, seed=0)
    return fmcs_dataset.dumps(ds), ds.provenance


@pytest.fixture
def small_fmcs(small_fmcs_bytes):
    """A fresh split copy for each test."""
    data, provenance = small_fmcs_bytes
    ds = fmcs_dataset.loads(data)
    ds.provenance = dict(provenance)
    return fmcs_dataset.split(ds, seed=0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)
