import numpy as np
import pytest
import torch

from genf.data import TimeSeriesDataset, Unit


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def make_dataset(lengths, K=2, seed=0, names=None):
    rng = np.random.default_rng(seed)
    units = [Unit(f"u{i}", rng.normal(size=(n, K))) for i, n in enumerate(lengths)]
    return TimeSeriesDataset(units, names or [f"f{j}" for j in range(K)])


@pytest.fixture
def small_dataset():
    return make_dataset([30] * 6, K=2)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if not LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(LINES):
        terminalreporter.write_line(LINES[n])
