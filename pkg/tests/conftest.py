import sys
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from leporid.interactions import filter_min_activity, temporal_split  # noqa: E402
from leporid.simgraph import SparseSymMatrix  # noqa: E402
from leporid.synth import planted_log  # noqa: E402

SYNTH_MIN_COUNT = 3


def synth_split(seed: int = 123):
    return temporal_split(filter_min_activity(planted_log(seed=seed), SYNTH_MIN_COUNT))


@pytest.fixture(scope="session")
def small_synth():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return temporal_split(filter_min_activity(
            planted_log(clusters=2, users=40, items=30, p_in=0.4, p_out=0.02, seed=5), 3))


@pytest.fixture
def p3():
    W = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    return SparseSymMatrix.from_dense(W)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
