import sys

import numpy as np
import pytest

from crossres.fusion import init_weights
from crossres.selfcheck import randomize, rebind  # noqa: F401  (shared with tests)
from crossres.tensor import Tensor
from crossres.weights import ModelConfig, Weights

SMALL = ModelConfig(channels=4, fe_blocks=1, msn_blocks=1, mfe_blocks=1, fusion_blocks=1,
                    branches=("luma",))


@pytest.fixture
def small_weights():
    return init_weights(SMALL, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance.VERDICTS):
            terminalreporter.write_line(line)
