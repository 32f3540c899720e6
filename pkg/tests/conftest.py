from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from bbmdiff.bbm import BbmRealization
from bbmdiff.gw_tree import BINARY, GwTree

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

# filled by the acceptance tests, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def hand_tree(parent, birth, death, offspring, child_index, horizon, law=BINARY):
    return GwTree(law, horizon, parent, birth, death, offspring, child_index)


def single_lineage(horizon=1.0, unary_times=(0.3, 0.7), x_end=0.0):
    """One particle with unary events, ending at ``x_end``; positions linear in the event count."""
    n = len(unary_times) + 1
    births = (0.0,) + tuple(unary_times)
    deaths = tuple(unary_times) + (horizon + 1.0,)
    tree = hand_tree(np.arange(n) - 1, births, deaths, [1] * (n - 1) + [0], [0] * n, horizon)
    steps = np.full(n, x_end / n)
    end = np.cumsum(steps)
    return BbmRealization(tree, end - steps, end)


@pytest.fixture
def lineage():
    return single_lineage()


@pytest.fixture
def gamma_tree():
    """Root splits in two at 1; its second child splits in three at 2; horizon 3.

    Leaf labels by id: 1 -> 0, 3 -> {1:1}, 4 -> {1:1, 2:1}, 5 -> {1:1, 2:2}.
    """
    return hand_tree(parent=[-1, 0, 0, 2, 2, 2],
                     birth=[0, 1, 1, 2, 2, 2],
                     death=[1, 9, 2, 9, 9, 9],
                     offspring=[2, 0, 3, 0, 0, 0],
                     child_index=[0, 0, 1, 0, 1, 2],
                     horizon=3.0)
