import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from pddtrack.gm_state import TargetSet  # noqa: E402


def make_set(means, covs=None, weights=None, labels=None, ages=None, frame=0):
    means = np.asarray(means, dtype=float).reshape(-1, 4)
    n = len(means)
    if covs is None:
        covs = np.repeat(np.eye(4)[None] * 20.0, n, axis=0)
    covs = np.asarray(covs, dtype=float)
    if covs.ndim == 2:
        covs = np.repeat(covs[None], n, axis=0)
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    labels = np.arange(n) if labels is None else np.asarray(labels)
    ages = np.full(n, 5) if ages is None else np.asarray(ages)
    return TargetSet(means, covs, weights, labels, ages, np.zeros((n, 2)), np.zeros(n, dtype=np.int64), frame)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
