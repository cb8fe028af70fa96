"""Shared fixtures plus the acceptance-criteria reporting hook."""

from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import settings

from stochnewton.datakit import SparseDataset, synth_binary
from stochnewton.model import LOGISTIC, CompositeProblem

settings.register_profile("suite", max_examples=50, deadline=None)
settings.load_profile("suite")

# (criterion number, passed, detail) triples appended by tests/test_acceptance.py
ACCEPTANCE_RESULTS = []


def record_criterion(num: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.append((num, passed, detail))


@pytest.fixture(scope="session")
def bench_problem() -> CompositeProblem:
    """The fixed benchmark instance: 2000 x 100 synthetic l1-logistic."""
    ds = synth_binary(2000, 100, density=0.2, seed=0, noise=0.0)
    return CompositeProblem(ds, loss_kind=LOGISTIC, reg_weight=0.01)


@pytest.fixture(scope="session")
def tiny_problem() -> CompositeProblem:
    """Small instance for fast structural tests."""
    ds = synth_binary(80, 12, density=0.5, seed=3)
    return CompositeProblem(ds, loss_kind=LOGISTIC, reg_weight=0.01)


@pytest.fixture(scope="session")
def scalar_problem() -> CompositeProblem:
    """Single data point a = [1], b = +1, logistic, mu = 0.1.

    Stationarity on the positive axis reads 1/(1 + e^x) = 0.1, so the unique
    minimizer is x* = ln 9.
    """
    mat = sp.csr_matrix(np.array([[1.0]]))
    ds = SparseDataset(mat, np.array([1.0]))
    return CompositeProblem(ds, loss_kind=LOGISTIC, reg_weight=0.1)


SCALAR_XSTAR = float(np.log(9.0))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, passed, detail in sorted(ACCEPTANCE_RESULTS):
        word = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE CRITERION {num}: {word} - {detail}")
