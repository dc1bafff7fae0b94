import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mmaudit.ingest import Dataset  # noqa: E402

# criterion lines collected by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_blobs(seed=0, n_err=50, n_ok=100, gap=20.0, d=2):
    """Blob A: all y=1, yhat=0. Blob B: mixed labels, all correct."""
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 1.0, (n_err, d))
    b = rng.normal(gap, 1.0, (n_ok, d))
    u = np.vstack([a, b])
    y = np.concatenate([np.ones(n_err, int), np.arange(n_ok) % 2])
    yhat = np.concatenate([np.zeros(n_err, int), np.arange(n_ok) % 2])
    return u, y, yhat


@pytest.fixture
def blobs():
    return make_blobs()


@pytest.fixture
def tiny_dataset():
    return Dataset(
        ids=("s0", "s1", "s2"),
        views={"img": np.arange(12, dtype=float).reshape(3, 4), "txt": np.array([[0.5, 1.0], [1.5, -2.0], [0.0, 0.25]])},
        labels=np.array([1, 0, 1]),
        predictions=np.array([0, 0, 1]),
        reports=("There is a left-sided Pneumothorax.", None, "Portable AP chest, tube in place."),
        metadata=({"ViewPosition": "AP"}, None, {"ViewPosition": "LATERAL", "Site": "north, wing"}),
        group_tags={"device": np.array([0, 1, 1])},
    )
