import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def blobs(n, dim, centers, seed=0, spread=1.0, box=10.0):
    r = np.random.default_rng(seed)
    c = r.uniform(-box, box, size=(centers, dim))
    labels = np.arange(n) % centers
    x = c[labels] + r.normal(scale=spread, size=(n, dim))
    return x.astype(np.float32), labels.astype(np.int64)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
