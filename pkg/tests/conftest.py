import numpy as np
import pytest
from hypothesis import strategies as st

from mdlcal.dist import FiniteJoint, Predictor


def random_joint(rng, n, m, alpha=1.0):
    return FiniteJoint(rng.dirichlet(alpha * np.ones(n * m)).reshape(n, m))


def random_predictor(rng, n, m, alpha=1.0):
    return Predictor(rng.dirichlet(alpha * np.ones(m), size=n))


def kl(p, q):
    p, q = np.asarray(p, float).ravel(), np.asarray(q, float).ravel()
    s = p > 0
    return float(np.sum(p[s] * np.log(p[s] / q[s])))


def binary_entropy(p):
    return -p * np.log(p) - (1 - p) * np.log(1 - p)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@st.composite
def simplex_vectors(draw, m=None, lo=1e-3):
    m = m or draw(st.integers(2, 5))
    w = draw(st.lists(st.floats(lo, 1.0), min_size=m, max_size=m))
    w = np.asarray(w)
    return w / w.sum()


@st.composite
def joints(draw, max_n=4, max_m=4):
    n = draw(st.integers(1, max_n))
    m = draw(st.integers(2, max_m))
    w = draw(st.lists(st.floats(1e-3, 1.0), min_size=n * m, max_size=n * m))
    w = np.asarray(w).reshape(n, m)
    return FiniteJoint(w / w.sum())


# acceptance criteria report lines, filled by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
