import numpy as np
import pytest
from hypothesis import strategies as st

from tfsh.mesh import TimeMesh


def random_mesh(rng, N, r_lo=0.2, r_hi=5.0, tau1=None, band=10.0):
    """Mesh whose consecutive step ratios are drawn log-uniformly from [r_lo, r_hi].

    The log-step random walk is reflected at +-band, so a ratio is inverted
    (still inside [r_lo, r_hi] when the range is symmetric) instead of letting
    steps drift below the resolution of the node sums.
    """
    logs = rng.uniform(np.log(r_lo), np.log(r_hi), N - 1)
    level = np.zeros(N)
    for i, x in enumerate(logs):
        if abs(level[i] + x) > band:
            x = -x
        level[i + 1] = level[i] + x
    tau = np.exp(level)
    tau *= (tau1 if tau1 is not None else 1.0) / tau.sum()
    return TimeMesh(np.concatenate([[0.0], np.cumsum(tau)]))


@st.composite
def meshes(draw, max_N=200, min_N=1):
    N = draw(st.integers(min_N, max_N))
    seed = draw(st.integers(0, 2**32 - 1))
    T = draw(st.floats(0.01, 100.0))
    return random_mesh(np.random.default_rng(seed), N, tau1=T)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# criterion number -> (passed, measured values); filled by test_acceptance.py
ACCEPTANCE = {}


def record(criterion: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
