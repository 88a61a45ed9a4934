import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_spd(rng, n, cond=10.0, size=None):
    """SPD matrices with eigenvalues log-uniform in [1/sqrt(cond), sqrt(cond)]."""
    shape = () if size is None else (size,)
    q, _ = np.linalg.qr(rng.standard_normal(shape + (n, n)))
    half = 0.5 * np.log(cond)
    w = np.exp(rng.uniform(-half, half, shape + (n,)))
    return (q * w[..., None, :]) @ np.swapaxes(q, -1, -2)


def random_symmetric(rng, n, scale=1.0, size=None):
    shape = () if size is None else (size,)
    a = rng.standard_normal(shape + (n, n)) * scale
    return 0.5 * (a + np.swapaxes(a, -1, -2))


@st.composite
def spd_matrices(draw, n=None, max_n=6, cond=100.0):
    """Hypothesis strategy: SPD matrix built from a seed and a size."""
    n = draw(st.integers(2, max_n)) if n is None else n
    seed = draw(st.integers(0, 2**32 - 1))
    c = draw(st.floats(1.0, cond))
    return random_spd(np.random.default_rng(seed), n, c)


@st.composite
def symmetric_matrices(draw, n=None, max_n=6, scale=2.0):
    n = draw(st.integers(2, max_n)) if n is None else n
    entries = draw(hnp.arrays(np.float64, (n, n), elements=st.floats(-scale, scale)))
    return 0.5 * (entries + entries.T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)
