import numpy as np
import pytest

from srgwdr.affinity import mds_kernel
from srgwdr.solver import random_plan


def psd_instance(seed, N=None, n=None, p=3):
    """MDS kernel of random data with a uniform marginal."""
    rng = np.random.default_rng(seed)
    N = int(rng.integers(5, 9)) if N is None else N
    n = int(rng.integers(2, 4)) if n is None else n
    X = rng.standard_normal((N, p))
    return mds_kernel(X).values, np.full(N, 1.0 / N), n


def random_marginal(rng, N):
    h = rng.uniform(0.5, 1.5, N)
    return h / h.sum()


def interior_plan(rng, h, n):
    return random_plan(h, n, rng) + 0.0


def two_block(N=6):
    C = np.zeros((N, N))
    half = N // 2
    C[:half, :half] = 1.0
    C[half:, half:] = 1.0
    return C


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
