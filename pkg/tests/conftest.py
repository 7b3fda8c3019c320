import numpy as np
import pytest

from sovr.tensor_net import Network, init_network


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_close(a, fd, rtol=1e-5):
    """|a - fd| <= rtol * max(|a|, 1e-8), elementwise."""
    a, fd = np.asarray(a), np.asarray(fd)
    return bool(np.all(np.abs(a - fd) <= rtol * np.maximum(np.abs(a), 1e-8)))


def affine_net(W, b=None):
    W = np.asarray(W, dtype=np.float64)
    b = np.zeros(W.shape[0]) if b is None else np.asarray(b, dtype=np.float64)
    return Network((W.shape[1], W.shape[0]), (W,), (b,))


def constant_net(d, K, value=0.0):
    return affine_net(np.zeros((K, d)), np.full(K, value))


@pytest.fixture
def small_net():
    return init_network((3, 5, 4, 3), seed=7)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
