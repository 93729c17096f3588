import numpy as np
import pytest

from borok.problems import FunctionProblem, JacobianHandle
from borok.tableau import builtin_tableau, load_tableau

EULER_TAB = """\
# linearly implicit Euler
s 1
order 1
gamma_diag 1.0
b 1.0
"""


def random_operator(n, seed, norm=10.0):
    """Dense nonsymmetric matrix scaled to spectral norm ``norm / 2``."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    return A * (0.5 * norm / np.linalg.norm(A, 2))


def nonlinear_problem(n, seed, scale=1.0):
    """``y' = M y + c * sin(y)`` with analytic Jacobian ``M + c diag(cos y)``."""
    rng = np.random.default_rng(seed)
    M = random_operator(n, seed + 1000, norm=4.0) - np.eye(n)
    c = 0.5 * scale
    return FunctionProblem(lambda t, y: M @ y + c * np.sin(y),
                           lambda t, y: M + c * np.diag(np.cos(y)),
                           rng.standard_normal(n), (0.0, 1.0), name=f"nonlinear-{n}-{seed}")


@pytest.fixture
def euler_tableau():
    return load_tableau(EULER_TAB, "euler")


@pytest.fixture
def ros2():
    return builtin_tableau("ros2")


@pytest.fixture
def rok4k():
    return builtin_tableau("rok4k")


def handle(M):
    return JacobianHandle(M)
