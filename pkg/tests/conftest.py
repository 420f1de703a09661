import numpy as np
import pytest

from qbstab import QBSystem, build_burgers_fem, solve_lyapunov


def random_stable_qb(n, rng, h_scale=0.3, e_perturb=0.1, margin=1.0,
                     m=0):
    """A random QB system with a strictly Hurwitz pencil (A, E)."""
    A = rng.standard_normal((n, n))
    E = np.eye(n) + e_perturb * rng.standard_normal((n, n))
    At = np.linalg.solve(E, A)
    shift = np.max(np.linalg.eigvals(At).real) + margin
    A = A - shift * (E @ np.eye(n))
    H = h_scale * rng.standard_normal((n, n * n))
    B = rng.standard_normal((n, m)) if m else None
    N = tuple(rng.standard_normal((n, n)) for _ in range(m))
    return QBSystem(E=E, A=A, H=H, N=N, B=B)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def scalar_system():
    """x' = -x + 0.5 x^2; exactly known domain of attraction (-inf, 2)."""
    return QBSystem(E=[[1.0]], A=[[-1.0]], H=[[0.5]])


@pytest.fixture(scope="session")
def scalar_certificate(scalar_system):
    return solve_lyapunov(scalar_system.A, scalar_system.E,
                          [[np.sqrt(2.0)]])


@pytest.fixture(scope="session")
def burgers_fem():
    sys_, x0 = build_burgers_fem()
    return sys_, x0
