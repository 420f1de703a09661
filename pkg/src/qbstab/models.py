"""Builders for the three benchmark full-order models.

* viscous Burgers with periodic boundary conditions, linear finite elements,
  distributed characteristic-function controls (LQG pipeline input),
* the lifted FitzHugh-Nagumo system (cubic nonlinearity recast as
  quadratic-bilinear through the auxiliary variable z = v^2),
* viscous Burgers on a Dirichlet-controlled interval, finite differences
  (data source for operator inference).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qbsys import QBSystem

__all__ = [
    "BurgersFEMConfig",
    "FHNConfig",
    "BurgersFDConfig",
    "build_burgers_fem",
    "build_fhn_lifted",
    "build_burgers_fd",
    "fhn_input_signal",
    "fhn_cubic_semidiscretization",
    "deflate_constant_mode",
    "MODEL_BUILDERS",
]


# ---------------------------------------------------------------------------
# Burgers, periodic FEM


@dataclass
class BurgersFEMConfig:
    N: int = 101
    epsilon: float = 1e-3
    m: int = 3
    periodic: bool = True

    def __post_init__(self):
        if self.N < 3:
            raise ValueError("N must be at least 3")
        if self.epsilon <= 0:
            raise ValueError("viscosity must be positive")
        if self.m < 1:
            raise ValueError("need at least one control interval")
        if not self.periodic:
            raise ValueError("only the periodic variant is implemented")


def _hat_integral(s0, s1, c0, c1, left):
    """Integral of a linear hat over [c0, c1] within its element [s0, s1]."""
    if c1 <= c0:
        return 0.0
    h = s1 - s0
    if left:  # phi decreasing from 1 at s0 to 0 at s1
        return 0.5 * ((s1 - c0) + (s1 - c1)) * (c1 - c0) / h
    return 0.5 * ((c0 - s0) + (c1 - s0)) * (c1 - c0) / h


def build_burgers_fem(cfg: BurgersFEMConfig | None = None):
    """Periodic linear-FEM semi-discretization of viscous Burgers.

    Returns the system (full-state output, C = I) and the nodal initial
    profile 0.5 sin(2 pi xi)^2 on [0, 0.5], zero elsewhere.
    """
    cfg = cfg or BurgersFEMConfig()
    N, eps, m = cfg.N, cfg.epsilon, cfg.m
    h = 1.0 / N

    E = np.zeros((N, N))
    A = np.zeros((N, N))
    H3 = np.zeros((N, N, N))
    B = np.zeros((N, m))

    def add_quad(row, p, q, c):
        # split a z_p z_q coefficient symmetrically
        if p == q:
            H3[row, p, p] += c
        else:
            H3[row, p, q] += 0.5 * c
            H3[row, q, p] += 0.5 * c

    for e in range(N):
        j, jp = e, (e + 1) % N
        # linear FEM mass / stiffness on the element
        E[j, j] += h / 3.0
        E[jp, jp] += h / 3.0
        E[j, jp] += h / 6.0
        E[jp, j] += h / 6.0
        A[j, j] += -eps / h
        A[jp, jp] += -eps / h
        A[j, jp] += eps / h
        A[jp, j] += eps / h
        # -int z z' phi_i over the element, z linear with nodal values (zj, zjp)
        add_quad(j, j, j, 1.0 / 3.0)
        add_quad(j, j, jp, -1.0 / 6.0)
        add_quad(j, jp, jp, -1.0 / 6.0)
        add_quad(jp, j, j, 1.0 / 6.0)
        add_quad(jp, j, jp, 1.0 / 6.0)
        add_quad(jp, jp, jp, -1.0 / 3.0)
        # characteristic-function loads
        s0 = e * h
        s1 = s0 + h
        for k in range(m):
            a, b = k / m, (k + 1) / m
            c0, c1 = max(s0, a), min(s1, b)
            B[j, k] += _hat_integral(s0, s1, c0, c1, left=True)
            B[jp, k] += _hat_integral(s0, s1, c0, c1, left=False)

    sys = QBSystem(E=E, A=A, H=H3.reshape(N, N * N), N=(), B=B, C=np.eye(N),
                   copy=False)
    xi = h * np.arange(N)
    x0 = np.where(xi <= 0.5, 0.5 * np.sin(2.0 * np.pi * xi) ** 2, 0.0)
    return sys, x0


# ---------------------------------------------------------------------------
# lifted FitzHugh-Nagumo


@dataclass
class FHNConfig:
    grid: int = 200
    L: float = 0.1
    c: float = 0.05
    gamma: float = 2.0
    h: float = 0.5
    epsilon: float = 0.015

    def __post_init__(self):
        if self.grid < 3:
            raise ValueError("grid must be at least 3")
        if min(self.L, self.epsilon) <= 0:
            raise ValueError("L and epsilon must be positive")

    @property
    def dim(self):
        return 3 * self.grid


def fhn_input_signal(t):
    """Boundary excitation and constant channel: [5e4 t^3 exp(-15 t), 1]."""
    return np.array([5e4 * t**3 * np.exp(-15.0 * t), 1.0])


def _fhn_dxx(g, dx):
    """Second-difference operator with homogeneous Neumann ghost closure."""
    D = np.zeros((g, g))
    for i in range(g):
        if i == 0:
            D[0, 0], D[0, 1] = -2.0, 2.0
        elif i == g - 1:
            D[-1, -2], D[-1, -1] = 2.0, -2.0
        else:
            D[i, i - 1], D[i, i], D[i, i + 1] = 1.0, -2.0, 1.0
    return D / dx**2


def fhn_cubic_semidiscretization(cfg: FHNConfig | None = None):
    """The original (cubic) FitzHugh-Nagumo semi-discretization.

    Returns (rhs, jac) callables for the 2g-dimensional state [v; w] driven by
    :func:`fhn_input_signal`. Serves as the lifting oracle: the lifted system
    reproduces exactly the trajectories (v, w, v^2).
    """
    cfg = cfg or FHNConfig()
    g = cfg.grid
    dx = cfg.L / (g - 1)
    eps, c, gamma, hp = cfg.epsilon, cfg.c, cfg.gamma, cfg.h
    D = _fhn_dxx(g, dx)

    def rhs(t, x):
        v, w = x[:g], x[g:]
        u1, u2 = fhn_input_signal(t)
        dv = eps * (D @ v) + (-v**3 + 0.1 * v**2 - 0.1 * v - w + c * u2) / eps
        dv[0] += u1 / eps
        dw = hp * v - gamma * w + c * u2
        return np.concatenate([dv, dw])

    def jac(t, x):
        v = x[:g]
        J = np.zeros((2 * g, 2 * g))
        J[:g, :g] = eps * D + np.diag((-3.0 * v**2 + 0.2 * v - 0.1) / eps)
        J[:g, g:] = -np.eye(g) / eps
        J[g:, :g] = hp * np.eye(g)
        J[g:, g:] = -gamma * np.eye(g)
        return J

    return rhs, jac


def build_fhn_lifted(cfg: FHNConfig | None = None):
    """Lifted quadratic-bilinear FitzHugh-Nagumo model.

    State blocks (v, w, z) with z = v^2; the mass matrix carries epsilon on
    the v block and identity elsewhere, so the z equation absorbs a 1/epsilon
    factor to keep the lifting exact. Inputs: u = [boundary drive, 1].
    """
    cfg = cfg or FHNConfig()
    g = cfg.grid
    n = cfg.dim
    dx = cfg.L / (g - 1)
    eps, c, gamma, hp = cfg.epsilon, cfg.c, cfg.gamma, cfg.h
    D = _fhn_dxx(g, dx)
    iv, iw, iz = np.arange(g), g + np.arange(g), 2 * g + np.arange(g)

    E = np.eye(n)
    E[iv, iv] = eps

    A = np.zeros((n, n))
    A[np.ix_(iv, iv)] = eps**2 * D - 0.1 * np.eye(g)
    A[iv, iw] = -1.0
    A[iw, iv] = hp
    A[iw, iw] = -gamma
    A[iz, iz] = -0.2 / eps

    B = np.zeros((n, 2))
    B[0, 0] = 1.0
    B[iv, 1] = c
    B[iw, 1] = c

    # boundary drive enters the z equation through d(v^2)/dt at the first node
    N1 = np.zeros((n, n))
    N1[iz[0], iv[0]] = 2.0 / eps
    # constant channel: the lifted c*v coupling
    N2 = np.zeros((n, n))
    N2[iz, iv] = 2.0 * c / eps

    H3 = np.zeros((n, n, n))
    # v equation: 0.1 v^2 - z v   (times 1/eps absorbed by E's eps block)
    H3[iv, iv, iv] = 0.1
    H3[iv, iz, iv] = -0.5
    H3[iv, iv, iz] = -0.5
    # z equation: 2 eps v (Dxx v) - (2 z^2 - 0.2 z v + 2 w v) / eps
    for i in range(g):
        row = iz[i]
        for j in np.nonzero(D[i])[0]:
            coeff = 2.0 * eps * D[i, j]
            if j == i:
                H3[row, iv[i], iv[i]] += coeff
            else:
                H3[row, iv[i], iv[j]] += 0.5 * coeff
                H3[row, iv[j], iv[i]] += 0.5 * coeff
    H3[iz, iz, iz] += -2.0 / eps
    H3[iz, iz, iv] += 0.1 / eps
    H3[iz, iv, iz] += 0.1 / eps
    H3[iz, iw, iv] += -1.0 / eps
    H3[iz, iv, iw] += -1.0 / eps

    sys = QBSystem(E=E, A=A, H=H3.reshape(n, n * n), N=(N1, N2), B=B,
                   copy=False)
    return sys, fhn_input_signal


# ---------------------------------------------------------------------------
# Burgers, Dirichlet finite differences


@dataclass
class BurgersFDConfig:
    N: int = 128
    epsilon: float = 1e-1
    periodic: bool = False
    #: convection stencil: "product" (z times central dz) keeps the Dirichlet
    #: boundary exactly quadratic-bilinear; "skew" is the energy-conserving
    #: split form used by the periodic test variant
    form: str = "product"

    def __post_init__(self):
        if self.N < 3:
            raise ValueError("N must be at least 3")
        if self.epsilon < 0 or (self.epsilon == 0 and not self.periodic):
            raise ValueError("viscosity must be positive")
        if self.form not in ("product", "skew"):
            raise ValueError(f"unknown convection form {self.form!r}")


def build_burgers_fd(cfg: BurgersFDConfig | None = None) -> QBSystem:
    """Finite-difference Burgers with Dirichlet boundary input.

    Interior grid of N points on (0, 1); the boundary values z(0) = u and
    z(1) = -u are eliminated into the input matrix (linear terms) and a
    bilinear matrix (state-input products at the boundary stencils).
    """
    cfg = cfg or BurgersFDConfig()
    N, eps = cfg.N, cfg.epsilon
    if cfg.periodic:
        return _build_burgers_fd_periodic(cfg)
    h = 1.0 / (N + 1)

    A = (eps / h**2) * (np.diag(-2.0 * np.ones(N))
                        + np.diag(np.ones(N - 1), 1)
                        + np.diag(np.ones(N - 1), -1))
    B = np.zeros((N, 1))
    B[0, 0] = eps / h**2
    B[-1, 0] = -eps / h**2

    H3 = np.zeros((N, N, N))

    def add_quad(row, p, q, c):
        if p == q:
            H3[row, p, p] += c
        else:
            H3[row, p, q] += 0.5 * c
            H3[row, q, p] += 0.5 * c

    inv2h = 1.0 / (2.0 * h)
    for i in range(1, N - 1):
        if cfg.form == "product":
            # -z_i (z_{i+1} - z_{i-1}) / 2h
            add_quad(i, i, i + 1, -inv2h)
            add_quad(i, i, i - 1, inv2h)
        else:
            # skew-symmetric split of z z_xi
            third = 1.0 / 3.0
            add_quad(i, i + 1, i + 1, -third * inv2h)
            add_quad(i, i - 1, i - 1, third * inv2h)
            add_quad(i, i, i + 1, -third * inv2h)
            add_quad(i, i, i - 1, third * inv2h)
    # boundary-adjacent rows use the product form so only z*u terms appear
    add_quad(0, 0, 1, -inv2h)
    add_quad(N - 1, N - 1, N - 2, inv2h)
    N1 = np.zeros((N, N))
    N1[0, 0] = inv2h        # + z_1 u / 2h  from z(0) = u
    N1[-1, -1] = inv2h      # + z_N u / 2h  from z(1) = -u

    return QBSystem(E=np.eye(N), A=A, H=H3.reshape(N, N * N), N=(N1,), B=B,
                    copy=False)


def _build_burgers_fd_periodic(cfg: BurgersFDConfig) -> QBSystem:
    """Periodic closure (test variant); skew form conserves discrete energy."""
    N, eps = cfg.N, cfg.epsilon
    h = 1.0 / N
    A = np.zeros((N, N))
    for i in range(N):
        A[i, i] += -2.0 * eps / h**2
        A[i, (i + 1) % N] += eps / h**2
        A[i, (i - 1) % N] += eps / h**2
    H3 = np.zeros((N, N, N))
    inv2h = 1.0 / (2.0 * h)

    def add_quad(row, p, q, c):
        if p == q:
            H3[row, p, p] += c
        else:
            H3[row, p, q] += 0.5 * c
            H3[row, q, p] += 0.5 * c

    third = 1.0 / 3.0
    for i in range(N):
        ip, im = (i + 1) % N, (i - 1) % N
        if cfg.form == "skew":
            add_quad(i, ip, ip, -third * inv2h)
            add_quad(i, im, im, third * inv2h)
            add_quad(i, i, ip, -third * inv2h)
            add_quad(i, i, im, third * inv2h)
        else:
            add_quad(i, i, ip, -inv2h)
            add_quad(i, i, im, inv2h)
    return QBSystem(E=np.eye(N), A=A, H=H3.reshape(N, N * N), copy=False)


def deflate_constant_mode(sys: QBSystem):
    """Project out the conserved constant mode of a periodic discretization.

    Periodic conservative discretizations preserve the weighted mean 1^T E x,
    so the linear part is singular and the origin attracts only the mean-zero
    subspace. Returns the Galerkin restriction onto the orthogonal complement
    of the constant vector together with the (N x N-1) basis used.
    """
    from .rom import galerkin_reduce

    n = sys.n
    one = np.ones(n) / np.sqrt(n)
    Z = np.linalg.qr(np.eye(n) - np.outer(one, one))[0][:, : n - 1]
    return galerkin_reduce(sys, Z), Z


MODEL_BUILDERS = {
    "burgers-fem": lambda **kw: build_burgers_fem(BurgersFEMConfig(**kw)),
    "fhn": lambda **kw: build_fhn_lifted(FHNConfig(**kw)),
    "burgers-fd": lambda **kw: (build_burgers_fd(BurgersFDConfig(**kw)), None),
}
