"""Stability-domain estimates for quadratic-bilinear systems.

Two estimates of the radius rho such that the ellipsoid
{x : x^T E^T P E x <= rho^2} is contained in the domain of attraction of the
origin:

* an analytical radius, cheap but conservative, and
* the optimal radius rho* = 1/alpha* for the given Lyapunov function, where
  alpha* minimizes the spectral norm of an affine matrix family J(mu) over
  the skew-symmetric reparametrizations of the quadratic term.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator

from .densela import (
    LyapunovCertificate,
    certificate_from_p,
    min_nonzero_singular_value,
    solve_lyapunov,
    spectral_norm,
)
from .qbsys import QBSystem

__all__ = [
    "MuParametrization",
    "StabilityEstimate",
    "OptimizeOptions",
    "analytic_radius",
    "build_G",
    "build_J",
    "vdot",
    "vdot_via_J",
    "objective_alpha",
    "optimize_radius",
    "StabilityRadiusEstimator",
]


class MuParametrization:
    """Bookkeeping for the skew-symmetric reparametrization vector mu.

    mu stacks, block by block, the strict upper-triangular entries of n
    skew-symmetric matrices S_1, ..., S_n; placing mu_k at S_i[p, q] (p < q)
    and -mu_k at S_i[q, p]. The parameter count is d_n = n^2 (n-1) / 2.

    Block i perturbs the i-th row matrix of the quadratic operator: since
    row i contributes x^T H3[i] x, adding a skew matrix there changes the
    matrix representation but not the vector field. In terms of the column
    slices K_i this adds S[:, i, :] (the transposed-block view) to K_i.
    """

    def __init__(self, n):
        self.n = int(n)
        self._iu = np.triu_indices(self.n, 1)
        self.block_size = self._iu[0].size  # n(n-1)/2

    @property
    def d_n(self):
        return self.n * self.block_size

    def index(self, i, p, q):
        """Component index for the entry (p, q), p < q, of block i."""
        if not (0 <= p < q < self.n and 0 <= i < self.n):
            raise ValueError(f"invalid skew index (i={i}, p={p}, q={q})")
        # offset of (p, q) within the row-major strict upper triangle
        offset = p * self.n - p * (p + 1) // 2 + (q - p - 1)
        return i * self.block_size + offset

    def unindex(self, k):
        """Inverse of :meth:`index`."""
        if not 0 <= k < self.d_n:
            raise ValueError(f"component index {k} out of range")
        i, offset = divmod(k, self.block_size)
        return i, int(self._iu[0][offset]), int(self._iu[1][offset])

    def skew_matrices(self, mu):
        """Materialize the n skew matrices as an (n, n, n) array S[i]."""
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (self.d_n,):
            raise ValueError(f"mu must have shape ({self.d_n},), got {mu.shape}")
        S = np.zeros((self.n, self.n, self.n))
        blocks = mu.reshape(self.n, self.block_size)
        S[:, self._iu[0], self._iu[1]] = blocks
        S[:, self._iu[1], self._iu[0]] = -blocks
        return S

    def pack(self, S):
        """Extract mu from an (n, n, n) array of skew matrices."""
        S = np.asarray(S, dtype=float)
        return S[:, self._iu[0], self._iu[1]].reshape(-1)


@dataclass
class StabilityEstimate:
    """Result record of the stability-radius computation."""

    rho_analytic: float
    rho_star: float
    alpha_star: float
    mu_star: np.ndarray
    restarts_used: int
    objective_history: list
    certificate: LyapunovCertificate
    diagnostics: dict = field(default_factory=dict)

    def to_json(self, path=None):
        doc = {
            "rho_analytic": self.rho_analytic,
            "rho_star": self.rho_star,
            "alpha_star": self.alpha_star,
            "mu_star": np.asarray(self.mu_star).tolist(),
            "restarts_used": self.restarts_used,
            "objective_history": self.objective_history,
            "certificate_residual": self.certificate.residual,
            "diagnostics": {
                k: v for k, v in self.diagnostics.items()
                if isinstance(v, (int, float, str, bool))
            },
        }
        text = json.dumps(doc)
        if path is not None:
            Path(path).write_text(text)
        return text

    def csv_row(self, model_id, n, wall_ms):
        return [model_id, n, self.rho_analytic, self.rho_star,
                self.alpha_star, wall_ms]

    @staticmethod
    def write_csv(path, rows, header=("model", "n", "rho_analytic",
                                      "rho_star", "alpha_star", "wall_ms")):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)


# ---------------------------------------------------------------------------
# the affine matrix family J(mu)


def analytic_radius(sys: QBSystem, cert: LyapunovCertificate):
    """Conservative closed-form stability radius.

    sigma_min_nz(Q_f)^2 / (2 ||H||_2 sqrt(||P||_2)); +inf for H = 0. The
    intermediate state-space ball radius (which carries extra norm factors of
    E and P) is recorded in ``cert.diagnostics``.
    """
    cert.validate(sys.A, sys.E)
    h_norm = spectral_norm(sys.H)
    if h_norm == 0.0:
        return float("inf")
    p_norm = spectral_norm(cert.P)
    smin = min_nonzero_singular_value(cert.Q_f)
    cert.diagnostics["vdot_ball_radius"] = smin**2 / (
        2.0 * spectral_norm(sys.E) * p_norm * h_norm
    )
    return float(smin**2 / (2.0 * h_norm * np.sqrt(p_norm)))


def _g_blocks(sys: QBSystem, cert: LyapunovCertificate, mu, param=None):
    """The blocks G_i = M_i^T P E + E^T P M_i as an (n, n, n) array."""
    n = sys.n
    param = param or MuParametrization(n)
    PE = cert.P @ sys.E
    K = sys.H3.transpose(1, 0, 2)  # K[i] = H[:, i*n:(i+1)*n]
    # skew block r perturbs row matrix H3[r]; as a slice addition this is
    # S.transpose(1, 0, 2), which leaves x -> H(x kron x) unchanged
    M = K + param.skew_matrices(mu).transpose(1, 0, 2)
    # G[i] = M[i]^T PE + (PE)^T M[i]
    T = np.einsum("iab,ac->ibc", M, PE)
    return T + T.transpose(0, 2, 1)


def build_G(sys: QBSystem, cert: LyapunovCertificate, mu):
    """Stacked matrix G(mu) in R^{n^2 x n}; row-block i is G_i."""
    n = sys.n
    return _g_blocks(sys, cert, mu).reshape(n * n, n)


def _j_blocks(sys, cert, mu, param=None):
    """Blocks of J(mu): J_j = Q_f^{-T} sum_l (P_f^{-T})_{jl} G_l Q_f^{-1}."""
    G = _g_blocks(sys, cert, mu, param)
    Qf = cert.q_f_square
    Pf = cert.P_f
    n = sys.n
    # Q_f^{-T} G_l Q_f^{-1}, blockwise
    T = np.stack([np.linalg.solve(Qf.T, np.linalg.solve(Qf.T, G[l].T).T)
                  for l in range(n)])
    PfinvT = np.linalg.inv(Pf).T
    return np.einsum("jl,lab->jab", PfinvT, T)


def build_J(sys: QBSystem, cert: LyapunovCertificate, mu):
    """The affine family J(mu) = (P_f^T kron Q_f^T)^{-1} G(mu) Q_f^{-1}.

    Applied through the Kronecker vec identity blockwise; the n^2-by-n^2
    Kronecker matrix is never formed. A rectangular Q_f is replaced by its
    square Cholesky equivalent (same Gram matrix), which changes J only by
    orthonormal factors and so preserves its singular values.
    """
    n = sys.n
    return _j_blocks(sys, cert, mu).reshape(n * n, n)


def vdot(sys: QBSystem, cert: LyapunovCertificate, x):
    """Lyapunov derivative 2 x^T E^T P (A x + H(x kron x)) along trajectories."""
    x = np.asarray(x, dtype=float)
    return float(2.0 * (sys.E @ x) @ (cert.P @ (sys.A @ x + sys.quad(x))))


def vdot_via_J(sys: QBSystem, cert: LyapunovCertificate, mu, x):
    """Lyapunov derivative through the parametrized family.

    x^T Q_f^T [-I + (x^T P_f^T kron I) J(mu)] Q_f x; equals :func:`vdot` for
    every mu whenever Q_f^T Q_f matches the certificate's Lyapunov equation.
    """
    x = np.asarray(x, dtype=float)
    n = sys.n
    J = _j_blocks(sys, cert, mu)
    Qfx = cert.q_f_square @ x
    z = cert.P_f @ x
    M = np.tensordot(z, J, axes=([0], [0])) - np.eye(n)
    return float(Qfx @ (M @ Qfx))


def objective_alpha(sys: QBSystem, cert: LyapunovCertificate, mu, param=None):
    """alpha(mu) = sigma_max(J(mu)) and a subgradient w.r.t. mu.

    The subgradient component for the skew entry (i, p, q) is
    u^T (dJ/dmu_k) v with (u, v) a top singular pair; evaluated through the
    block structure in O(n^3 + d_n) work.
    """
    n = sys.n
    param = param or MuParametrization(n)
    J = _j_blocks(sys, cert, mu, param).reshape(n * n, n)
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    alpha = float(s[0])
    if param.d_n == 0:
        return alpha, np.zeros(0), {"gap": float("inf")}
    u1 = U[:, 0]
    v1 = Vt[0]
    Qf = cert.q_f_square
    Pf = cert.P_f
    # u blocks: u1 = [u_1; ...; u_n]; w_i = column i of (Q_f^{-1} U) P_f^{-T}
    Ublk = u1.reshape(n, n).T          # column j = u_j
    Ut = np.linalg.solve(Qf, Ublk)     # column j = Q_f^{-1} u_j
    W = np.linalg.solve(Pf, Ut.T).T    # W = Ut P_f^{-T}
    y = np.linalg.solve(Qf, v1)
    PE = cert.P @ sys.E
    # the skew entry (r, p, q) enters G through dM_p = e_r e_q^T and
    # dM_q = -e_r e_p^T; contracting with the singular pair gives, with
    # s = PE y and T = PE W,
    #   grad(r, p, q) = s_r (W^T - W)[p, q] + T[r, p] y_q - y_p T[r, q]
    s = PE @ y
    T = PE @ W
    skew_w = W.T - W
    iu0, iu1 = param._iu
    grad = np.empty(param.d_n)
    for r in range(n):
        Cr = s[r] * skew_w + np.outer(T[r], y) - np.outer(y, T[r])
        grad[r * param.block_size:(r + 1) * param.block_size] = Cr[iu0, iu1]
    gap = float(s[0] - s[1]) if s.size > 1 else float("inf")
    return alpha, grad, {"gap": gap}


# ---------------------------------------------------------------------------
# radius optimization


@dataclass
class OptimizeOptions:
    restarts: int = 5
    mu_bound: float = 1e4
    tolx: float = 0.1
    tolfun: float = 1e-3
    maxiter: int = 1000
    seed: int = 0
    subgrad_iters: int = 200
    #: singular-value gap above which the smooth quasi-Newton refinement runs
    smooth_gap: float = 1e-6


def _subgradient_phase(fun, mu0, bound, opts):
    """Projected subgradient descent with Polyak-style diminishing steps."""
    mu = mu0.copy()
    f, g, _ = fun(mu)
    best_f, best_mu = f, mu.copy()
    theta = 1.0
    history = [f]
    stall = 0
    for k in range(1, opts.subgrad_iters + 1):
        gn2 = float(g @ g)
        if gn2 == 0.0:
            break
        step = theta * f / gn2 / np.sqrt(k)
        mu_new = np.clip(mu - step * g, -bound, bound)
        if k > 10 and np.linalg.norm(mu_new - mu) <= opts.tolx * max(
                np.linalg.norm(mu), 1.0):
            break
        f_new, g_new, _ = fun(mu_new)
        if f_new < best_f:
            if best_f - f_new <= opts.tolfun * max(abs(best_f), 1e-300):
                best_f, best_mu = f_new, mu_new.copy()
                history.append(f_new)
                break
            best_f, best_mu = f_new, mu_new.copy()
            stall = 0
        else:
            stall += 1
            if stall >= 8:
                theta *= 0.5
                stall = 0
            if theta < 1e-6:
                break
        mu, f, g = mu_new, f_new, g_new
        history.append(f_new)
    return best_mu, best_f, history


def _refine_phase(fun, mu0, bound, opts):
    """L-BFGS-B on the (locally smooth) objective using the subgradient."""
    res = minimize(
        lambda m: fun(m)[:2],
        mu0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(-bound, bound)] * mu0.size,
        options={"maxiter": opts.maxiter, "ftol": 1e-14, "gtol": 1e-12},
    )
    return res.x, float(res.fun)


def optimize_radius(sys: QBSystem, cert: LyapunovCertificate,
                    opts: OptimizeOptions | None = None) -> StabilityEstimate:
    """Maximize the certified radius for a fixed Lyapunov function.

    Minimizes alpha(mu) = sigma_max(J(mu)) over box-bounded mu with several
    random restarts; the best value gives rho* = 1/alpha*. The guaranteed
    sublevel set uses rho strictly below rho*.
    """
    opts = opts or OptimizeOptions()
    cert.validate(sys.A, sys.E)
    t0 = time.perf_counter()
    rho_a = analytic_radius(sys, cert)
    n = sys.n
    param = MuParametrization(n)

    if spectral_norm(sys.H) == 0.0:
        return StabilityEstimate(
            rho_analytic=rho_a, rho_star=float("inf"), alpha_star=0.0,
            mu_star=np.zeros(param.d_n), restarts_used=0,
            objective_history=[], certificate=cert,
            diagnostics={"wall_s": time.perf_counter() - t0, "note": "H = 0"},
        )

    def fun(mu):
        return objective_alpha(sys, cert, mu, param)

    if param.d_n == 0:
        alpha, _, _ = fun(np.zeros(0))
        return StabilityEstimate(
            rho_analytic=rho_a, rho_star=1.0 / alpha, alpha_star=alpha,
            mu_star=np.zeros(0), restarts_used=0, objective_history=[alpha],
            certificate=cert,
            diagnostics={"wall_s": time.perf_counter() - t0},
        )

    rng = np.random.default_rng(opts.seed)
    # mu = 0 (the raw quadratic operator) is a cheap deterministic baseline
    f_zero = fun(np.zeros(param.d_n))[0]
    best = (np.zeros(param.d_n), f_zero)
    history_all = []
    for restart in range(opts.restarts):
        mu0 = rng.uniform(-1.0, 1.0, size=param.d_n)
        mu1, f1, hist = _subgradient_phase(fun, mu0, opts.mu_bound, opts)
        _, _, info = fun(mu1)
        if info["gap"] > opts.smooth_gap:
            mu2, f2 = _refine_phase(fun, mu1, opts.mu_bound, opts)
            if f2 < f1:
                mu1, f1 = mu2, f2
        history_all.append(hist + [f1])
        if best is None or f1 < best[1]:
            best = (mu1, f1)

    mu_star, alpha_star = best
    _, _, info = fun(mu_star)
    return StabilityEstimate(
        rho_analytic=rho_a,
        rho_star=1.0 / alpha_star,
        alpha_star=alpha_star,
        mu_star=mu_star,
        restarts_used=opts.restarts,
        objective_history=[h[-1] for h in history_all],
        certificate=cert,
        diagnostics={
            "wall_s": time.perf_counter() - t0,
            "singular_gap": info["gap"],
            "per_restart_history": history_all,
        },
    )


# ---------------------------------------------------------------------------
# estimator-style front end


class StabilityRadiusEstimator(BaseEstimator):
    """Fits a stability-radius estimate to a quadratic-bilinear system.

    Parameters mirror :class:`OptimizeOptions`; ``certificate`` selects how
    the Lyapunov matrix is obtained when none is supplied to :meth:`fit`:

    * ``"lyapunov-identity"`` - solve the Lyapunov equation with Q = I.
    * a :class:`LyapunovCertificate` may be passed directly to ``fit``.

    After fitting, ``rho_analytic_``, ``rho_star_``, ``alpha_star_``,
    ``mu_star_``, ``certificate_``, and ``estimate_`` are available.
    """

    def __init__(self, certificate="lyapunov-identity", restarts=5,
                 mu_bound=1e4, tolx=0.1, tolfun=1e-3, maxiter=1000, seed=0):
        self.certificate = certificate
        self.restarts = restarts
        self.mu_bound = mu_bound
        self.tolx = tolx
        self.tolfun = tolfun
        self.maxiter = maxiter
        self.seed = seed

    def _options(self):
        return OptimizeOptions(restarts=self.restarts, mu_bound=self.mu_bound,
                               tolx=self.tolx, tolfun=self.tolfun,
                               maxiter=self.maxiter, seed=self.seed)

    def fit(self, sys: QBSystem, cert: LyapunovCertificate | None = None):
        if cert is None:
            if isinstance(self.certificate, LyapunovCertificate):
                cert = self.certificate
            elif self.certificate == "lyapunov-identity":
                cert = solve_lyapunov(sys.A, sys.E, np.eye(sys.n))
            else:
                raise ValueError(f"unknown certificate choice "
                                 f"{self.certificate!r}")
        est = optimize_radius(sys, cert, self._options())
        self.certificate_ = cert
        self.estimate_ = est
        self.rho_analytic_ = est.rho_analytic
        self.rho_star_ = est.rho_star
        self.alpha_star_ = est.alpha_star
        self.mu_star_ = est.mu_star
        return self
