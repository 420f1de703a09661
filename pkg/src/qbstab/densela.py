"""Dense linear-algebra kernels.

Factorizations, spectral norms, real Schur decompositions, and the Lyapunov /
LQG Riccati solvers used by the stability estimates. Standard factorizations
are backed by LAPACK through numpy/scipy; the solvers add the orderings,
transformations, and residual certification the rest of the package relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

__all__ = [
    "DenseLAError",
    "UnstableLinearPart",
    "LyapunovCertificate",
    "spectral_norm",
    "min_nonzero_singular_value",
    "real_schur",
    "ordered_real_schur",
    "solve_lyapunov",
    "solve_riccati_lqg",
    "svd",
    "cholesky",
    "lu_solve",
    "qr",
    "certificate_from_p",
]

#: margin below which a real part counts as non-negative, relative to ||A||
STABILITY_MARGIN = 1e-12


class DenseLAError(RuntimeError):
    """Factorization or solver failure."""


class UnstableLinearPart(DenseLAError):
    """The linear part has an eigenvalue with non-negative real part.

    Signals that a quadratic Lyapunov function cannot be obtained from the
    Lyapunov equation for this system.
    """

    def __init__(self, msg, eigenvalues=None):
        super().__init__(msg)
        self.eigenvalues = eigenvalues


# ---------------------------------------------------------------------------
# norms and factorizations

#: largest dimension for which spectral_norm uses a full SVD
_FULL_SVD_LIMIT = 2000


def spectral_norm(M):
    """Largest singular value of M.

    Full SVD up to dimension 2000; power iteration on M M^T above that
    (relevant for the n-by-n^2 quadratic operators of large models).
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    if max(M.shape) <= _FULL_SVD_LIMIT:
        return float(np.linalg.svd(M, compute_uv=False)[0])
    if M.shape[0] > M.shape[1]:
        M = M.T
    rng = np.random.default_rng(0)
    v = rng.standard_normal(M.shape[0])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(500):
        w = M.T @ v
        w = M @ w
        sigma_new = float(np.linalg.norm(w))
        if sigma_new == 0.0:
            return 0.0
        v = w / sigma_new
        if abs(sigma_new - sigma) <= 1e-14 * sigma_new:
            sigma = sigma_new
            break
        sigma = sigma_new
    return float(np.sqrt(sigma))


def min_nonzero_singular_value(M):
    """Smallest singular value above the numerical-rank threshold."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        raise DenseLAError("matrix is numerically zero")
    tau = max(M.shape) * s[0] * np.finfo(float).eps
    s_nz = s[s > tau]
    if s_nz.size == 0:
        raise DenseLAError("matrix is numerically zero")
    return float(s_nz[-1])


def real_schur(M):
    """Real Schur form M = Q T Q^T with quasi-triangular T."""
    M = np.asarray(M, dtype=float)
    try:
        T, Q = sla.schur(M, output="real")
    except sla.LinAlgError as exc:  # pragma: no cover - LAPACK rarely fails
        raise DenseLAError(f"QR iteration did not converge: {exc}") from exc
    return Q, T


def ordered_real_schur(M, select):
    """Real Schur form with selected eigenvalues moved to the leading block.

    ``select`` is a predicate on a complex eigenvalue. Returns (Q, T, k) with
    k the number of selected eigenvalues.
    """
    M = np.asarray(M, dtype=float)

    def sort_fn(re, im):
        return bool(select(complex(re, im)))

    try:
        T, Q, k = sla.schur(M, output="real", sort=sort_fn)
    except sla.LinAlgError as exc:
        raise DenseLAError(f"ordered Schur reordering failed: {exc}") from exc
    return Q, T, int(k)


def svd(M):
    """Economy SVD (U, s, V) with M = U diag(s) V^T."""
    U, s, Vt = np.linalg.svd(np.asarray(M, dtype=float), full_matrices=False)
    return U, s, Vt.T


def cholesky(S):
    """Lower Cholesky factor L with S = L L^T."""
    try:
        return np.linalg.cholesky(np.asarray(S, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise DenseLAError(f"matrix is not positive definite: {exc}") from exc


def lu_solve(A, b):
    """Solve A x = b by LU with partial pivoting."""
    try:
        return np.linalg.solve(np.asarray(A, dtype=float), np.asarray(b, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise DenseLAError(f"linear solve failed: {exc}") from exc


def qr(M):
    """Economy QR factorization (Q, R)."""
    return np.linalg.qr(np.asarray(M, dtype=float))


# ---------------------------------------------------------------------------
# Lyapunov certificates


@dataclass
class LyapunovCertificate:
    """Factors defining the Lyapunov function v(x) = x^T E^T P E x.

    P is symmetric positive definite with P = P_f^T P_f; Q = Q_f^T Q_f is the
    (intended) negative of A^T P E + E^T P A. ``residual`` is the relative
    residual of that equation; it is small for certificates produced by
    :func:`solve_lyapunov` and may be large for heuristic choices of Q_f
    (e.g. the LQG convention Q_f = C).
    """

    P: np.ndarray
    P_f: np.ndarray
    Q: np.ndarray
    Q_f: np.ndarray
    residual: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.P.shape[0]

    @property
    def is_square_qf(self):
        return self.Q_f.shape[0] == self.Q_f.shape[1]

    @property
    def q_f_square(self):
        """A square factor R with R^T R = Q (equals Q_f when already square).

        Rectangular Q_f (e.g. a tall output matrix) differs from R by a
        matrix with orthonormal columns, which leaves every spectral quantity
        used downstream unchanged.
        """
        if self.is_square_qf:
            return self.Q_f
        R = self.diagnostics.get("q_f_square")
        if R is None:
            R = cholesky(self.Q).T
            self.diagnostics["q_f_square"] = R
            self.diagnostics["rectangular_q_f"] = True
        return R

    def validate(self, A, E, strict=False, tol=1e-8):
        """Check that P defines a usable Lyapunov function.

        Always verifies P is symmetric positive definite. With ``strict``
        also require -(A^T P E + E^T P A) to be positive definite and the
        recorded Q to match it within ``tol`` (relative Frobenius residual);
        heuristic certificates (e.g. the LQG convention Q_f = C) fail the
        strict check by design.
        """
        P = self.P
        if np.linalg.norm(P - P.T) > 1e-12 * max(np.linalg.norm(P), 1.0):
            raise DenseLAError("certificate P is not symmetric")
        evals = np.linalg.eigvalsh(0.5 * (P + P.T))
        if evals[0] <= 0:
            raise DenseLAError(f"certificate P is not positive definite "
                               f"(min eigenvalue {evals[0]:.3e})")
        if strict:
            Q_implied = -(A.T @ P @ E + E.T @ P @ A)
            if np.linalg.eigvalsh(0.5 * (Q_implied + Q_implied.T))[0] <= 0:
                raise DenseLAError(
                    "implied Q = -(A^T P E + E^T P A) is not positive "
                    "definite; v' is not locally negative")
            if self.residual > tol:
                raise DenseLAError(
                    f"certificate residual {self.residual:.3e} exceeds {tol:.1e}"
                )
        return True


def certificate_from_p(A, E, P, Q_f, extra=None) -> LyapunovCertificate:
    """Build a certificate from a given Lyapunov matrix P and factor Q_f."""
    P = 0.5 * (P + P.T)
    P_f = cholesky(P).T
    Q_f = np.atleast_2d(np.asarray(Q_f, dtype=float))
    Q = Q_f.T @ Q_f
    res = np.linalg.norm(A.T @ P @ E + E.T @ P @ A + Q) / max(np.linalg.norm(Q), 1e-300)
    cert = LyapunovCertificate(P=P, P_f=P_f, Q=Q, Q_f=Q_f, residual=float(res))
    if extra:
        cert.diagnostics.update(extra)
    return cert


def solve_lyapunov(A, E, Q_f) -> LyapunovCertificate:
    """Solve the generalized Lyapunov equation A^T P E + E^T P A + Q_f^T Q_f = 0.

    Transforms to At^T X + X At = -Q with At = E^{-1} A and X = E^T P E,
    solves by Bartels-Stewart on the real Schur form, and maps back. Raises
    :class:`UnstableLinearPart` if E^{-1} A is not (numerically strictly)
    Hurwitz.
    """
    A = np.asarray(A, dtype=float)
    E = np.asarray(E, dtype=float)
    Q_f = np.atleast_2d(np.asarray(Q_f, dtype=float))
    n = A.shape[0]
    At = np.linalg.solve(E, A)
    evals = np.linalg.eigvals(At)
    margin = STABILITY_MARGIN * max(np.linalg.norm(At, 2), 1.0)
    if np.max(evals.real) >= -margin:
        raise UnstableLinearPart(
            f"linear part has eigenvalue with real part "
            f"{np.max(evals.real):.3e} >= -{margin:.1e}; the Lyapunov "
            f"equation has no positive definite solution",
            eigenvalues=evals,
        )
    Q = Q_f.T @ Q_f
    X = sla.solve_continuous_lyapunov(At.T, -Q)
    X = 0.5 * (X + X.T)
    Einv = np.linalg.inv(E)
    P = Einv.T @ X @ Einv
    P = 0.5 * (P + P.T)
    res = np.linalg.norm(A.T @ P @ E + E.T @ P @ A + Q) / max(np.linalg.norm(Q), 1e-300)
    try:
        P_f = cholesky(P).T
    except DenseLAError as exc:
        raise DenseLAError(
            "Lyapunov solution is not numerically positive definite "
            "(ill-conditioned problem)"
        ) from exc
    return LyapunovCertificate(P=P, P_f=P_f, Q=Q, Q_f=Q_f, residual=float(res),
                               diagnostics={"n": n})


# ---------------------------------------------------------------------------
# LQG Riccati equations


def _care_stabilizing(A, G, S):
    """Stabilizing solution of A^T X + X A - X G X + S = 0.

    Via the stable invariant subspace of the Hamiltonian [[A, -G], [-S, -A^T]].
    """
    n = A.shape[0]
    Ham = np.block([[A, -G], [-S, -A.T]])
    Q, T, k = ordered_real_schur(Ham, lambda lam: lam.real < 0.0)
    if k != n:
        raise DenseLAError(
            f"Hamiltonian stable invariant subspace has dimension {k}, "
            f"expected {n} (eigenvalues too close to the imaginary axis?)"
        )
    Z1 = Q[:n, :n]
    Z2 = Q[n:, :n]
    try:
        X = np.linalg.solve(Z1.T, Z2.T).T
    except np.linalg.LinAlgError as exc:
        raise DenseLAError(f"invariant-subspace extraction failed: {exc}") from exc
    X = 0.5 * (X + X.T)
    return X


def _newton_kleinman_refine(A, G, S, X, sweeps=2):
    """A few Newton steps on the Riccati residual, for extra digits."""
    for _ in range(sweeps):
        Ac = A - G @ X
        R = A.T @ X + X @ A - X @ G @ X + S
        try:
            D = sla.solve_continuous_lyapunov(Ac.T, -R)
        except Exception:
            break
        X = 0.5 * ((X + D) + (X + D).T)
    return X


def solve_riccati_lqg(A, B, C, refine=True):
    """Stabilizing solutions (P, Q) of the LQG algebraic Riccati equations.

    A P + P A^T - P C^T C P + B B^T = 0  and
    A^T Q + Q A - Q B B^T Q + C^T C = 0,

    both via the ordered real Schur form of the associated Hamiltonian
    matrices, with an optional Newton refinement pass.
    """
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    BBt = B @ B.T
    CtC = C.T @ C

    Q_sol = _care_stabilizing(A, BBt, CtC)
    P_sol = _care_stabilizing(A.T, CtC, BBt)
    if refine:
        Q_sol = _newton_kleinman_refine(A, BBt, CtC, Q_sol)
        P_sol = _newton_kleinman_refine(A.T, CtC, BBt, P_sol)

    for X, name, res_mat in (
        (P_sol, "P", A @ P_sol + P_sol @ A.T - P_sol @ CtC @ P_sol + BBt),
        (Q_sol, "Q", A.T @ Q_sol + Q_sol @ A - Q_sol @ BBt @ Q_sol + CtC),
    ):
        scale = max(np.linalg.norm(X), 1.0)
        if np.linalg.norm(X - X.T) > 1e-8 * scale:
            raise DenseLAError(f"Riccati solution {name} is not symmetric")
        if np.linalg.eigvalsh(0.5 * (X + X.T))[0] < -1e-8 * scale:
            raise DenseLAError(f"Riccati solution {name} is indefinite")
    return P_sol, Q_sol


def riccati_residuals(A, B, C, P, Q):
    """Relative residuals of the two LQG Riccati equations."""
    BBt = B @ B.T
    CtC = C.T @ C
    r_p = A @ P + P @ A.T - P @ CtC @ P + BBt
    r_q = A.T @ Q + Q @ A - Q @ BBt @ Q + CtC
    s_p = max(np.linalg.norm(BBt), np.linalg.norm(P @ CtC @ P), 1e-300)
    s_q = max(np.linalg.norm(CtC), np.linalg.norm(Q @ BBt @ Q), 1e-300)
    return np.linalg.norm(r_p) / s_p, np.linalg.norm(r_q) / s_q
