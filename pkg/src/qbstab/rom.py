"""Model reduction pipelines.

Three routes to a reduced quadratic-bilinear system: LQG-balanced truncation
(projection from the Riccati solutions of the linearized system), blockwise
POD Galerkin projection, and non-intrusive operator inference from snapshot
data. All expose a scikit-learn style fit/transform surface; thin functional
wrappers mirror the estimator entry points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import block_diag
from sklearn.base import BaseEstimator, TransformerMixin

from . import sim
from .densela import DenseLAError, riccati_residuals, solve_riccati_lqg
from .qbsys import QBSystem
from .sim import SnapshotSet

__all__ = [
    "ROMArtifact",
    "LQGBalancedTruncation",
    "BlockPOD",
    "OperatorInference",
    "lqg_balanced_truncation",
    "pod_blockwise",
    "galerkin_reduce",
    "operator_inference",
    "kron2c",
    "expand_h_from_compact",
    "projection_error",
]

#: relative singular-value threshold below which modes count as numerically zero
RANK_THRESHOLD = 1e-10


@dataclass
class ROMArtifact:
    """A reduced model with its projection operators and provenance."""

    method: str                   # lqgbt | pod | opinf
    system: QBSystem
    T: np.ndarray                 # right projector, N x n
    Tinv: np.ndarray              # left projector, n x N
    sigma: np.ndarray             # singular-value diagnostics
    extra: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.system.n

    def save(self, path):
        doc = {
            "method": self.method,
            "n": int(self.n),
            "T": self.T.tolist(),
            "Tinv": self.Tinv.tolist(),
            "sigma": np.asarray(self.sigma).tolist(),
            "system": json.loads(_system_json(self.system)),
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path):
        from . import qbsys as qb
        doc = json.loads(Path(path).read_text())
        tmp = Path(path).with_suffix(".sys.tmp")
        tmp.write_text(json.dumps(doc["system"]))
        try:
            system = qb.load_json(tmp)
        finally:
            tmp.unlink(missing_ok=True)
        return cls(method=doc["method"], system=system,
                   T=np.array(doc["T"], dtype=float),
                   Tinv=np.array(doc["Tinv"], dtype=float),
                   sigma=np.array(doc["sigma"], dtype=float))


def _system_json(system):
    import os
    import tempfile

    from . import qbsys as qb
    fd, name = tempfile.mkstemp(suffix=".json")
    os.close(fd)
    try:
        qb.save_json(system, name)
        return Path(name).read_text()
    finally:
        os.unlink(name)


def _psd_factor(S):
    """Factor S = F F^T of a (possibly numerically singular) PSD matrix."""
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (S + S.T))
        w = np.clip(w, 0.0, None)
        return V @ np.diag(np.sqrt(w))


def projection_error(X, V):
    """Relative error of projecting snapshot columns onto range(V)."""
    return float(np.linalg.norm(X - V @ (V.T @ X)) / np.linalg.norm(X))


# ---------------------------------------------------------------------------
# LQG-balanced truncation


def lqg_balanced_truncation(sys: QBSystem, n: int, refine=True) -> ROMArtifact:
    """Reduce by truncating the LQG-balanced realization of the linear part.

    The mass matrix is folded in by premultiplying E^{-1}; the Riccati
    solutions of (E^{-1}A, E^{-1}B, C) are Cholesky-factored and the SVD of
    L^T R yields the oblique projectors. The diagonal Hankel-LQG spectrum
    Sigma_n is returned as the canonical Lyapunov matrix for the ROM.
    """
    if sys.C is None:
        raise ValueError("LQG balancing needs an output matrix C")
    N = sys.n
    At = sys.solve_E(np.asarray(sys.A))
    Bt = sys.solve_E(np.asarray(sys.B))
    Ht = sys.solve_E(np.asarray(sys.H))
    C = np.asarray(sys.C)

    P, Q = solve_riccati_lqg(At, Bt, C, refine=refine)
    R = _psd_factor(P)
    L = _psd_factor(Q)
    U, s, Wt = np.linalg.svd(L.T @ R)
    rank = int(np.sum(s > RANK_THRESHOLD * s[0]))
    if n > rank:
        raise DenseLAError(
            f"requested order n={n} exceeds the numerical rank {rank} of "
            f"L^T R (singular values are machine zero beyond it)")

    sig = s[:n]
    sig_isqrt = 1.0 / np.sqrt(sig)
    T = R @ Wt[:n].T * sig_isqrt
    Tinv = (U[:, :n] * sig_isqrt).T @ L.T

    A_r = Tinv @ At @ T
    B_r = Tinv @ Bt
    C_r = C @ T
    H_r = _project_quadratic(Ht.reshape(N, N, N), Tinv.T, T)
    N_r = tuple(Tinv @ sys.solve_E(np.asarray(Ni)) @ T for Ni in sys.N)
    rom = QBSystem(E=np.eye(n), A=A_r, H=H_r, N=N_r, B=B_r, C=C_r)

    res_p, res_q = riccati_residuals(A_r, B_r, C_r, np.diag(sig), np.diag(sig))
    return ROMArtifact(
        method="lqgbt", system=rom, T=T, Tinv=Tinv, sigma=sig,
        extra={"full_spectrum": s, "reduced_riccati_residuals": (res_p, res_q)},
    )


def _project_quadratic(H3, W, V):
    """W^T H (V kron V) blockwise; never forms the N^2 x N^2 Kronecker matrix.

    Returns the reduced quadratic operator as an n-by-n^2 matrix, where
    W is N x n (left basis) and V is N x n (right basis).
    """
    T1 = np.tensordot(H3, V, axes=([2], [0]))      # (N, N, k): sum over j
    T2 = np.tensordot(T1, V, axes=([1], [0]))      # (N, k_j, k_i)
    Hr3 = np.einsum("rp,rba->pab", W, T2)
    k = V.shape[1]
    return Hr3.reshape(k, k * k)


# ---------------------------------------------------------------------------
# POD and Galerkin projection


def pod_blockwise(snapshot_blocks, n: int):
    """Per-variable POD bases assembled block-diagonally.

    ``snapshot_blocks`` is a list of per-variable snapshot matrices (or
    :class:`SnapshotSet` objects), each with at least n columns. Returns the
    orthonormal block-diagonal projector and the per-variable singular values.
    """
    bases, svals = [], []
    for Xv in snapshot_blocks:
        if isinstance(Xv, SnapshotSet):
            Xv = Xv.X
        Xv = np.atleast_2d(np.asarray(Xv, dtype=float))
        if Xv.shape[1] < n:
            raise ValueError(
                f"need at least {n} snapshot columns, got {Xv.shape[1]}")
        U, s, _ = np.linalg.svd(Xv, full_matrices=False)
        if s.size < n or s[n - 1] <= RANK_THRESHOLD * s[0]:
            raise DenseLAError(
                f"snapshot matrix rank below the requested {n} modes")
        bases.append(U[:, :n])
        svals.append(s)
    V = block_diag(*bases)
    return V, svals


def galerkin_reduce(sys: QBSystem, V) -> QBSystem:
    """Galerkin projection of every operator onto an orthonormal basis V."""
    V = np.asarray(V, dtype=float)
    N = sys.n
    orth = np.linalg.norm(V.T @ V - np.eye(V.shape[1]))
    if orth > 1e-8:
        raise ValueError(f"basis is not orthonormal (deviation {orth:.3e})")
    E_r = V.T @ sys.E @ V
    A_r = V.T @ sys.A @ V
    H_r = _project_quadratic(sys.H3, V, V)
    N_r = tuple(V.T @ Ni @ V for Ni in sys.N)
    B_r = V.T @ sys.B if sys.m else None
    C_r = sys.C @ V if sys.C is not None else None
    return QBSystem(E=E_r, A=A_r, H=H_r, N=N_r, B=B_r, C=C_r)


# ---------------------------------------------------------------------------
# operator inference


def kron2c(X):
    """Deduplicated quadratic regressors: rows x_i x_j for i <= j."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    rows = [X[i] * X[j] for i in range(n) for j in range(i, n)]
    return np.vstack(rows)


def _pair_index(n):
    return [(i, j) for i in range(n) for j in range(i, n)]


def expand_h_from_compact(Hc, n):
    """Expand learned compact quadratic coefficients to a symmetrized H."""
    H3 = np.zeros((n, n, n))
    for col, (i, j) in enumerate(_pair_index(n)):
        if i == j:
            H3[:, i, i] = Hc[:, col]
        else:
            H3[:, i, j] = 0.5 * Hc[:, col]
            H3[:, j, i] = 0.5 * Hc[:, col]
    return H3.reshape(n, n * n)


def operator_inference(snap: SnapshotSet, V_n, reg: float = 0.0) -> QBSystem:
    """Learn reduced operators (A, H, B) from projected snapshot data.

    Solves the least-squares regression of projected time derivatives on
    projected states, deduplicated quadratic products, and inputs. The
    quadratic regressors use only the n(n+1)/2 distinct products (the full
    Kronecker regression is rank-deficient by construction); optional ridge
    regularization ``reg`` stabilizes ill-conditioned data.
    """
    if snap.X.size == 0 or not np.any(snap.X):
        raise DenseLAError("snapshots are zero; regression is rank deficient")
    if snap.Xdot is None:
        snap = sim.estimate_derivatives(snap)
    V_n = np.atleast_2d(np.asarray(V_n, dtype=float))
    n = V_n.shape[1]
    X = V_n.T @ snap.X
    Xdot = V_n.T @ snap.Xdot
    blocks = [X.T, kron2c(X).T]
    if snap.U is not None:
        blocks.append(snap.U.T)
    D = np.hstack(blocks)
    cols = D.shape[1]

    if reg > 0.0:
        D_aug = np.vstack([D, reg * np.eye(cols)])
        rhs_aug = np.vstack([Xdot.T, np.zeros((cols, n))])
        theta, _, rank, _ = np.linalg.lstsq(D_aug, rhs_aug, rcond=None)
    else:
        theta, _, rank, sv = np.linalg.lstsq(D, Xdot.T, rcond=None)
        if rank < cols:
            cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
            raise DenseLAError(
                f"regression matrix is rank deficient (rank {rank} of {cols}, "
                f"condition number {cond:.3e}); pass reg > 0")
    theta = theta.T                      # n x cols
    nq = n * (n + 1) // 2
    A = theta[:, :n]
    H = expand_h_from_compact(theta[:, n:n + nq], n)
    B = theta[:, n + nq:] if snap.U is not None else None
    return QBSystem(E=np.eye(n), A=A, H=H, B=B)


# ---------------------------------------------------------------------------
# estimator-style front ends


class LQGBalancedTruncation(BaseEstimator, TransformerMixin):
    """LQG-balanced truncation as a fit/transform estimator.

    ``fit`` takes the full-order :class:`QBSystem`; ``transform`` maps full
    states (N x k columns) to reduced coordinates and ``inverse_transform``
    lifts them back.
    """

    def __init__(self, n=10, refine=True):
        self.n = n
        self.refine = refine

    def fit(self, sys: QBSystem, y=None):
        self.artifact_ = lqg_balanced_truncation(sys, self.n, self.refine)
        self.rom_ = self.artifact_.system
        self.T_ = self.artifact_.T
        self.Tinv_ = self.artifact_.Tinv
        self.sigma_ = self.artifact_.sigma
        return self

    def transform(self, X):
        return self.Tinv_ @ np.asarray(X, dtype=float)

    def inverse_transform(self, Xr):
        return self.T_ @ np.asarray(Xr, dtype=float)


class BlockPOD(BaseEstimator, TransformerMixin):
    """Blockwise POD basis: one sub-basis per physical variable."""

    def __init__(self, n_modes=5):
        self.n_modes = n_modes

    def fit(self, snapshot_blocks, y=None):
        self.components_, self.singular_values_ = pod_blockwise(
            snapshot_blocks, self.n_modes)
        return self

    def transform(self, X):
        return self.components_.T @ np.asarray(X, dtype=float)

    def inverse_transform(self, Xr):
        return self.components_ @ np.asarray(Xr, dtype=float)

    def reduce(self, sys: QBSystem) -> ROMArtifact:
        rom = galerkin_reduce(sys, self.components_)
        return ROMArtifact(method="pod", system=rom, T=self.components_,
                           Tinv=self.components_.T,
                           sigma=np.concatenate(self.singular_values_),
                           extra={"per_variable_sv": self.singular_values_})


class OperatorInference(BaseEstimator, TransformerMixin):
    """Non-intrusive reduced model learned from snapshot data.

    ``fit`` takes a :class:`SnapshotSet` of full-order snapshots, computes
    the rank-n POD basis of the snapshot matrix, and regresses the reduced
    operators on the projected data.
    """

    def __init__(self, n=5, reg=0.0):
        self.n = n
        self.reg = reg

    def fit(self, snap: SnapshotSet, y=None):
        U, s, _ = np.linalg.svd(snap.X, full_matrices=False)
        if s.size < self.n or s[self.n - 1] <= RANK_THRESHOLD * s[0]:
            raise DenseLAError(
                f"snapshot data does not support {self.n} POD modes")
        self.basis_ = U[:, :self.n]
        self.singular_values_ = s
        self.rom_ = operator_inference(snap, self.basis_, self.reg)
        eigs = np.linalg.eigvals(self.rom_.A)
        self.stable_ = bool(np.max(eigs.real) < 0.0)
        self.reconstruction_error_ = projection_error(snap.X, self.basis_)
        self.artifact_ = ROMArtifact(
            method="opinf", system=self.rom_, T=self.basis_,
            Tinv=self.basis_.T, sigma=s,
            extra={"stable_linear_part": self.stable_,
                   "reconstruction_error": self.reconstruction_error_},
        )
        return self

    def transform(self, X):
        return self.basis_.T @ np.asarray(X, dtype=float)

    def inverse_transform(self, Xr):
        return self.basis_ @ np.asarray(Xr, dtype=float)
