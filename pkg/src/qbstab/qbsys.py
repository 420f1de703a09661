"""Quadratic-bilinear system container and algebra.

A system is the quintuple (E, A, H, {N_i}, B) with an optional output map C,
describing

    E x' = A x + H (x kron x) + sum_i N_i x u_i + B u,
    y    = C x.

H is n-by-n^2 and always stored in symmetrized form, i.e.
H (x kron y) == H (y kron x) for all x, y.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.linalg import lu_factor, lu_solve

__all__ = [
    "QBSystem",
    "QuadSlices",
    "symmetrize_h",
    "rhs",
    "jacobian",
    "shift_equilibrium",
    "absorb_linear_feedback",
    "fold_mass",
    "slices",
    "save_json",
    "load_json",
    "export_matrix_csv",
]

#: maximum acceptable condition number for the mass matrix E
E_COND_MAX = 1e12

#: default relative tolerance for accepting a point as an equilibrium
EQUILIBRIUM_TOL = 1e-8


def _as_matrix(M, name, rows=None, cols=None):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got ndim={M.ndim}")
    if rows is not None and M.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got {M.shape[0]}")
    if cols is not None and M.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got {M.shape[1]}")
    return M


def symmetrize_h(H_raw):
    """Symmetrize a quadratic operator without changing x -> H (x kron x).

    Column blocks are averaged pairwise: the output column (i-1)*n + j is the
    mean of the input columns (i-1)*n + j and (j-1)*n + i.
    """
    H_raw = np.asarray(H_raw, dtype=float)
    n = H_raw.shape[0]
    if H_raw.ndim != 2 or H_raw.shape[1] != n * n:
        raise ValueError(
            f"quadratic operator must be n-by-n^2, got shape {H_raw.shape}"
        )
    H3 = H_raw.reshape(n, n, n)
    return (0.5 * (H3 + H3.transpose(0, 2, 1))).reshape(n, n * n)


def _symmetrize_h_inplace(H):
    """Row-wise in-place variant of :func:`symmetrize_h` (saves a big temp)."""
    n = H.shape[0]
    H3 = H.reshape(n, n, n)
    for r in range(n):
        H3[r] = 0.5 * (H3[r] + H3[r].T)
    return H


@dataclass(frozen=True)
class QBSystem:
    """Immutable quadratic-bilinear system.

    Arrays are copied and marked read-only at construction (pass
    ``copy=False`` for large operators the caller relinquishes). H is
    symmetrized silently.
    """

    E: np.ndarray
    A: np.ndarray
    H: np.ndarray
    N: tuple = ()
    B: np.ndarray | None = None
    C: np.ndarray | None = None
    copy: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        E = _as_matrix(self.E, "E")
        n = E.shape[0]
        _as_matrix(E, "E", n, n)
        A = _as_matrix(self.A, "A", n, n)
        H = _as_matrix(self.H, "H", n, n * n)
        if self.copy:
            E, A, H = E.copy(), A.copy(), H.copy()
            _symmetrize_h_inplace(H)
        else:
            _symmetrize_h_inplace(H)

        cond = np.linalg.cond(E)
        if not np.isfinite(cond) or cond > E_COND_MAX:
            raise ValueError(f"mass matrix E is numerically singular (cond={cond:.3e})")

        N = tuple(_as_matrix(Ni, f"N[{k}]", n, n).copy() for k, Ni in enumerate(self.N))
        B = self.B
        if B is None:
            if N:
                raise ValueError("bilinear terms given but no input matrix B")
            B = np.zeros((n, 0))
        else:
            B = _as_matrix(B, "B", rows=n).copy()
        m = B.shape[1]
        if N and len(N) != m:
            raise ValueError(f"got {len(N)} bilinear matrices for m={m} inputs")
        C = None if self.C is None else _as_matrix(self.C, "C", cols=n).copy()

        for arr in (E, A, H, B) + N + ((C,) if C is not None else ()):
            arr.setflags(write=False)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def H3(self):
        """H viewed as an (n, n, n) tensor; H3[r, i, j] multiplies x_i * x_j."""
        n = self.n
        return self.H.reshape(n, n, n)

    @cached_property
    def _E_lu(self):
        return lu_factor(self.E)

    @cached_property
    def _is_identity_E(self):
        return np.array_equal(self.E, np.eye(self.n))

    def solve_E(self, rhs_vec):
        """Apply E^{-1} through the cached LU factorization."""
        if self._is_identity_E:
            return np.array(rhs_vec, dtype=float, copy=True)
        return lu_solve(self._E_lu, rhs_vec)

    def quad(self, x, y=None):
        """Evaluate H (x kron y); y defaults to x."""
        if y is None:
            y = x
        return (self.H3 @ np.asarray(y, dtype=float)) @ np.asarray(x, dtype=float)

    def quad_matrix(self, x):
        """The matrix 2 H (I kron x); column j is 2 H (e_j kron x)."""
        return 2.0 * np.tensordot(self.H3, x, axes=([2], [0]))

    def with_operators(self, **updates):
        """Return a copy with some operators replaced."""
        fields = dict(E=self.E, A=self.A, H=self.H, N=self.N, B=self.B, C=self.C)
        fields.update(updates)
        return QBSystem(**fields)


@dataclass(frozen=True)
class QuadSlices:
    """Column-block view K_i = H[:, (i-1)n : in] of the quadratic operator."""

    K: tuple

    @property
    def n(self):
        return len(self.K)

    def assemble(self):
        """Reassemble the n-by-n^2 quadratic operator (exact inverse of slices)."""
        return np.hstack(self.K)


def rhs(sys: QBSystem, x, u=None):
    """Right-hand side E^{-1}(A x + H(x kron x) + sum_i N_i x u_i + B u)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.n,):
        raise ValueError(f"state must have shape ({sys.n},), got {x.shape}")
    f = sys.A @ x + sys.quad(x)
    if u is not None:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if u.shape != (sys.m,):
            raise ValueError(f"input must have shape ({sys.m},), got {u.shape}")
        f += sys.B @ u
        for ui, Ni in zip(u, sys.N):
            f += ui * (Ni @ x)
    return sys.solve_E(f)


def jacobian(sys: QBSystem, x, u=None):
    """State Jacobian E^{-1}(A + 2 H (I kron x) + sum_i N_i u_i)."""
    x = np.asarray(x, dtype=float)
    J = sys.A + sys.quad_matrix(x)
    if u is not None:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        for ui, Ni in zip(u, sys.N):
            J = J + ui * Ni
    return sys.solve_E(J)


def shift_equilibrium(sys: QBSystem, x_e, tol_eq=EQUILIBRIUM_TOL):
    """Shift coordinates so a nonzero equilibrium x_e moves to the origin.

    The shifted linear part is A + 2 H (I kron x_e); H and E are unchanged.
    """
    x_e = np.asarray(x_e, dtype=float)
    res = np.linalg.norm(sys.A @ x_e + sys.quad(x_e))
    scale = np.linalg.norm(sys.A, 2) * np.linalg.norm(x_e) + 1.0
    if res > tol_eq * scale:
        raise ValueError(
            f"x_e is not an equilibrium: residual {res:.3e} exceeds "
            f"{tol_eq:.1e} * {scale:.3e}"
        )
    return sys.with_operators(A=sys.A + sys.quad_matrix(x_e))


def absorb_linear_feedback(sys: QBSystem, K):
    """Close the loop u = K x, returning an autonomous system.

    A' = A + B K and the bilinear terms fold into the quadratic operator:
    sum_i N_i x (K x)_i = sum_j x_j (sum_i K_{ij} N_i) x.
    """
    K = _as_matrix(K, "K", sys.m, sys.n)
    n = sys.n
    H_add = np.zeros((n, n, n))
    for i, Ni in enumerate(sys.N):
        # block j of the added quadratic operator gains K[i, j] * N_i
        H_add += K[i][None, :, None] * Ni[:, None, :]
    A_new = sys.A + sys.B @ K
    H_new = sys.H + H_add.reshape(n, n * n)
    return QBSystem(E=sys.E, A=A_new, H=H_new, N=(), B=None, C=sys.C)


def fold_mass(sys: QBSystem) -> QBSystem:
    """Equivalent system with E = I (every operator premultiplied by E^{-1}).

    The trajectories are identical; Lyapunov functions and norms are not,
    so certified radii computed on the folded system refer to its own
    v(x) = x^T P x.
    """
    if sys._is_identity_E:
        return sys
    return QBSystem(
        E=np.eye(sys.n),
        A=sys.solve_E(np.asarray(sys.A)),
        H=sys.solve_E(np.asarray(sys.H)),
        N=tuple(sys.solve_E(np.asarray(Ni)) for Ni in sys.N),
        B=sys.solve_E(np.asarray(sys.B)) if sys.m else None,
        C=sys.C,
        copy=False,
    )


def slices(sys: QBSystem) -> QuadSlices:
    """Extract the column blocks K_i with sum_i x_i K_i x = H (x kron x)."""
    n = sys.n
    return QuadSlices(K=tuple(sys.H[:, i * n : (i + 1) * n] for i in range(n)))


# ---------------------------------------------------------------------------
# serialization


def _matrix_to_list(M):
    return np.asarray(M).tolist()


def save_json(sys: QBSystem, path):
    """Serialize a system to JSON (dense row-major arrays)."""
    doc = {
        "n": sys.n,
        "m": sys.m,
        "E": _matrix_to_list(sys.E),
        "A": _matrix_to_list(sys.A),
        "H": _matrix_to_list(sys.H),
        "N": [_matrix_to_list(Ni) for Ni in sys.N],
        "B": _matrix_to_list(sys.B),
        "C": None if sys.C is None else _matrix_to_list(sys.C),
    }
    Path(path).write_text(json.dumps(doc))


def load_json(path) -> QBSystem:
    doc = json.loads(Path(path).read_text())
    return QBSystem(
        E=np.array(doc["E"], dtype=float),
        A=np.array(doc["A"], dtype=float),
        H=np.array(doc["H"], dtype=float),
        N=tuple(np.array(Ni, dtype=float) for Ni in doc["N"]),
        B=np.array(doc["B"], dtype=float) if doc["B"] else None,
        C=None if doc["C"] is None else np.array(doc["C"], dtype=float),
    )


def export_matrix_csv(M, path):
    """Dump a matrix to CSV, one row per line (diagnostic aid)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.atleast_2d(np.asarray(M)):
            writer.writerow([repr(float(v)) for v in row])
