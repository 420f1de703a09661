"""Time integration of quadratic-bilinear systems.

Adaptive implicit integration (stiff BDF with analytic Jacobians, matching
the reference tolerances RelTol=1e-8 / AbsTol=1e-10), snapshot sampling from
dense output, and fourth-order finite-difference time-derivative estimation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import qbsys
from .qbsys import QBSystem

__all__ = [
    "IntegrateOptions",
    "Trajectory",
    "SnapshotSet",
    "integrate",
    "sample_snapshots",
    "estimate_derivatives",
]

CONVERGED = "converged-to-zero"
DIVERGED = "diverged"
HORIZON = "horizon-reached"


@dataclass
class IntegrateOptions:
    rtol: float = 1e-8
    atol: float = 1e-10
    method: str = "BDF"
    max_step: float = np.inf
    #: norm above which the trajectory is declared divergent
    ceiling: float = 1e8
    #: norm below which the state counts as settled at the origin
    settle_ball: float = 1e-6
    #: stop integrating once the settle ball is reached
    stop_on_settle: bool = False


@dataclass
class Trajectory:
    t: np.ndarray
    X: np.ndarray  # states, n x (K+1)
    status: str
    diagnostics: dict = field(default_factory=dict)
    sol: object = field(default=None, repr=False)  # dense-output interpolant

    @property
    def t_end(self):
        return float(self.t[-1])

    @property
    def x_end(self):
        return self.X[:, -1]

    def export_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(self.X.shape[0])])
            for k, tk in enumerate(self.t):
                w.writerow([repr(float(tk))] +
                           [repr(float(v)) for v in self.X[:, k]])


@dataclass
class SnapshotSet:
    """Uniformly or non-uniformly sampled trajectory data."""

    t: np.ndarray
    X: np.ndarray           # N x (K+1)
    U: np.ndarray | None = None      # m x (K+1)
    Xdot: np.ndarray | None = None   # N x (K+1)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if self.X.shape[1] != self.t.size:
            raise ValueError("state columns must match the time grid")
        for name in ("U", "Xdot"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.atleast_2d(np.asarray(arr, dtype=float))
                if arr.shape[-1] != self.t.size:
                    raise ValueError(f"{name} columns must match the time grid")
                setattr(self, name, arr)

    @property
    def K(self):
        return self.t.size - 1

    def is_uniform(self, rtol=1e-8):
        dt = np.diff(self.t)
        return bool(np.all(np.abs(dt - dt[0]) <= rtol * abs(dt[0])))

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["t"] + [f"x{i + 1}" for i in range(self.X.shape[0])]
            if self.U is not None:
                header += [f"u{i + 1}" for i in range(self.U.shape[0])]
            w.writerow(header)
            for k, tk in enumerate(self.t):
                row = [repr(float(tk))] + [repr(float(v)) for v in self.X[:, k]]
                if self.U is not None:
                    row += [repr(float(v)) for v in self.U[:, k]]
                w.writerow(row)

    def save_binary(self, path):
        """Header (int64: N, K+1, m) + float64 dt grid + column-major blocks."""
        with open(path, "wb") as fh:
            m = 0 if self.U is None else self.U.shape[0]
            np.array([self.X.shape[0], self.t.size, m], dtype=np.int64).tofile(fh)
            self.t.astype(np.float64).tofile(fh)
            np.asfortranarray(self.X).T.tofile(fh)
            if self.U is not None:
                np.asfortranarray(self.U).T.tofile(fh)

    @classmethod
    def load_binary(cls, path):
        with open(path, "rb") as fh:
            N, K1, m = np.fromfile(fh, dtype=np.int64, count=3)
            t = np.fromfile(fh, dtype=np.float64, count=K1)
            X = np.fromfile(fh, dtype=np.float64, count=N * K1).reshape(K1, N).T
            U = None
            if m > 0:
                U = np.fromfile(fh, dtype=np.float64, count=m * K1).reshape(K1, m).T
        return cls(t=t, X=X, U=U)


def integrate(sys: QBSystem, x0, u_signal=None, t_f=1.0,
              opts: IntegrateOptions | None = None) -> Trajectory:
    """Integrate the system from x0 over [0, t_f].

    ``u_signal`` is a callable t -> u(t) (or None for the autonomous case).
    Divergence (state norm above the ceiling) and, optionally, settling at
    the origin terminate the integration early.
    """
    opts = opts or IntegrateOptions()
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state must be finite")
    if t_f <= 0:
        raise ValueError("t_f must be positive")

    if u_signal is None:
        def f(t, x):
            return qbsys.rhs(sys, x)

        def jac(t, x):
            return qbsys.jacobian(sys, x)
    else:
        def f(t, x):
            return qbsys.rhs(sys, x, u_signal(t))

        def jac(t, x):
            return qbsys.jacobian(sys, x, u_signal(t))

    events = []

    def diverged(t, x):
        return float(np.linalg.norm(x) - opts.ceiling)
    diverged.terminal = True
    diverged.direction = 1
    events.append(diverged)

    if opts.stop_on_settle:
        def settled(t, x):
            return float(np.linalg.norm(x) - opts.settle_ball)
        settled.terminal = True
        settled.direction = -1
        events.append(settled)

    res = solve_ivp(f, (0.0, t_f), x0, method=opts.method, jac=jac,
                    rtol=opts.rtol, atol=opts.atol, max_step=opts.max_step,
                    dense_output=True, events=events)
    if res.status == -1:
        # solver stalled; for QB blow-up this is finite-time escape
        norm_end = np.linalg.norm(res.y[:, -1])
        if norm_end > 1e3 * max(np.linalg.norm(x0), 1.0):
            status = DIVERGED
        else:
            raise RuntimeError(
                f"integration failed at t={res.t[-1]:.6g}: {res.message}")
    elif res.status == 1:
        status = DIVERGED if res.t_events[0].size else CONVERGED
    else:
        status = HORIZON
        if np.linalg.norm(res.y[:, -1]) <= opts.settle_ball:
            status = CONVERGED
    return Trajectory(
        t=res.t, X=res.y, status=status, sol=res.sol,
        diagnostics={"nfev": res.nfev, "njev": res.njev, "nlu": res.nlu,
                     "steps": res.t.size - 1, "message": res.message},
    )


def sample_snapshots(traj: Trajectory, every: float,
                     u_signal=None) -> SnapshotSet:
    """Interpolate the dense output onto a uniform grid with spacing ``every``."""
    if traj.sol is None:
        raise ValueError("trajectory carries no dense output")
    t0, t1 = float(traj.t[0]), float(traj.t[-1])
    if every <= 0:
        raise ValueError("sampling interval must be positive")
    n_steps = int(round((t1 - t0) / every))
    grid = t0 + every * np.arange(n_steps + 1)
    if grid[-1] > t1 + 1e-12 * max(abs(t1), 1.0):
        raise ValueError(
            f"sampling grid end {grid[-1]:.6g} exceeds horizon {t1:.6g}")
    grid[-1] = min(grid[-1], t1)
    X = traj.sol(grid)
    # exact at integration nodes that coincide with grid points
    node_idx = np.searchsorted(grid, traj.t)
    for j, tj in zip(node_idx, traj.t):
        if j < grid.size and abs(grid[j] - tj) < 1e-13 * max(abs(tj), 1.0):
            X[:, j] = traj.X[:, np.searchsorted(traj.t, tj)]
    U = None
    if u_signal is not None:
        U = np.column_stack([np.atleast_1d(u_signal(t)) for t in grid])
    return SnapshotSet(t=grid, X=X, U=U)


# fourth-order five-point stencils (uniform grid, spacing h)
_D4_INTERIOR = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D4_EDGE = {
    0: np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0,
    1: np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0,
}


def estimate_derivatives(snap: SnapshotSet) -> SnapshotSet:
    """Fourth-order finite-difference time derivatives on a uniform grid.

    Exact (to rounding) for data polynomial in time of degree <= 4.
    """
    if snap.K + 1 < 5:
        raise ValueError("need at least 5 snapshot columns")
    if not snap.is_uniform():
        raise ValueError("derivative estimation requires a uniform time grid")
    h = float(snap.t[1] - snap.t[0])
    X = snap.X
    K1 = X.shape[1]
    Xdot = np.empty_like(X)
    Xdot[:, 2:-2] = (X[:, :-4] * _D4_INTERIOR[0] + X[:, 1:-3] * _D4_INTERIOR[1]
                     + X[:, 3:-1] * _D4_INTERIOR[3] + X[:, 4:] * _D4_INTERIOR[4]) / h
    for j, coeff in _D4_EDGE.items():
        Xdot[:, j] = X[:, :5] @ coeff / h
        Xdot[:, K1 - 1 - j] = -(X[:, -5:] @ coeff[::-1]) / h
    return SnapshotSet(t=snap.t, X=snap.X, U=snap.U, Xdot=Xdot)
