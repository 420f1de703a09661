"""Monte-Carlo verification of certified stability-domain estimates.

Samples the boundary of the certified ellipsoid, integrates each sample, and
counts convergence/divergence. A certified radius must yield zero divergent
samples; tightness probing then scales the radius past the certificate to
locate the first empirical escape.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import sim
from .densela import LyapunovCertificate
from .qbsys import QBSystem

__all__ = [
    "ValidationReport",
    "sample_ellipsoid_shell",
    "validate_estimate",
    "probe_tightness",
    "first_divergence_factor",
]

#: default factor grid for tightness probing beyond the certified radius
PROBE_FACTORS = (1.5, 2.0, 5.0, 10.0)

#: safety factor below the certified radius (the guarantee is strict)
SAFETY = 0.99


@dataclass
class ValidationReport:
    rho_tested: float
    samples: int
    converged: int
    diverged: int
    undecided: int
    #: largest ratio v(x(t))/v(x0) seen along any sample trajectory
    worst_v_growth: float
    #: per-sample records: (x0, status)
    records: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.converged + self.diverged + self.undecided != self.samples:
            raise ValueError("sample counts are inconsistent")

    @property
    def certified_consistent(self):
        return self.diverged == 0

    def to_json(self, path=None):
        doc = {
            "rho_tested": self.rho_tested,
            "samples": self.samples,
            "converged": self.converged,
            "diverged": self.diverged,
            "undecided": self.undecided,
            "worst_v_growth": self.worst_v_growth,
            "records": [{"x0": np.asarray(x0).tolist(), "status": s}
                        for x0, s in self.records],
            "diagnostics": {k: v for k, v in self.diagnostics.items()
                            if isinstance(v, (int, float, str, bool))},
        }
        text = json.dumps(doc)
        if path is not None:
            Path(path).write_text(text)
        return text

    def csv_row(self):
        return [self.rho_tested, self.samples, self.converged,
                self.diverged, self.undecided, self.worst_v_growth]

    @staticmethod
    def write_csv(path, reports):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rho", "samples", "converged", "diverged",
                        "undecided", "worst_v_growth"])
            for r in reports:
                w.writerow(r.csv_row())


def sample_ellipsoid_shell(cert: LyapunovCertificate, E, rho, count,
                           seed=0):
    """Points with v(x) = x^T E^T P E x exactly rho^2.

    Standard normal directions are normalized and mapped through the inverse
    transpose of the Cholesky factor of E^T P E, so the directional
    distribution is the push-forward of the uniform sphere distribution.
    """
    E = np.asarray(E, dtype=float)
    M = E.T @ cert.P @ E
    L = np.linalg.cholesky(0.5 * (M + M.T))
    rng = np.random.default_rng(seed)
    n = E.shape[0]
    Z = rng.standard_normal((count, n))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    # x = rho * L^{-T} z  =>  x^T L L^T x = rho^2 |z|^2 = rho^2
    X = rho * np.linalg.solve(L.T, Z.T).T
    return [X[k] for k in range(count)]


def _v(cert, E, x):
    Ex = E @ x
    return float(Ex @ (cert.P @ Ex))


def validate_estimate(sys: QBSystem, cert: LyapunovCertificate, rho,
                      count=200, safety=SAFETY, t_f=50.0, seed=0,
                      opts: sim.IntegrateOptions | None = None
                      ) -> ValidationReport:
    """Integrate shell samples at ``safety * rho`` and count the outcomes.

    Integrator failures are counted as undecided, never dropped. A sample is
    converged once its norm enters the settle ball; horizon-reached without
    settling is undecided.
    """
    if rho <= 0 or not np.isfinite(rho):
        raise ValueError(f"rho must be positive and finite, got {rho}")
    opts = opts or sim.IntegrateOptions(stop_on_settle=True)
    rho_eff = safety * rho
    points = sample_ellipsoid_shell(cert, sys.E, rho_eff, count, seed=seed)
    converged = diverged = undecided = 0
    worst = 1.0
    records = []
    failures = []
    for x0 in points:
        v0 = _v(cert, sys.E, x0)
        try:
            traj = sim.integrate(sys, x0, t_f=t_f, opts=opts)
        except RuntimeError as exc:
            undecided += 1
            records.append((x0, "integrator-failure"))
            failures.append(str(exc))
            continue
        v_max = max(_v(cert, sys.E, traj.X[:, k])
                    for k in range(traj.X.shape[1]))
        worst = max(worst, v_max / v0)
        if traj.status == sim.CONVERGED:
            converged += 1
        elif traj.status == sim.DIVERGED:
            diverged += 1
        else:
            undecided += 1
        records.append((x0, traj.status))
    return ValidationReport(
        rho_tested=rho_eff, samples=count, converged=converged,
        diverged=diverged, undecided=undecided, worst_v_growth=worst,
        records=records,
        diagnostics={"seed": seed, "t_f": t_f, "safety": safety,
                     "rho_certified": float(rho),
                     "integrator_failures": len(failures)},
    )


def probe_tightness(sys: QBSystem, cert: LyapunovCertificate, rho_star,
                    factors=PROBE_FACTORS, count=50, t_f=50.0, seed=0,
                    opts: sim.IntegrateOptions | None = None):
    """Validation reports at rho = f * rho_star for each factor f.

    Samples land exactly on f * rho_star (no safety factor); the first factor
    with a divergent sample quantifies the conservatism of the certificate.
    """
    reports = []
    for f in factors:
        rep = validate_estimate(sys, cert, f * rho_star, count=count,
                                safety=1.0, t_f=t_f, seed=seed, opts=opts)
        rep.diagnostics["factor"] = float(f)
        reports.append(rep)
    return reports


def first_divergence_factor(reports):
    """Smallest probed factor with a divergent sample, or None."""
    for rep in reports:
        if rep.diverged > 0:
            return rep.diagnostics.get("factor")
    return None
