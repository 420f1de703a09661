"""Stability-domain certification for quadratic-bilinear reduced-order models.

Builds quadratic-bilinear systems (directly or by lifting / reduction),
computes certified estimates of their domain of attraction from quadratic
Lyapunov functions, optimizes the certified radius over the skew-symmetric
reparametrizations of the quadratic term, and validates the certificates by
Monte-Carlo simulation.
"""

from . import cli, densela, estimates, models, qbsys, rom, sim, validate
from .densela import (
    DenseLAError,
    LyapunovCertificate,
    UnstableLinearPart,
    certificate_from_p,
    solve_lyapunov,
    solve_riccati_lqg,
)
from .estimates import (
    MuParametrization,
    OptimizeOptions,
    StabilityEstimate,
    StabilityRadiusEstimator,
    analytic_radius,
    optimize_radius,
)
from .models import (
    BurgersFDConfig,
    BurgersFEMConfig,
    FHNConfig,
    build_burgers_fd,
    build_burgers_fem,
    build_fhn_lifted,
    deflate_constant_mode,
)
from .qbsys import QBSystem, fold_mass
from .rom import (
    BlockPOD,
    LQGBalancedTruncation,
    OperatorInference,
    ROMArtifact,
    galerkin_reduce,
    lqg_balanced_truncation,
    operator_inference,
    pod_blockwise,
)
from .sim import IntegrateOptions, SnapshotSet, Trajectory, integrate
from .validate import ValidationReport, probe_tightness, validate_estimate

__version__ = "0.1.0"

__all__ = [
    "QBSystem",
    "DenseLAError",
    "UnstableLinearPart",
    "LyapunovCertificate",
    "certificate_from_p",
    "solve_lyapunov",
    "solve_riccati_lqg",
    "MuParametrization",
    "OptimizeOptions",
    "StabilityEstimate",
    "StabilityRadiusEstimator",
    "analytic_radius",
    "optimize_radius",
    "BurgersFEMConfig",
    "FHNConfig",
    "BurgersFDConfig",
    "build_burgers_fem",
    "build_fhn_lifted",
    "build_burgers_fd",
    "deflate_constant_mode",
    "fold_mass",
    "ROMArtifact",
    "LQGBalancedTruncation",
    "BlockPOD",
    "OperatorInference",
    "lqg_balanced_truncation",
    "pod_blockwise",
    "galerkin_reduce",
    "operator_inference",
    "IntegrateOptions",
    "Trajectory",
    "SnapshotSet",
    "integrate",
    "ValidationReport",
    "validate_estimate",
    "probe_tightness",
    "qbsys",
    "densela",
    "estimates",
    "models",
    "rom",
    "sim",
    "validate",
    "cli",
]
