"""Command-line front end.

Subcommands: ``model`` (build and serialize a benchmark model), ``reduce``
(run a reduction pipeline), ``estimate`` (stability radii for a model or
ROM), ``validate`` (Monte-Carlo containment check), and ``sweep`` (radius
versus reduced order, CSV output).

Exit codes: 0 success, 2 certificate inapplicable, 1 any other error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys as _sys
import time
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from . import estimates, models, qbsys, rom, sim, validate
from .densela import (
    DenseLAError,
    UnstableLinearPart,
    LyapunovCertificate,
    certificate_from_p,
    solve_lyapunov,
    solve_riccati_lqg,
    spectral_norm,
)

__all__ = ["main", "make_certificate", "CertificateInapplicable"]

CERT_CHOICES = ("lyapunov-identity", "lqg-sigma", "riccati-implied")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INAPPLICABLE = 2

#: skew-parameter count above which the optimizer is refused by default
MAX_OPTIMIZER_DN = 2_000_000


class CertificateInapplicable(RuntimeError):
    """The requested Lyapunov-matrix source does not apply to this system."""


# ---------------------------------------------------------------------------
# certificate sources


def make_certificate(choice, system, artifact=None) -> LyapunovCertificate:
    """Build the Lyapunov certificate named by ``choice``.

    * ``lyapunov-identity``: solve the Lyapunov equation with Q = I.
    * ``lqg-sigma``: the diagonal spectrum of an LQG-balanced ROM, with
      Q_f = C (requires an lqgbt artifact).
    * ``riccati-implied``: P from the observability-side LQG Riccati
      equation; Q is whatever that P implies, factored exactly (fails when
      indefinite).
    """
    if choice == "lyapunov-identity":
        return solve_lyapunov(system.A, system.E, np.eye(system.n))

    if choice == "lqg-sigma":
        if artifact is None or artifact.method != "lqgbt":
            raise CertificateInapplicable(
                "the lqg-sigma certificate needs an LQG-balanced ROM")
        rsys = artifact.system
        sig = np.asarray(artifact.sigma, dtype=float)
        cert = certificate_from_p(rsys.A, rsys.E, np.diag(sig), rsys.C,
                                  extra={"source": "lqg-sigma"})
        # exact diagonal factor (Cholesky of a diagonal is the same thing,
        # but keep it explicitly diagonal for conditioning)
        cert.P_f = np.diag(np.sqrt(sig))
        return cert

    if choice == "riccati-implied":
        if system.C is None or system.m == 0:
            raise CertificateInapplicable(
                "the riccati-implied certificate needs B and C")
        At = system.solve_E(np.asarray(system.A))
        Bt = system.solve_E(np.asarray(system.B))
        _, Q_sol = solve_riccati_lqg(At, Bt, np.asarray(system.C))
        P = 0.5 * (Q_sol + Q_sol.T)
        Q_implied = -(system.A.T @ P @ system.E + system.E.T @ P @ system.A)
        Q_implied = 0.5 * (Q_implied + Q_implied.T)
        w, V = np.linalg.eigh(Q_implied)
        if w[0] <= 0:
            raise CertificateInapplicable(
                f"Riccati-implied Q is not positive definite "
                f"(min eigenvalue {w[0]:.3e})")
        Q_f = (V * np.sqrt(w)).T
        cert = certificate_from_p(system.A, system.E, P, Q_f,
                                  extra={"source": "riccati-implied"})
        return cert

    raise ValueError(f"unknown certificate choice {choice!r}")


# ---------------------------------------------------------------------------
# model and snapshot plumbing


def _build_model(name, overrides):
    if name not in models.MODEL_BUILDERS:
        raise ValueError(f"unknown model {name!r} "
                         f"(choices: {sorted(models.MODEL_BUILDERS)})")
    return models.MODEL_BUILDERS[name](**overrides)


def _model_overrides(args):
    ov = {}
    if getattr(args, "N", None) is not None:
        if args.model == "fhn":
            ov["grid"] = args.N
        else:
            ov["N"] = args.N
    if getattr(args, "epsilon", None) is not None:
        ov["epsilon"] = args.epsilon
    return ov


def fhn_snapshot_blocks(cfg: models.FHNConfig | None = None, t_f=12.0,
                        every=0.1):
    """Simulated (z, v, w)-block snapshots of the FitzHugh-Nagumo system.

    Integrates the original cubic semi-discretization (cheap and exactly
    consistent with the lifted model) from rest, sampled every 0.1 s.
    """
    cfg = cfg or models.FHNConfig()
    g = cfg.grid
    rhs, jac = models.fhn_cubic_semidiscretization(cfg)
    res = solve_ivp(rhs, (0.0, t_f), np.zeros(2 * g), method="BDF", jac=jac,
                    rtol=1e-8, atol=1e-10, dense_output=True)
    if res.status != 0:
        raise RuntimeError(f"snapshot integration failed: {res.message}")
    grid = np.arange(0.0, t_f + every / 2, every)
    Y = res.sol(grid)
    V, W = Y[:g], Y[g:]
    return [V, W, V**2], grid


def burgers_fd_input(seed=0, pieces=100, scale=1.0):
    """Deterministic piecewise-constant random input on [0, 1]."""
    rng = np.random.default_rng(seed)
    values = scale * rng.uniform(-1.0, 1.0, size=pieces)

    def u(t):
        k = min(int(t * pieces), pieces - 1)
        return np.array([values[max(k, 0)]])

    return u


def burgers_fd_snapshots(system, seed=0, t_f=1.0, dt=1e-4) -> sim.SnapshotSet:
    """Forced trajectory data for operator inference (dt = 1e-4 sampling)."""
    u = burgers_fd_input(seed=seed)
    traj = sim.integrate(system, np.zeros(system.n), u_signal=u, t_f=t_f,
                         opts=sim.IntegrateOptions(rtol=1e-8, atol=1e-10))
    if traj.status != sim.HORIZON:
        raise RuntimeError(f"snapshot trajectory ended early: {traj.status}")
    return sim.sample_snapshots(traj, dt, u_signal=u)


def build_rom_artifact(name, method, n, seed=0, overrides=None):
    """Run a reduction pipeline on the named model."""
    overrides = overrides or {}
    system, aux = _build_model(name, overrides)
    if method == "lqgbt":
        return rom.lqg_balanced_truncation(system, n), system
    if method == "pod":
        if name == "fhn":
            cfg = models.FHNConfig(**overrides) if overrides else None
            blocks, _ = fhn_snapshot_blocks(cfg)
        else:
            traj = sim.integrate(system, aux, t_f=5.0)
            blocks = [sim.sample_snapshots(traj, 0.05).X]
        est = rom.BlockPOD(n_modes=n).fit(blocks)
        return est.reduce(system), system
    if method == "opinf":
        if name == "burgers-fd":
            snap = burgers_fd_snapshots(system, seed=seed)
        elif aux is not None and np.ndim(aux) == 1:
            traj = sim.integrate(system, aux, t_f=5.0)
            snap = sim.sample_snapshots(traj, 0.05)
        else:
            raise ValueError(f"no snapshot recipe for opinf on {name!r}")
        est = rom.OperatorInference(n=n).fit(snap)
        return est.artifact_, system
    raise ValueError(f"unknown reduction method {method!r}")


# ---------------------------------------------------------------------------
# commands


def _out_dir(args):
    d = Path(args.out or os.environ.get("QBSTAB_OUT", "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_model(args):
    system, _aux = _build_model(args.model, _model_overrides(args))
    At = system.solve_E(np.asarray(system.A))
    max_re = float(np.max(np.linalg.eigvals(At).real))
    print(f"model {args.model}: n={system.n} m={system.m}")
    print(f"  max Re(lambda(E^-1 A)) = {max_re:.6e}")
    print(f"  ||H||_2 = {spectral_norm(system.H):.6e}")
    if args.out:
        path = Path(args.out)
        if path.is_dir():
            path = path / f"{args.model}.json"
        qbsys.save_json(system, path)
        print(f"  written to {path}")
    return EXIT_OK


def cmd_reduce(args):
    artifact, _full = build_rom_artifact(args.model, args.rom, args.n,
                                         seed=args.seed,
                                         overrides=_model_overrides(args))
    out = _out_dir(args)
    base = f"{args.model}-{args.rom}-n{args.n}"
    artifact.save(out / f"{base}.json")
    sv = np.asarray(artifact.extra.get("full_spectrum", artifact.sigma))
    with open(out / f"{base}-singular-values.csv", "w") as fh:
        fh.write("index,sigma\n")
        for k, s in enumerate(sv):
            fh.write(f"{k + 1},{s!r}\n")
    print(f"rom {base}: reduced dimension {artifact.n}")
    if artifact.method == "lqgbt":
        rp, rq = artifact.extra["reduced_riccati_residuals"]
        print(f"  reduced Riccati residuals: {rp:.3e}, {rq:.3e}")
    if artifact.method == "opinf" and not artifact.extra.get(
            "stable_linear_part", True):
        print("  warning: learned linear part is unstable")
    return EXIT_OK


def _target_and_cert(args):
    overrides = _model_overrides(args)
    if args.rom:
        artifact, _full = build_rom_artifact(args.model, args.rom, args.n,
                                             seed=args.seed,
                                             overrides=overrides)
        target = artifact.system
    else:
        target, _aux = _build_model(args.model, overrides)
        artifact = None
        if args.deflate_constant:
            target, _Z = models.deflate_constant_mode(target)
        if args.fold_mass:
            target = qbsys.fold_mass(target)
    cert = make_certificate(args.cert, target, artifact)
    return target, cert


def _optimizer_options(args):
    return estimates.OptimizeOptions(
        restarts=args.restarts, mu_bound=args.mu_bound, tolx=args.tolx,
        tolfun=args.tolfun, maxiter=args.maxiter, seed=args.seed)


def _estimate_one(target, cert, args):
    param = estimates.MuParametrization(target.n)
    if args.analytic_only or param.d_n > MAX_OPTIMIZER_DN:
        rho_a = estimates.analytic_radius(target, cert)
        return estimates.StabilityEstimate(
            rho_analytic=rho_a, rho_star=float("nan"),
            alpha_star=float("nan"), mu_star=np.zeros(0), restarts_used=0,
            objective_history=[], certificate=cert,
            diagnostics={"analytic_only": True})
    return estimates.optimize_radius(target, cert, _optimizer_options(args))


def cmd_estimate(args):
    target, cert = _target_and_cert(args)
    est = _estimate_one(target, cert, args)
    print(f"n={target.n} rho_analytic={est.rho_analytic:.6e} "
          f"rho_star={est.rho_star:.6e}")
    out = _out_dir(args)
    tag = f"{args.model}-{args.rom or 'fom'}-n{target.n}"
    est.to_json(out / f"estimate-{tag}.json")
    return EXIT_OK


def cmd_validate(args):
    target, cert = _target_and_cert(args)
    est = _estimate_one(target, cert, args)
    rho = est.rho_star
    if not np.isfinite(rho):
        rho = est.rho_analytic
    if not np.isfinite(rho):
        raise ValueError("no finite radius to validate")
    report = validate.validate_estimate(target, cert, rho,
                                        count=args.samples, seed=args.seed,
                                        t_f=args.t_f)
    print(f"rho={report.rho_tested:.6e} samples={report.samples} "
          f"converged={report.converged} diverged={report.diverged} "
          f"undecided={report.undecided}")
    out = _out_dir(args)
    tag = f"{args.model}-{args.rom or 'fom'}-n{target.n}"
    report.to_json(out / f"validate-{tag}.json")
    return EXIT_OK if report.certified_consistent else EXIT_ERROR


def parse_n_list(spec):
    """Parse ``"3,5,7"`` or ``"3..21:2"`` (inclusive range with step)."""
    spec = spec.strip()
    if ".." in spec:
        lo, rest = spec.split("..")
        hi, _, step = rest.partition(":")
        values = list(range(int(lo), int(hi) + 1, int(step or 1)))
    else:
        values = [int(v) for v in spec.split(",") if v]
    if not values or any(v <= 0 for v in values):
        raise ValueError(f"invalid order list {spec!r}")
    return values


def cmd_sweep(args):
    ns = parse_n_list(args.n)
    rows = []
    overrides = _model_overrides(args)
    for n in ns:
        t0 = time.perf_counter()
        status = "ok"
        rho_a = rho_s = alpha_s = float("nan")
        try:
            artifact, _full = build_rom_artifact(
                args.model, args.rom, n, seed=args.seed, overrides=overrides)
            target = artifact.system
            cert = make_certificate(args.cert, target, artifact)
            est = _estimate_one(target, cert, args)
            rho_a, rho_s, alpha_s = (est.rho_analytic, est.rho_star,
                                     est.alpha_star)
        except (CertificateInapplicable, UnstableLinearPart) as exc:
            status = "inapplicable"
            print(f"n={n}: certificate inapplicable: {exc}")
        except DenseLAError as exc:
            status = "error"
            print(f"n={n}: {exc}")
        wall_ms = 1000.0 * (time.perf_counter() - t0)
        rows.append([n, rho_a, rho_s, alpha_s, wall_ms, status])
        if status == "ok":
            print(f"n={n} rho_analytic={rho_a:.6e} rho_star={rho_s:.6e} "
                  f"({wall_ms:.0f} ms)")
    out = _out_dir(args)
    path = out / f"sweep-{args.model}-{args.rom}.csv"
    with open(path, "w") as fh:
        fh.write("n,rho_analytic,rho_star,alpha_star,wall_ms,status\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    print(f"sweep written to {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p, rom_required=False):
    p.add_argument("--model", required=True,
                   choices=sorted(models.MODEL_BUILDERS))
    p.add_argument("--rom", choices=("lqgbt", "pod", "opinf"),
                   required=rom_required, default=None)
    p.add_argument("--N", type=int, default=None,
                   help="grid-size override for the model")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--cert", choices=CERT_CHOICES,
                   default="lyapunov-identity")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None,
                   help="output directory (default: $QBSTAB_OUT or .)")
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--mu-bound", dest="mu_bound", type=float, default=1e4)
    p.add_argument("--tolx", type=float, default=0.1)
    p.add_argument("--tolfun", type=float, default=1e-3)
    p.add_argument("--maxiter", type=int, default=1000)
    p.add_argument("--analytic-only", dest="analytic_only",
                   action="store_true",
                   help="skip the radius optimization (large systems)")
    p.add_argument("--fold-mass", dest="fold_mass", action="store_true",
                   help="premultiply by E^-1 before certifying (FOM only)")
    p.add_argument("--deflate-constant", dest="deflate_constant",
                   action="store_true",
                   help="restrict to the mean-zero subspace (periodic FOMs)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qbstab",
        description="Stability-domain certification for quadratic-bilinear "
                    "reduced-order models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model", help="build and inspect a benchmark model")
    p.add_argument("action", choices=("build",))
    p.add_argument("model", choices=sorted(models.MODEL_BUILDERS))
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("reduce", help="run a reduction pipeline")
    _add_common(p, rom_required=True)
    p.add_argument("--n", type=int, required=True)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("estimate", help="stability radii for a model or ROM")
    _add_common(p)
    p.add_argument("--n", type=int, default=10)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("validate", help="Monte-Carlo containment check")
    _add_common(p)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--t-f", dest="t_f", type=float, default=50.0)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep", help="radius versus reduced order, CSV out")
    _add_common(p, rom_required=True)
    p.add_argument("--n", required=True,
                   help='order list: "3,5,7" or "3..21:2"')
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CertificateInapplicable, UnstableLinearPart) as exc:
        print(f"certificate inapplicable: {exc}", file=_sys.stderr)
        return EXIT_INAPPLICABLE
    except Exception as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
