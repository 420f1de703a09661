import numpy as np
import pytest

from qbstab import QBSystem, rom, sim
from qbstab.densela import DenseLAError, solve_riccati_lqg, riccati_residuals
from qbstab.rom import (
    BlockPOD,
    LQGBalancedTruncation,
    OperatorInference,
    ROMArtifact,
    expand_h_from_compact,
    galerkin_reduce,
    kron2c,
    lqg_balanced_truncation,
    operator_inference,
    pod_blockwise,
    projection_error,
)
from conftest import random_stable_qb


def _random_io_system(n, rng, m=2, p=2, h_scale=0.2):
    sys_ = random_stable_qb(n, rng, h_scale=h_scale, e_perturb=0.0)
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    return QBSystem(E=sys_.E, A=sys_.A, H=sys_.H, B=B, C=C)


class TestLQGBalancedTruncation:
    def test_no_truncation_balances(self, rng):
        # at full order the reduced Riccati solutions are the diagonal Sigma
        n = 5
        sys_ = _random_io_system(n, rng)
        art = lqg_balanced_truncation(sys_, n)
        r = art.system
        P, Q = solve_riccati_lqg(np.asarray(r.A), np.asarray(r.B),
                                 np.asarray(r.C))
        assert np.allclose(P, np.diag(art.sigma), atol=1e-6)
        assert np.allclose(Q, np.diag(art.sigma), atol=1e-6)

    def test_scalar_characteristic_value(self):
        # a=-1, b=c=1: both Riccati solutions are sqrt(2)-1
        sys_ = QBSystem(E=[[1.0]], A=[[-1.0]], H=[[0.0]],
                        B=[[1.0]], C=[[1.0]])
        art = lqg_balanced_truncation(sys_, 1)
        assert np.isclose(art.sigma[0], np.sqrt(2.0) - 1.0, atol=1e-10)

    def test_projector_biorthogonality_and_spectrum(self, rng):
        sys_ = _random_io_system(8, rng)
        art = lqg_balanced_truncation(sys_, 4)
        assert np.allclose(art.Tinv @ art.T, np.eye(4), atol=1e-8)
        assert np.all(art.sigma > 0)
        assert np.all(np.diff(art.sigma) <= 1e-12)

    def test_reduced_riccati_residuals_burgers(self, burgers_fem):
        sys_, _ = burgers_fem
        for n in (3, 11, 21):
            art = lqg_balanced_truncation(sys_, n)
            r = art.system
            rp, rq = riccati_residuals(np.asarray(r.A), np.asarray(r.B),
                                       np.asarray(r.C),
                                       np.diag(art.sigma), np.diag(art.sigma))
            assert rp <= 1e-6 and rq <= 1e-6

    def test_order_beyond_rank_rejected(self, rng):
        # rank-1 input/output makes L^T R numerically low rank
        n = 10
        A = -np.eye(n) - 0.1 * np.diag(np.arange(n, dtype=float))
        b = np.zeros((n, 1))
        b[0, 0] = 1.0
        sys_ = QBSystem(E=np.eye(n), A=A, H=np.zeros((n, n * n)),
                        B=b, C=b.T)
        with pytest.raises(DenseLAError, match="rank"):
            lqg_balanced_truncation(sys_, n)

    def test_estimator_front_end(self, rng):
        sys_ = _random_io_system(6, rng)
        est = LQGBalancedTruncation(n=3).fit(sys_)
        X = rng.standard_normal((6, 4))
        assert est.transform(X).shape == (3, 4)
        assert est.inverse_transform(est.transform(X)).shape == (6, 4)
        assert est.rom_.n == 3

    def test_requires_output_matrix(self, rng):
        sys_ = random_stable_qb(4, rng)
        with pytest.raises(ValueError, match="C"):
            lqg_balanced_truncation(sys_, 2)


class TestGalerkin:
    def test_identity_basis_is_noop(self, rng):
        sys_ = _random_io_system(4, rng)
        red = galerkin_reduce(sys_, np.eye(4))
        for name in ("E", "A", "H", "B", "C"):
            assert np.allclose(getattr(red, name), getattr(sys_, name),
                               atol=1e-12)

    def test_projection_identity(self, rng):
        from qbstab import qbsys
        n, k = 7, 3
        sys_ = random_stable_qb(n, rng, e_perturb=0.0)
        V, _ = np.linalg.qr(rng.standard_normal((n, k)))
        red = galerkin_reduce(sys_, V)
        xh = rng.standard_normal(k)
        assert np.allclose(qbsys.rhs(red, xh),
                           V.T @ qbsys.rhs(sys_, V @ xh), atol=1e-12)

    def test_quadratic_term_matches_explicit_kronecker(self, rng):
        n, k = 12, 4
        sys_ = random_stable_qb(n, rng)
        V, _ = np.linalg.qr(rng.standard_normal((n, k)))
        red = galerkin_reduce(sys_, V)
        explicit = V.T @ sys_.H @ np.kron(V, V)
        # compare the induced quadratic maps (the explicit product need not
        # be symmetrized)
        for _ in range(5):
            x = rng.standard_normal(k)
            assert np.allclose(red.quad(x), explicit @ np.kron(x, x),
                               atol=1e-12)

    def test_rejects_non_orthonormal(self, rng):
        sys_ = random_stable_qb(4, rng)
        with pytest.raises(ValueError, match="orthonormal"):
            galerkin_reduce(sys_, 2.0 * np.eye(4))


class TestBlockPOD:
    def test_rank_one_snapshots(self):
        col = np.array([1.0, 2.0, -1.0])
        X = np.column_stack([col, col, col])
        V, svals = pod_blockwise([X], 1)
        assert np.allclose(np.abs(V.T @ col), np.linalg.norm(col))
        assert projection_error(X, V) <= 1e-12

    def test_full_rank_projection_exact(self, rng):
        X = rng.standard_normal((4, 10))
        V, _ = pod_blockwise([X], 4)
        assert projection_error(X, V) <= 1e-12

    def test_block_structure(self, rng):
        Xa = rng.standard_normal((3, 8))
        Xb = rng.standard_normal((5, 8))
        V, svals = pod_blockwise([Xa, Xb], 2)
        assert V.shape == (8, 4)
        assert np.allclose(V.T @ V, np.eye(4), atol=1e-12)
        assert np.allclose(V[:3, 2:], 0.0) and np.allclose(V[3:, :2], 0.0)

    def test_eckart_young(self, rng):
        X = rng.standard_normal((10, 30))
        U, s, _ = np.linalg.svd(X, full_matrices=False)
        for k in (2, 5):
            V, _ = pod_blockwise([X], k)
            err = projection_error(X, V)
            expected = np.sqrt(np.sum(s[k:] ** 2) / np.sum(s**2))
            assert np.isclose(err, expected, rtol=1e-10)

    def test_rank_deficiency_rejected(self, rng):
        col = rng.standard_normal(5)
        X = np.outer(col, rng.standard_normal(6))
        with pytest.raises(DenseLAError, match="rank"):
            pod_blockwise([X], 3)
        with pytest.raises(ValueError, match="columns"):
            pod_blockwise([X[:, :2]], 3)

    def test_reduce_pipeline(self, rng):
        sys_ = random_stable_qb(6, rng, e_perturb=0.0)
        blocks = [rng.standard_normal((3, 12)), rng.standard_normal((3, 12))]
        est = BlockPOD(n_modes=2).fit(blocks)
        art = est.reduce(sys_)
        assert art.method == "pod" and art.system.n == 4


class TestOperatorInference:
    def _synthetic(self, rng, K=400):
        # a known 2-D quadratic system with inputs and exact derivatives
        A = np.array([[-1.0, 0.3], [0.1, -2.0]])
        H = np.array([[0.2, -0.1, -0.1, 0.05],
                      [0.0, 0.15, 0.15, -0.3]])
        B = np.array([[1.0], [0.5]])
        t = np.linspace(0.0, 4.0, K)
        X = np.vstack([np.sin(3 * t) + 0.3 * np.cos(7 * t),
                       np.cos(2 * t) - 0.2 * np.sin(5 * t)])
        U = rng.standard_normal((1, K))
        Xdot = A @ X + np.column_stack([H @ np.kron(x, x) for x in X.T]) + B @ U
        snap = sim.SnapshotSet(t=t, X=X, U=U, Xdot=Xdot)
        return snap, A, H, B

    def test_exact_recovery(self, rng):
        snap, A, H, B = self._synthetic(rng)
        learned = operator_inference(snap, np.eye(2))
        assert np.allclose(learned.A, A, atol=1e-8)
        assert np.allclose(learned.B, B, atol=1e-8)
        # compare symmetrized quadratic operators
        Hs = QBSystem(E=np.eye(2), A=A, H=H).H
        assert np.allclose(learned.H, Hs, atol=1e-8)

    def test_zero_snapshots_rejected(self):
        snap = sim.SnapshotSet(t=np.linspace(0, 1, 10), X=np.zeros((3, 10)))
        with pytest.raises(DenseLAError, match="rank"):
            operator_inference(snap, np.eye(3))

    def test_rank_deficiency_reports_condition(self, rng):
        # duplicated state rows make the regressors collinear
        t = np.linspace(0, 1, 50)
        x = np.sin(5 * t)
        X = np.vstack([x, x])
        snap = sim.SnapshotSet(t=t, X=X, Xdot=np.vstack([np.cos(5 * t)] * 2))
        with pytest.raises(DenseLAError, match="condition|rank"):
            operator_inference(snap, np.eye(2))
        # ridge regularization makes it solvable
        learned = operator_inference(snap, np.eye(2), reg=1e-6)
        assert learned.n == 2

    def test_residual_nonincreasing_in_n(self, rng):
        # nested bases on fixed data: larger n fits no worse
        n_full = 6
        sys_ = random_stable_qb(n_full, rng, h_scale=0.1, e_perturb=0.0)
        x0 = 0.5 * rng.standard_normal(n_full)
        traj = sim.integrate(sys_, x0, t_f=3.0)
        snap = sim.sample_snapshots(traj, 0.01)
        snap = sim.estimate_derivatives(snap)
        U, _, _ = np.linalg.svd(snap.X, full_matrices=False)
        prev = np.inf
        for k in (1, 2, 3, 4):
            V = U[:, :k]
            learned = operator_inference(snap, V, reg=1e-8)
            Xr = V.T @ snap.X
            pred = (learned.A @ Xr
                    + np.column_stack([learned.H @ np.kron(x, x)
                                       for x in Xr.T]))
            res = np.linalg.norm(V.T @ snap.Xdot - pred)
            assert res <= prev + 1e-9
            prev = res

    def test_estimator_front_end(self, rng):
        snap, A, H, B = self._synthetic(rng)
        est = OperatorInference(n=2).fit(snap)
        assert est.stable_ is True
        assert est.reconstruction_error_ <= 1e-10
        assert est.artifact_.method == "opinf"

    def test_kron2c_and_expansion_consistent(self, rng):
        n = 4
        X = rng.standard_normal((n, 7))
        Hc = rng.standard_normal((n, n * (n + 1) // 2))
        H = expand_h_from_compact(Hc, n)
        for k in range(7):
            x = X[:, k]
            assert np.allclose(H @ np.kron(x, x), Hc @ kron2c(x[:, None])[:, 0],
                               atol=1e-12)


class TestArtifactIO:
    def test_save_load_roundtrip(self, rng, tmp_path):
        sys_ = _random_io_system(5, rng)
        art = lqg_balanced_truncation(sys_, 3)
        path = tmp_path / "rom.json"
        art.save(path)
        back = ROMArtifact.load(path)
        assert back.method == "lqgbt"
        assert np.allclose(back.T, art.T, atol=1e-15)
        assert np.allclose(back.system.A, art.system.A, atol=1e-15)
        assert np.allclose(back.sigma, art.sigma, atol=1e-15)
