import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qbstab import QBSystem, qbsys
from conftest import random_stable_qb


def _random_system(n, rng, **kw):
    return random_stable_qb(n, rng, **kw)


class TestConstruction:
    def test_h_is_symmetrized(self, rng):
        n = 4
        H = rng.standard_normal((n, n * n))
        sys_ = QBSystem(E=np.eye(n), A=-np.eye(n), H=H)
        H3 = sys_.H3
        assert np.allclose(H3, H3.transpose(0, 2, 1))

    def test_symmetrization_preserves_quadratic_map(self, rng):
        n = 5
        H = rng.standard_normal((n, n * n))
        sys_ = QBSystem(E=np.eye(n), A=-np.eye(n), H=H)
        for _ in range(10):
            x = rng.standard_normal(n)
            expected = H @ np.kron(x, x)
            assert np.allclose(sys_.quad(x), expected, atol=1e-12)

    def test_singular_e_rejected(self):
        E = np.diag([1.0, 0.0])
        with pytest.raises(ValueError, match="singular"):
            QBSystem(E=E, A=-np.eye(2), H=np.zeros((2, 4)))

    def test_dimension_mismatches_rejected(self):
        with pytest.raises(ValueError):
            QBSystem(E=np.eye(2), A=-np.eye(3), H=np.zeros((2, 4)))
        with pytest.raises(ValueError):
            QBSystem(E=np.eye(2), A=-np.eye(2), H=np.zeros((2, 3)))
        # bilinear terms without B
        with pytest.raises(ValueError, match="no input matrix"):
            QBSystem(E=np.eye(2), A=-np.eye(2), H=np.zeros((2, 4)),
                     N=(np.eye(2),))

    def test_arrays_read_only(self):
        sys_ = QBSystem(E=np.eye(2), A=-np.eye(2), H=np.zeros((2, 4)))
        with pytest.raises(ValueError):
            sys_.A[0, 0] = 1.0

    @given(st.integers(min_value=1, max_value=6), st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_quad_bilinearity_property(self, n, seed):
        rng = np.random.default_rng(seed)
        H = rng.standard_normal((n, n * n))
        sys_ = QBSystem(E=np.eye(n), A=-np.eye(n), H=H)
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        # symmetrized: H (x kron y) == H (y kron x)
        assert np.allclose(sys_.quad(x, y), sys_.quad(y, x), atol=1e-10)


class TestAlgebra:
    def test_rhs_matches_definition(self, rng):
        sys_ = _random_system(4, rng, m=2)
        x = rng.standard_normal(4)
        u = rng.standard_normal(2)
        f = sys_.A @ x + sys_.H @ np.kron(x, x) + sys_.B @ u
        for ui, Ni in zip(u, sys_.N):
            f += ui * (Ni @ x)
        assert np.allclose(qbsys.rhs(sys_, x, u),
                           np.linalg.solve(sys_.E, f), atol=1e-12)

    def test_jacobian_matches_finite_differences(self, rng):
        sys_ = _random_system(5, rng, m=1)
        x = rng.standard_normal(5)
        u = rng.standard_normal(1)
        J = qbsys.jacobian(sys_, x, u)
        eps = 1e-7
        Jfd = np.column_stack([
            (qbsys.rhs(sys_, x + eps * e, u) - qbsys.rhs(sys_, x - eps * e, u))
            / (2 * eps) for e in np.eye(5)])
        assert np.allclose(J, Jfd, atol=1e-6)

    def test_quad_matrix_is_quad_derivative(self, rng):
        sys_ = _random_system(4, rng)
        x = rng.standard_normal(4)
        # d/dx [H (x kron x)] = 2 H (I kron x) for symmetrized H
        eps = 1e-7
        Jfd = np.column_stack([
            (sys_.quad(x + eps * e) - sys_.quad(x - eps * e)) / (2 * eps)
            for e in np.eye(4)])
        assert np.allclose(sys_.quad_matrix(x), Jfd, atol=1e-6)

    def test_shift_equilibrium_moves_origin(self, rng):
        sys_ = _random_system(3, rng)
        # find a nonzero equilibrium by Newton from random starts
        for scale in (0.1, 0.5, 1.0, 2.0, 5.0):
            x = scale * rng.standard_normal(3)
            for _ in range(60):
                f = sys_.A @ x + sys_.quad(x)
                x = x - np.linalg.solve(sys_.A + sys_.quad_matrix(x), f)
                if not np.all(np.isfinite(x)):
                    break
            if np.all(np.isfinite(x)) and np.linalg.norm(x) > 1e-6 and \
                    np.linalg.norm(sys_.A @ x + sys_.quad(x)) < 1e-10:
                break
        else:
            pytest.fail("no nonzero equilibrium found")
        shifted = qbsys.shift_equilibrium(sys_, x)
        assert np.linalg.norm(shifted.A @ np.zeros(3)
                              + shifted.quad(np.zeros(3))) < 1e-12
        # dynamics agree: f_shifted(y) == f(x_e + y)
        y = 0.1 * rng.standard_normal(3)
        assert np.allclose(qbsys.rhs(shifted, y),
                           qbsys.rhs(sys_, x + y), atol=1e-8)

    def test_shift_rejects_non_equilibrium(self, rng):
        sys_ = _random_system(3, rng)
        with pytest.raises(ValueError, match="not an equilibrium"):
            qbsys.shift_equilibrium(sys_, np.ones(3) * 10.0)

    def test_absorb_linear_feedback(self, rng):
        sys_ = _random_system(4, rng, m=2)
        K = 0.2 * rng.standard_normal((2, 4))
        closed = qbsys.absorb_linear_feedback(sys_, K)
        assert closed.m == 0 and closed.N == ()
        for _ in range(10):
            x = rng.standard_normal(4)
            assert np.allclose(qbsys.rhs(closed, x),
                               qbsys.rhs(sys_, x, K @ x), atol=1e-10)

    def test_slices_reassemble(self, rng):
        sys_ = _random_system(3, rng)
        sl = qbsys.slices(sys_)
        assert np.array_equal(sl.assemble(), sys_.H)
        x = rng.standard_normal(3)
        via_slices = sum(x[i] * (sl.K[i] @ x) for i in range(3))
        assert np.allclose(via_slices, sys_.quad(x), atol=1e-12)

    def test_fold_mass_preserves_dynamics(self, rng):
        sys_ = _random_system(4, rng, m=1)
        folded = qbsys.fold_mass(sys_)
        assert np.array_equal(folded.E, np.eye(4))
        x = rng.standard_normal(4)
        u = rng.standard_normal(1)
        assert np.allclose(qbsys.rhs(folded, x, u),
                           qbsys.rhs(sys_, x, u), atol=1e-10)


class TestSerialization:
    def test_json_roundtrip(self, rng, tmp_path):
        sys_ = _random_system(3, rng, m=2)
        path = tmp_path / "sys.json"
        qbsys.save_json(sys_, path)
        back = qbsys.load_json(path)
        for name in ("E", "A", "H", "B", "C"):
            a, b = getattr(sys_, name), getattr(back, name)
            if a is None:
                assert b is None
            else:
                assert np.array_equal(a, b)
        assert all(np.array_equal(x, y) for x, y in zip(sys_.N, back.N))

    def test_csv_export(self, rng, tmp_path):
        M = rng.standard_normal((3, 4))
        path = tmp_path / "m.csv"
        qbsys.export_matrix_csv(M, path)
        back = np.loadtxt(path, delimiter=",")
        assert np.array_equal(back, M)
