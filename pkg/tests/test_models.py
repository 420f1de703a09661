import numpy as np
import pytest
from scipy.integrate import solve_ivp

from qbstab import models, qbsys, sim
from qbstab.models import (
    BurgersFDConfig,
    BurgersFEMConfig,
    FHNConfig,
    build_burgers_fd,
    build_burgers_fem,
    build_fhn_lifted,
    deflate_constant_mode,
    fhn_cubic_semidiscretization,
    fhn_input_signal,
)


class TestBurgersFEM:
    def test_default_dimensions(self, burgers_fem):
        sys_, x0 = burgers_fem
        assert sys_.n == 101 and sys_.m == 3
        assert np.array_equal(sys_.C, np.eye(101))
        assert x0.shape == (101,)

    def test_mass_matrix_row_pattern(self, burgers_fem):
        sys_, _ = burgers_fem
        h = 1.0 / 101
        # linear FEM mass rows: h * [1/6, 4/6, 1/6], row sum h
        assert np.allclose(np.sum(sys_.E, axis=1), h, atol=1e-14)
        assert np.isclose(sys_.E[3, 3], 4 * h / 6)
        assert np.isclose(sys_.E[3, 4], h / 6)

    def test_constant_state_has_zero_convection(self, burgers_fem):
        sys_, _ = burgers_fem
        c = 0.7 * np.ones(sys_.n)
        assert np.linalg.norm(sys_.quad(c)) <= 1e-12

    def test_constant_near_nullspace_of_a(self, burgers_fem):
        sys_, _ = burgers_fem
        one = np.ones(sys_.n)
        assert np.linalg.norm(sys_.A @ one) <= 1e-10 * np.linalg.norm(sys_.A)

    def test_weighted_mean_is_conserved(self, burgers_fem):
        sys_, x0 = burgers_fem
        # d/dt (1^T E x) = 1^T (A x + H(x kron x)) = 0
        rhs = sys_.A @ x0 + sys_.quad(x0)
        assert abs(np.sum(rhs)) <= 1e-12

    def test_semidiscrete_convergence_rate(self):
        # spatial error on a smooth profile drops ~4x per grid refinement
        def solution_on_grid(N, t_f=0.05):
            cfg = BurgersFEMConfig(N=N, epsilon=0.05)
            sys_, _ = build_burgers_fem(cfg)
            xi = np.arange(N) / N
            x0 = np.sin(2 * np.pi * xi)
            traj = sim.integrate(sys_, x0, t_f=t_f,
                                 opts=sim.IntegrateOptions(rtol=1e-10,
                                                           atol=1e-12))
            return xi, traj.x_end

        xi_ref, x_ref = solution_on_grid(128)
        errs = []
        for N in (16, 32):
            xi, x = solution_on_grid(N)
            ref = np.interp(xi, xi_ref, x_ref, period=1.0)
            errs.append(np.sqrt(np.mean((x - ref) ** 2)))
        assert errs[0] / errs[1] > 2.5  # ~4 for a second-order method

    def test_input_loads_partition_unity(self, burgers_fem):
        sys_, _ = burgers_fem
        # the three characteristic loads sum to the load of u identical 1
        total = np.sum(sys_.B, axis=1)
        h = 1.0 / 101
        assert np.allclose(total, h, atol=1e-12)

    def test_deflated_system_is_stable(self, burgers_fem):
        sys_, _ = burgers_fem
        red, Z = deflate_constant_mode(sys_)
        assert red.n == sys_.n - 1
        assert np.abs(np.ones(sys_.n) @ Z).max() < 1e-12
        At = red.solve_E(np.asarray(red.A))
        assert np.max(np.linalg.eigvals(At).real) < -1e-3

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BurgersFEMConfig(N=2)
        with pytest.raises(ValueError):
            BurgersFEMConfig(epsilon=0.0)


@pytest.fixture(scope="module")
def small():
    cfg = FHNConfig(grid=12)
    sys_, u = build_fhn_lifted(cfg)
    return cfg, sys_, u


class TestFHN:
    def test_dimension_and_mass_matrix(self, small):
        cfg, sys_, _ = small
        g = cfg.grid
        assert sys_.n == 3 * g == cfg.dim
        E = np.asarray(sys_.E)
        assert np.allclose(E[:g, :g], cfg.epsilon * np.eye(g))
        assert np.allclose(E[g:, g:], np.eye(2 * g))

    def test_default_dimension_600(self):
        assert FHNConfig().dim == 600

    def test_input_matrix_pattern(self, small):
        cfg, sys_, _ = small
        g = cfg.grid
        B = np.asarray(sys_.B)
        assert B[0, 0] == 1.0
        assert np.allclose(B[:g, 1], cfg.c)     # v rows: constant channel
        assert np.allclose(B[g:2 * g, 1], cfg.c)  # w rows too

    def test_zero_state_forcing_pattern(self, small):
        cfg, sys_, _ = small
        g = cfg.grid
        f = qbsys.rhs(sys_, np.zeros(sys_.n), [0.0, 1.0])
        # v rows: c / eps (E folds the eps), w rows: c, z rows: 0
        assert np.allclose(f[:g], cfg.c / cfg.epsilon)
        assert np.allclose(f[g:2 * g], cfg.c)
        assert np.allclose(f[2 * g:], 0.0)

    def test_lifting_consistency_pointwise(self, small):
        # rhs of the lifted system at (v, w, v^2) matches (v', w', 2 v v')
        cfg, sys_, _ = small
        g = cfg.grid
        rhs_cubic, _ = fhn_cubic_semidiscretization(cfg)
        rng = np.random.default_rng(3)
        for t in (0.0, 0.2, 1.0):
            v = 0.5 * rng.standard_normal(g)
            w = 0.5 * rng.standard_normal(g)
            x = np.concatenate([v, w, v * v])
            dcub = rhs_cubic(t, np.concatenate([v, w]))
            dv, dw = dcub[:g], dcub[g:]
            dlift = qbsys.rhs(sys_, x, fhn_input_signal(t))
            assert np.allclose(dlift[:g], dv, rtol=1e-9, atol=1e-9)
            assert np.allclose(dlift[g:2 * g], dw, rtol=1e-9, atol=1e-9)
            assert np.allclose(dlift[2 * g:], 2 * v * dv, rtol=1e-9, atol=1e-7)

    def test_lifting_consistency_along_trajectory(self, small):
        cfg, sys_, _ = small
        g = cfg.grid
        rhs_cubic, jac = fhn_cubic_semidiscretization(cfg)
        res = solve_ivp(rhs_cubic, (0.0, 1.0), np.zeros(2 * g), method="BDF",
                        jac=jac, rtol=1e-10, atol=1e-12)
        assert res.status == 0
        v_end, w_end = res.y[:g, -1], res.y[g:, -1]
        traj = sim.integrate(sys_, np.zeros(sys_.n),
                             u_signal=fhn_input_signal, t_f=1.0)
        z_end = traj.X[2 * g:, -1]
        scale = max(np.linalg.norm(v_end**2), 1e-12)
        assert np.linalg.norm(z_end - v_end**2) <= 1e-6 * max(scale, 1.0)
        assert np.allclose(traj.X[:g, -1], v_end, atol=1e-6)


class TestBurgersFD:
    def test_zero_state_zero_input(self):
        sys_ = build_burgers_fd(BurgersFDConfig(N=16))
        assert np.linalg.norm(qbsys.rhs(sys_, np.zeros(16), [0.0])) == 0.0

    def test_diffusion_stencil(self):
        cfg = BurgersFDConfig(N=16)
        sys_ = build_burgers_fd(cfg)
        h = 1.0 / 17
        A = np.asarray(sys_.A)
        assert np.isclose(A[5, 5], -2 * cfg.epsilon / h**2)
        assert np.isclose(A[5, 6], cfg.epsilon / h**2)

    def test_boundary_input_coupling(self):
        cfg = BurgersFDConfig(N=8)
        sys_ = build_burgers_fd(cfg)
        h = 1.0 / 9
        B = np.asarray(sys_.B)
        assert np.isclose(B[0, 0], cfg.epsilon / h**2)
        assert np.isclose(B[-1, 0], -cfg.epsilon / h**2)
        N1 = np.asarray(sys_.N[0])
        assert np.isclose(N1[0, 0], 1.0 / (2 * h))
        assert np.isclose(N1[-1, -1], 1.0 / (2 * h))

    def test_interior_matches_conservative_flux(self, rng):
        # rhs row i == eps (z_{i+1} - 2 z_i + z_{i-1})/h^2 - (z_{i+1}^2 - z_{i-1}^2)/(4h)
        cfg = BurgersFDConfig(N=12)
        sys_ = build_burgers_fd(cfg)
        h = 1.0 / 13
        z = rng.standard_normal(12)
        f = qbsys.rhs(sys_, z, [0.0])
        for i in range(1, 11):
            diff = cfg.epsilon * (z[i + 1] - 2 * z[i] + z[i - 1]) / h**2
            conv = -z[i] * (z[i + 1] - z[i - 1]) / (2 * h)
            assert np.isclose(f[i], diff + conv, atol=1e-12)

    def test_periodic_skew_form_conserves_energy(self, rng):
        cfg = BurgersFDConfig(N=32, epsilon=0.0, periodic=True, form="skew")
        sys_ = build_burgers_fd(cfg)
        for _ in range(10):
            x = rng.standard_normal(32)
            e = x @ sys_.quad(x)
            assert abs(e) <= 1e-12 * np.linalg.norm(x) ** 3

    def test_manufactured_solution_refinement(self):
        # spatial truncation error on a smooth profile is O(h^2)
        def residual(N):
            cfg = BurgersFDConfig(N=N, epsilon=0.3)
            sys_ = build_burgers_fd(cfg)
            h = 1.0 / (N + 1)
            xi = h * np.arange(1, N + 1)
            z = np.sin(np.pi * xi) ** 2  # zero at both boundaries
            exact = (cfg.epsilon * (np.pi**2) * 2 * np.cos(2 * np.pi * xi)
                     - z * 2 * np.pi * np.sin(np.pi * xi) * np.cos(np.pi * xi))
            return np.max(np.abs(qbsys.rhs(sys_, z, [0.0]) - exact))

        r128, r256, r512 = residual(128), residual(256), residual(512)
        assert 3.0 < r128 / r256 < 5.0
        assert 3.0 < r256 / r512 < 5.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BurgersFDConfig(N=2)
        with pytest.raises(ValueError):
            BurgersFDConfig(epsilon=0.0)  # inviscid only for periodic tests
        with pytest.raises(ValueError):
            BurgersFDConfig(form="upwind")


class TestRegistry:
    def test_builders_by_name(self):
        sys_, x0 = models.MODEL_BUILDERS["burgers-fem"](N=11)
        assert sys_.n == 11
        sys_, _ = models.MODEL_BUILDERS["burgers-fd"](N=7)
        assert sys_.n == 7
        sys_, u = models.MODEL_BUILDERS["fhn"](grid=5)
        assert sys_.n == 15 and callable(u)
