import math

import numpy as np
import pytest

from cavityfeedback.fock import (
    DensityMatrix,
    FockSpace,
    Ket,
    annihilation,
    basis_ket,
    displacement_cache,
    fidelity_pure,
)
from cavityfeedback.lyapunov import (
    STATUS_CLAMPED,
    STATUS_NEWTON,
    STATUS_REJECTED,
    build_context,
    expansion_coeffs,
    hessian_eigenvalues,
    lyapunov_policy,
    lyapunov_value,
    newton_alpha,
    quadratic_model,
)
from cavityfeedback.qfilter import FilterState, init_episode, ideal_step
from cavityfeedback.measurement import build_ops, build_setup

from conftest import benchmark_target, random_mixed_purity_density, random_ket, two_comp_ket


@pytest.fixture(scope="module")
def ctx30():
    space = FockSpace(30)
    return build_context(benchmark_target(space), space, 0.3)


class TestBuildContext:
    def test_upsilon_for_vacuum_target(self, space12):
        ctx = build_context(basis_ket(space12, 0), space12, 0.3)
        expected = np.diag([0.0] + [1.0] * 11)
        assert np.abs(ctx.upsilon.entries - expected).max() < 1e-15

    def test_commutators_match_direct_products(self, space12):
        # oracle: rebuild every commutator from independently constructed matrices
        psi = two_comp_ket(space12, 1, 4).amplitudes
        ups = np.eye(12) - np.outer(psi, psi.conj())
        a = np.diag(np.sqrt(np.arange(1.0, 12.0)), 1)
        c = a @ ups - ups @ a
        g = a @ c - c @ a
        e = a.conj().T @ c - c @ a.conj().T
        ctx = build_context(two_comp_ket(space12, 1, 4), space12, 0.3)
        assert np.abs(ctx.c_op.entries - c).max() < 1e-14
        assert np.abs(ctx.g_op.entries - g).max() < 1e-14
        assert np.abs(ctx.e_op.entries - e).max() < 1e-14

    def test_value_at_target_is_zero(self, ctx30):
        assert abs(lyapunov_value(ctx30, ctx30.target.to_density())) < 1e-14

    def test_alpha_max_guard(self, space12):
        with pytest.raises(ValueError):
            build_context(basis_ket(space12, 0), space12, 0.0)


class TestLyapunovValue:
    def test_orthogonal_pure_state(self, ctx30, space30):
        rho = two_comp_ket(space30, 0, 3).to_density()
        assert abs(lyapunov_value(ctx30, rho) - 1.0) < 1e-12

    def test_one_minus_fidelity(self, ctx30, space30):
        rng = np.random.default_rng(1)
        for _ in range(25):
            rho = random_mixed_purity_density(rng, space30)
            v = lyapunov_value(ctx30, rho)
            f = fidelity_pure(rho, ctx30.target)
            assert abs(v - (1.0 - f)) < 1e-10


class TestExpansionCoeffs:
    def test_chi_is_real(self, ctx30, space30):
        rng = np.random.default_rng(2)
        from cavityfeedback.lyapunov import _trace_prod

        for _ in range(50):
            rho = random_mixed_purity_density(rng, space30)
            raw_chi = _trace_prod(ctx30.e_op.entries, rho.entries)
            assert abs(raw_chi.imag) < 1e-10

    def test_second_order_term_is_real(self, ctx30, space30):
        rng = np.random.default_rng(3)
        from cavityfeedback.lyapunov import _trace_prod

        for _ in range(25):
            rho = random_mixed_purity_density(rng, space30)
            gamma = _trace_prod(ctx30.g_op.entries, rho.entries)
            chi = _trace_prod(ctx30.e_op.entries, rho.entries)
            alpha = complex(*rng.uniform(-0.5, 0.5, 2))
            t2 = alpha**2 * np.conj(gamma) + np.conj(alpha) ** 2 * gamma - 2 * abs(alpha) ** 2 * chi
            assert abs(t2.imag) < 1e-10

    def test_target_is_local_minimum(self, ctx30):
        zeta, gamma, chi = expansion_coeffs(ctx30, ctx30.target.to_density())
        assert abs(zeta) < 1e-12
        rng = np.random.default_rng(4)
        for _ in range(50):
            alpha = 1e-2 * np.exp(1j * rng.uniform(0, 2 * math.pi))
            assert quadratic_model(zeta, gamma, chi, alpha) >= -1e-15

    def test_first_order_residual(self, ctx30, space30):
        # |dV - T1| = O(|alpha|^2), well under 1e-6 at |alpha| = 1e-4
        rng = np.random.default_rng(5)
        cache = displacement_cache(space30)
        for _ in range(100):
            rho = random_mixed_purity_density(rng, space30)
            zeta, _, _ = expansion_coeffs(ctx30, rho)
            alpha = 1e-4 * np.exp(1j * rng.uniform(0, 2 * math.pi))
            dv = lyapunov_value(ctx30, cache.apply_to_density(rho, alpha)) - lyapunov_value(
                ctx30, rho
            )
            t1 = 2 * (alpha * np.conj(zeta)).real
            assert abs(dv - t1) < 1e-6

    def test_second_order_residual(self, ctx30, space30):
        rng = np.random.default_rng(6)
        cache = displacement_cache(space30)
        for _ in range(100):
            rho = random_mixed_purity_density(rng, space30)
            zeta, gamma, chi = expansion_coeffs(ctx30, rho)
            alpha = 1e-3 * np.exp(1j * rng.uniform(0, 2 * math.pi))
            dv = lyapunov_value(ctx30, cache.apply_to_density(rho, alpha)) - lyapunov_value(
                ctx30, rho
            )
            assert abs(dv - quadratic_model(zeta, gamma, chi, alpha)) < 1e-6


class TestNewtonAlpha:
    def test_gamma_zero_specialization(self, space12):
        # states with only +-1 coherences have gamma = 0 exactly
        ctx = build_context(basis_ket(space12, 0), space12, 0.5)
        amps = np.zeros(12, dtype=complex)
        amps[2] = amps[3] = 1 / math.sqrt(2)
        rho = Ket(amps, space12).to_density()
        zeta, gamma, chi = expansion_coeffs(ctx, rho)
        assert abs(gamma) < 1e-14
        alpha, status = newton_alpha(ctx, rho)
        if status == STATUS_NEWTON:
            assert abs(alpha - zeta / chi) < 1e-12

    def test_target_gives_zero(self, ctx30):
        alpha, _ = newton_alpha(ctx30, ctx30.target.to_density())
        assert abs(alpha) == 0.0

    def test_descent_property(self, ctx30, space30):
        rng = np.random.default_rng(7)
        cache = displacement_cache(space30)
        checked = 0
        for _ in range(1000):
            rho = random_mixed_purity_density(rng, space30)
            alpha, status = newton_alpha(ctx30, rho)
            if status != STATUS_NEWTON:
                continue
            checked += 1
            v0 = lyapunov_value(ctx30, rho)
            v1 = lyapunov_value(ctx30, cache.apply_to_density(rho, alpha))
            assert v1 < v0
        assert checked > 30

    def test_clamp_is_radial(self, ctx30, space30):
        rng = np.random.default_rng(8)
        found = 0
        for _ in range(500):
            rho = random_mixed_purity_density(rng, space30)
            zeta, gamma, chi = expansion_coeffs(ctx30, rho)
            if not chi < -abs(gamma):
                continue
            raw = (chi * zeta + gamma * np.conj(zeta)) / (chi**2 - abs(gamma) ** 2)
            alpha, status = newton_alpha(ctx30, rho)
            if status == STATUS_CLAMPED:
                found += 1
                assert abs(abs(alpha) - 0.3) < 1e-12
                assert abs(np.angle(alpha) - np.angle(raw)) < 1e-12
        assert found > 5

    def test_grid_oracle_sample(self, ctx30, space30):
        # the analytic Newton point must beat an exhaustive 101x101 search of
        # the quadratic model (any algebra error in the update rule fails this)
        rng = np.random.default_rng(9)
        grid = np.linspace(-0.3, 0.3, 101)
        alphas = (grid[None, :] + 1j * grid[:, None]).ravel()
        checked = 0
        for _ in range(200):
            if checked >= 25:
                break
            rho = random_mixed_purity_density(rng, space30)
            alpha, status = newton_alpha(ctx30, rho)
            if status != STATUS_NEWTON or abs(alpha) < 1e-9:
                continue
            checked += 1
            zeta, gamma, chi = expansion_coeffs(ctx30, rho)
            q_newton = quadratic_model(zeta, gamma, chi, alpha)
            q_grid = (
                2.0 * (alphas * np.conj(zeta)).real
                + (alphas**2 * np.conj(gamma)).real
                - np.abs(alphas) ** 2 * chi
            )
            best = float(q_grid.min())
            assert best < 0.0
            assert q_newton <= 0.95 * best + 1e-15
        assert checked >= 10


class TestHessian:
    def test_eigenvalue_consistency(self, ctx30, space30):
        rng = np.random.default_rng(10)
        for _ in range(50):
            rho = random_mixed_purity_density(rng, space30)
            _, gamma, chi = expansion_coeffs(ctx30, rho)
            g, h = gamma.real, gamma.imag
            q = np.array([[g - chi, h], [h, -(g + chi)]])
            direct = np.sort(np.linalg.eigvalsh(q))
            expected = np.sort(hessian_eigenvalues(gamma, chi))
            assert np.abs(direct - expected).max() < 1e-10


class TestPolicyBehavior:
    def test_filter_at_target_returns_zero(self, ctx30, space30):
        state = FilterState(rho_est=ctx30.target.to_density())
        assert abs(lyapunov_policy(ctx30, state)) == 0.0

    def test_first_post_measurement_alpha_hits_clamp(self, ctx30, space30):
        # the optimized maximum displacement is what the controller applies
        # right after the first readout of the benchmark sequence
        setup = build_setup(3, m_target=1)
        ops = build_ops(setup, space30)
        state = init_episode(benchmark_target(space30), space30, setup)
        adjust = lyapunov_policy(ctx30, state)
        from cavityfeedback.qfilter import displace_only

        state = displace_only(state, adjust)
        for outcome in "ge":
            stepped = ideal_step(state, 0.0, outcome, ops)
            alpha, status = newton_alpha(ctx30, stepped.rho_est)
            assert status == STATUS_CLAMPED
            assert abs(abs(alpha) - 0.3) < 1e-12

    def test_out_of_subspace_applies_maximum_displacement(self, ctx30, space30):
        rho = two_comp_ket(space30, 0, 3).to_density()
        alpha, status = newton_alpha(ctx30, rho)
        assert abs(abs(alpha) - 0.3) < 1e-12
        # and the full quadratic-model step actually lowers V
        cache = displacement_cache(space30)
        assert lyapunov_value(ctx30, cache.apply_to_density(rho, alpha)) < lyapunov_value(
            ctx30, rho
        )
