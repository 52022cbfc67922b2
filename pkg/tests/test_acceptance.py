"""Acceptance suite: every release criterion at its pinned tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per criterion.
"""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from cavityfeedback.analysis import enumerate_tree, sample_tree_trajectories
from cavityfeedback.channels import NoiseParams, true_decay_step
from cavityfeedback.cli import main
from cavityfeedback.config import ExperimentConfig, make_preset_target
from cavityfeedback.errors import ZeroProbabilityOutcome
from cavityfeedback.fock import (
    DensityMatrix,
    FockSpace,
    Ket,
    basis_ket,
    displacement_cache,
    vacuum,
)
from cavityfeedback.lyapunov import (
    STATUS_NEWTON,
    build_context,
    expansion_coeffs,
    lyapunov_value,
    newton_alpha,
    quadratic_model,
)
from cavityfeedback.measurement import (
    MeasurementSetup,
    back_action,
    build_ops,
    build_setup,
    frame_correction,
    verify_stabilizable,
)
from cavityfeedback.policy import reward
from cavityfeedback.qfilter import alpha_guess
from cavityfeedback.simulator import (
    EpisodeConfig,
    EpisodeEngine,
    LyapunovController,
    free_evolution_reference,
    run_batch,
)

from conftest import benchmark_target, two_comp_ket

SPACE = FockSpace(30)


def report(name, ok, detail=""):
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"{name} failed: {detail}"


def random_subspace_density(rng, space, m, delta_n):
    idx = np.flatnonzero(space.levels % delta_n == m)
    amps = np.zeros(space.dim, dtype=complex)
    amps[idx] = rng.standard_normal(idx.size) + 1j * rng.standard_normal(idx.size)
    return Ket(amps, space).normalize().to_density()


def episode_sampled_states(n_states, seed=0):
    cfg = ExperimentConfig()
    episode_cfg = cfg.build_episode_config()
    controller = cfg.build_controller()
    states = []
    s = seed
    while len(states) < n_states:
        engine = EpisodeEngine(replace(episode_cfg, seed=s))
        engine.reset()
        engine.adjustment_cycle(controller(engine.filter_state))
        for _ in range(40):
            engine.feedback_cycle(controller(engine.filter_state))
            states.append(engine.filter_state.rho_est)
        s += 1
    return states[:n_states], controller.ctx


def test_povm_completeness():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(50):
        delta_n = int(rng.integers(1, 9))
        parity = "odd" if delta_n % 2 else "even"
        setup = MeasurementSetup(
            delta_n=delta_n,
            phi0=(4.0 if parity == "odd" else 2.0) * math.pi / delta_n,
            phi_r=float(rng.uniform(0.0, 2.0 * math.pi)),
            parity=parity,
            phase_tracking=parity == "even",
        )
        ops = build_ops(setup, SPACE)
        total = (
            ops.m_g.entries.conj().T @ ops.m_g.entries
            + ops.m_e.entries.conj().T @ ops.m_e.entries
        )
        worst = max(worst, float(np.abs(total - np.eye(30)).max()))
    elapsed = time.perf_counter() - start
    report(
        "povm-completeness",
        worst < 1e-14 and elapsed < 1.0,
        f"(worst defect {worst:.2e}, {elapsed:.2f} s)",
    )


def test_stabilizability_of_preset_states():
    start = time.perf_counter()
    worst = 0.0
    for spec in ("two-comp:1,4", "two-comp:0,4", "binomial-0369", "cat3", "cat4"):
        cfg = ExperimentConfig(dim=30, target_preset=spec)
        ok, residuals = verify_stabilizable(cfg.build_target(), cfg.build_setup())
        worst = max(worst, max(residuals.values()))
        assert ok, spec
    counter_ok, counter_res = verify_stabilizable(
        two_comp_ket(SPACE, 0, 1), build_setup(3, m_target=1)
    )
    elapsed = time.perf_counter() - start
    report(
        "stabilizability",
        worst < 1e-10 and not counter_ok and elapsed < 1.0,
        f"(worst residual {worst:.2e}, counterexample residual "
        f"{max(counter_res.values()):.2e}, {elapsed:.2f} s)",
    )


def test_zeno_fixed_points():
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(1000):
        delta_n = int(rng.integers(2, 6))
        m = int(rng.integers(0, delta_n))
        setup = build_setup(delta_n, m_target=m)
        ops = build_ops(setup, SPACE)
        frame = frame_correction(setup, SPACE)
        rho = random_subspace_density(rng, SPACE, m, delta_n)
        state = rho
        for _ in range(100):
            outcome = "g" if rng.random() < 0.5 else "e"
            try:
                state = back_action(ops, state, outcome)
            except ZeroProbabilityOutcome:
                continue
            state = DensityMatrix(
                frame[:, None] * state.entries * frame[None, :], SPACE
            )
            dev = float(np.abs(state.entries - rho.entries).max())
            worst = max(worst, dev)
            assert dev < 1e-10
    report("zeno-fixed-point", worst < 1e-10, f"(worst per-step deviation {worst:.2e})")


def test_noiseless_filter_exactness():
    worst = 0.0
    for spec, n_eps in (("two-comp:1,4", 120), ("two-comp:0,4", 40), ("binomial-0369", 40)):
        cfg = ExperimentConfig(dim=30, target_preset=spec)
        episode_cfg = cfg.build_episode_config()
        controller = cfg.build_controller()
        for s in range(n_eps):
            engine = EpisodeEngine(replace(episode_cfg, seed=s))
            engine.reset()
            engine.adjustment_cycle(controller(engine.filter_state))
            for _ in range(50):
                if engine.guard_tripped():
                    break
                engine.feedback_cycle(controller(engine.filter_state))
                truth = np.outer(
                    engine.true_ket.amplitudes, engine.true_ket.amplitudes.conj()
                )
                gap = float(np.abs(engine.filter_state.rho_est.entries - truth).max())
                worst = max(worst, gap)
    report("noiseless-filter-exactness", worst < 1e-9, f"(max gap {worst:.2e} over 200 episodes)")


def test_lyapunov_expansion_orders():
    rng = np.random.default_rng(303)
    ctx = build_context(benchmark_target(SPACE), SPACE, 0.3)
    cache = displacement_cache(SPACE)
    eps_list = np.array([1e-3, 3e-4, 1e-4])
    directions = np.exp(1j * np.array([0.3, 1.7, 2.9, 4.6]))
    slopes1, slopes2 = [], []
    for _ in range(100):
        g = rng.standard_normal((30, 30)) + 1j * rng.standard_normal((30, 30))
        mixed = g @ g.conj().T
        mixed /= np.trace(mixed).real
        psi = rng.standard_normal(30) + 1j * rng.standard_normal(30)
        psi /= np.linalg.norm(psi)
        w = rng.uniform(0.0, 0.5)
        rho = DensityMatrix((1 - w) * np.outer(psi, psi.conj()) + w * mixed, SPACE)
        zeta, gamma, chi = expansion_coeffs(ctx, rho)
        v0 = lyapunov_value(ctx, rho)
        r1 = np.zeros(len(eps_list))
        r2 = np.zeros(len(eps_list))
        for k, eps in enumerate(eps_list):
            for u in directions:
                alpha = eps * u
                dv = lyapunov_value(ctx, cache.apply_to_density(rho, alpha)) - v0
                r1[k] += abs(dv - 2.0 * (alpha * np.conj(zeta)).real)
                r2[k] += abs(dv - quadratic_model(zeta, gamma, chi, alpha))
        slopes1.append(np.polyfit(np.log(eps_list), np.log(r1), 1)[0])
        slopes2.append(np.polyfit(np.log(eps_list), np.log(r2), 1)[0])
    s1 = np.array(slopes1)
    s2 = np.array(slopes2)
    ok = (np.abs(s1 - 2.0) < 0.1).all() and (np.abs(s2 - 3.0) < 0.15).all()
    report(
        "lyapunov-expansion-orders",
        ok,
        f"(T1 residual order {s1.min():.3f}..{s1.max():.3f}, "
        f"q residual order {s2.min():.3f}..{s2.max():.3f}; 100 states)",
    )


def test_newton_optimality_against_grid_oracle():
    # The grid oracle exhaustively searches the quadratic model on the
    # alpha_max disk; the analytic Newton point must match its best decrease
    # within 5% whenever the step is unclamped. Exact descent of those steps
    # is asserted alongside (the controller is local by design: far from the
    # target, globally better displacements beyond the model's trust region
    # exist and are documented behavior).
    start = time.perf_counter()
    states, ctx = episode_sampled_states(120, seed=11)
    rng = np.random.default_rng(404)
    for _ in range(80):
        psi = rng.standard_normal(30) + 1j * rng.standard_normal(30)
        psi /= np.linalg.norm(psi)
        g = rng.standard_normal((30, 30)) + 1j * rng.standard_normal((30, 30))
        mixed = g @ g.conj().T
        mixed /= np.trace(mixed).real
        w = rng.uniform(0.0, 0.1)
        states.append(DensityMatrix((1 - w) * np.outer(psi, psi.conj()) + w * mixed, SPACE))
    grid = np.linspace(-0.3, 0.3, 201)
    alphas = (grid[None, :] + 1j * grid[:, None]).ravel()
    cache = displacement_cache(SPACE)
    n_newton = 0
    worst_ratio = np.inf
    for rho in states:
        alpha, status = newton_alpha(ctx, rho)
        if status != STATUS_NEWTON or abs(alpha) < 1e-9:
            continue
        n_newton += 1
        zeta, gamma, chi = expansion_coeffs(ctx, rho)
        q_newton = quadratic_model(zeta, gamma, chi, alpha)
        q_grid = (
            2.0 * (alphas * np.conj(zeta)).real
            + (alphas**2 * np.conj(gamma)).real
            - np.abs(alphas) ** 2 * chi
        )
        best = float(q_grid.min())
        assert q_newton <= 0.95 * best + 1e-15
        if best < -1e-12:
            # steps below the grid pitch legitimately beat a best of ~0
            worst_ratio = min(worst_ratio, q_newton / best)
        v0 = lyapunov_value(ctx, rho)
        assert lyapunov_value(ctx, cache.apply_to_density(rho, alpha)) < v0
    elapsed = time.perf_counter() - start
    report(
        "newton-grid-optimality",
        n_newton >= 40 and worst_ratio >= 0.95 and elapsed < 120.0,
        f"({n_newton} newton cases of 200, worst decrease ratio {worst_ratio:.4f}, "
        f"{elapsed:.1f} s)",
    )


def test_lyapunov_benchmark_fidelity():
    start = time.perf_counter()
    cfg = ExperimentConfig()  # benchmark (|1>+|4>)/sqrt(2), alpha_max 0.3
    episode_cfg = cfg.build_episode_config()
    controller = cfg.build_controller()
    records = run_batch(episode_cfg, controller, 600, workers=2)
    finals = np.array([r.final_true_fidelity for r in records])
    pops = np.array([r.subspace_pops[-1][1] for r in records])
    elapsed = time.perf_counter() - start
    median_f = float(np.median(finals))
    median_p = float(np.median(pops))
    report(
        "lyapunov-benchmark",
        median_f > 0.90 and median_p > 0.98 and elapsed < 600.0,
        f"(median final fidelity {median_f:.4f}, median subspace population "
        f"{median_p:.4f}, {elapsed:.1f} s, 600 episodes)",
    )


def test_decay_physics():
    # jump-unraveled coherent state vs the analytic damped trajectory
    noise = NoiseParams(t_cav=1e-3, t_cycle=1e-6)
    alpha0 = 1.2
    steps = 500
    lev = SPACE.levels
    log_fact = np.cumsum(np.concatenate([[0.0], np.log(np.arange(1.0, 30.0))]))
    amps = np.exp(-0.5 * alpha0**2 + lev * np.log(alpha0 + 0j) - 0.5 * log_fact)
    finals = np.empty(10_000)
    for i in range(10_000):
        rng = np.random.default_rng(500_000 + i)
        psi = Ket(amps, SPACE).normalize()
        for _ in range(steps):
            psi, _ = true_decay_step(psi, noise, rng)
        finals[i] = float(np.dot(lev, np.abs(psi.amplitudes) ** 2))
    analytic = alpha0**2 * math.exp(-steps * noise.kappa_dt)
    sem = finals.std(ddof=1) / math.sqrt(len(finals))
    mc_ok = abs(finals.mean() - analytic) < 3 * sem + 1e-9

    curve = free_evolution_reference(basis_ket(FockSpace(12), 1), noise, 500)
    t = np.arange(501) * noise.t_cycle
    ref_err = float(np.abs(curve - np.exp(-t / noise.t_cav)).max())
    report(
        "decay-physics",
        mc_ok and ref_err < 1e-4,
        f"(MC mean photon {finals.mean():.8f} vs {analytic:.8f}, sem {sem:.2e}; "
        f"free-evolution error {ref_err:.2e})",
    )


def test_tree_monte_carlo_equivalence():
    start = time.perf_counter()
    target = benchmark_target(SPACE)
    setup = build_setup(3, m_target=1)
    ctx = build_context(target, SPACE, 0.3)
    controller = LyapunovController(ctx)
    cache = displacement_cache(SPACE)
    initial = cache.apply_to_ket(vacuum(SPACE), alpha_guess(target)).to_density()

    tree = enumerate_tree(initial, controller, setup, 10, target)
    prob_sum = tree.leaf_probability_sum()
    tree_mean = tree.weighted_mean_final_fidelity()

    samples = sample_tree_trajectories(
        initial, controller, setup, 10, target, 100_000, seed=77
    )
    sem = samples.std(ddof=1) / math.sqrt(len(samples))
    gap = abs(samples.mean() - tree_mean)
    elapsed = time.perf_counter() - start
    report(
        "tree-monte-carlo-equivalence",
        abs(prob_sum - 1.0) < 1e-8 and gap < 3 * sem and elapsed < 300.0,
        f"(leaf prob sum 1{prob_sum - 1.0:+.2e}, tree mean {tree_mean:.6f}, "
        f"MC mean {samples.mean():.6f}, 3*sem {3 * sem:.2e}, {elapsed:.1f} s)",
    )


def test_reward_function():
    exact_five = reward(1.0) == 5.0
    grid = np.linspace(0.0, 1.0, 10_001)
    values = np.array([reward(f) for f in grid])
    monotone = bool((np.diff(values) > 0.0).all())
    report("reward-function", exact_five and monotone, "(r(1)=5 exact, 10001-point grid strict)")


def test_cli_determinism(tmp_path):
    config = {
        "dim": 12,
        "target": {"preset": "two-comp:1,4"},
        "setup": {"delta_n": 3},
        "noise": {
            "t_cav": 1e-3,
            "t_cycle": 1e-6,
            "eta_e_given_g": 0.01,
            "eta_g_given_e": 0.02,
        },
        "episode": {"max_cycles": 12},
        "controller": {"kind": "lyapunov", "alpha_max": 0.3},
        "run": {"n_traj": 10, "seed": 4242, "workers": 1},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config))
    out1, out2 = tmp_path / "w1", tmp_path / "w2"
    assert main(["run", "--config", str(cfg_path), "--out", str(out1), "--workers", "1"]) == 0
    assert main(["run", "--config", str(cfg_path), "--out", str(out2), "--workers", "3"]) == 0
    identical = all(
        (out1 / name).read_bytes() == (out2 / name).read_bytes()
        for name in ("summary.csv", "final_fidelities.csv", "records.json", "summary.json")
    )
    report("seeded-determinism", identical, "(byte-identical artifacts, workers 1 vs 3)")
