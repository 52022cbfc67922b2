"""Feedback-loop engine: episodes, seeded batches, and the free-decay reference.

One cycle = controller displacement, (optionally) cavity decay with a jump
draw for the true state, a measurement sampled from the true state, a
possibly mis-assigned readout, and the filter update. Cycle 0 is the
pre-measurement adjustment: the controller fine-tunes the initial guess
before anything is measured.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channels import NoiseParams, lindblad_rhs, sample_readout, true_decay_step
from .errors import NumericalFailure
from .fock import (
    DensityMatrix,
    FockSpace,
    Ket,
    displacement_cache,
    fidelity_pure,
    vacuum,
)
from .lyapunov import LyapunovContext, newton_alpha
from .measurement import (
    OUTCOME_E,
    OUTCOME_G,
    MeasurementSetup,
    build_ops,
    outcome_probs_ket,
)
from .policy import PolicyNet, act, encode_observation
from .qfilter import (
    FilterState,
    alpha_guess,
    displace_only,
    estimate_in_frame,
    ideal_step,
    init_episode,
    noisy_step,
)

STATUS_COMPLETED = "completed"
STATUS_GUARD_STOP = "guard_stop"
STATUS_NUMERICAL_FAILURE = "numerical_failure"


class ZeroController:
    """No control; measurement back-action only."""

    def __call__(self, state: FilterState) -> complex:
        return 0.0 + 0.0j


class ScriptedController:
    """Fixed displacement sequence indexed by the filter's step counter."""

    def __init__(self, alphas):
        self.alphas = [complex(a) for a in alphas]

    def __call__(self, state: FilterState) -> complex:
        if state.step_index < len(self.alphas):
            return self.alphas[state.step_index]
        return 0.0 + 0.0j


class LyapunovController:
    """Newton step on the fidelity Lyapunov function of the estimate."""

    def __init__(self, ctx: LyapunovContext):
        self.ctx = ctx

    def __call__(self, state: FilterState) -> complex:
        alpha, _ = newton_alpha(self.ctx, estimate_in_frame(state))
        return alpha


class MlpController:
    """Trained actor evaluated deterministically on the encoded estimate."""

    def __init__(self, net: PolicyNet, complex_mode: bool):
        self.net = net
        self.complex_mode = complex_mode

    def __call__(self, state: FilterState) -> complex:
        return act(self.net, encode_observation(estimate_in_frame(state), self.complex_mode))


def clamp_action(alpha: complex) -> complex:
    """Enforce the [-1, 1] interval on both action components."""
    return complex(
        min(max(alpha.real, -1.0), 1.0), min(max(alpha.imag, -1.0), 1.0)
    )


@dataclass(frozen=True)
class EpisodeConfig:
    """Everything one trajectory needs besides the controller.

    initial_ket overrides the default start (the vacuum displaced by the
    educated guess); both truth and filter begin there, since the preparation
    sequence knows its own starting point.
    """

    target: Ket
    setup: MeasurementSetup
    max_cycles: int = 50
    guard_levels: tuple[int, ...] | None = None
    guard_threshold: float = 0.02
    noise: NoiseParams | None = None
    seed: int = 0
    initial_ket: Ket | None = None

    def __post_init__(self):
        if self.max_cycles < 1:
            raise ValueError(f"max_cycles must be >= 1, got {self.max_cycles}")
        if not 0.0 < self.guard_threshold < 1.0:
            raise ValueError(
                f"guard_threshold must be in (0, 1), got {self.guard_threshold}"
            )
        dim = self.target.space.dim
        levels = self.guard_levels
        if levels is None:
            levels = (dim - 2, dim - 1)
            object.__setattr__(self, "guard_levels", levels)
        if any(not 0 <= g < dim for g in levels):
            raise ValueError(f"guard levels {levels} outside 0..{dim - 1}")

    @property
    def space(self) -> FockSpace:
        return self.target.space


@dataclass
class EpisodeRecord:
    """Per-cycle log of one trajectory."""

    steps: list[int] = field(default_factory=list)
    alphas: list[complex] = field(default_factory=list)
    true_outcomes: list[str | None] = field(default_factory=list)
    reported_outcomes: list[str | None] = field(default_factory=list)
    filter_fidelities: list[float] = field(default_factory=list)
    true_fidelities: list[float] = field(default_factory=list)
    jumps: list[bool] = field(default_factory=list)
    subspace_pops: list[tuple[float, ...]] = field(default_factory=list)
    terminal_status: str = STATUS_COMPLETED
    seed: int = 0

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def final_filter_fidelity(self) -> float:
        return self.filter_fidelities[-1]

    @property
    def final_true_fidelity(self) -> float:
        return self.true_fidelities[-1]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "terminal_status": self.terminal_status,
            "steps": list(self.steps),
            "alpha_re": [a.real for a in self.alphas],
            "alpha_im": [a.imag for a in self.alphas],
            "true_outcomes": list(self.true_outcomes),
            "reported_outcomes": list(self.reported_outcomes),
            "filter_fidelities": list(self.filter_fidelities),
            "true_fidelities": list(self.true_fidelities),
            "jumps": [bool(j) for j in self.jumps],
            "subspace_pops": [list(p) for p in self.subspace_pops],
        }


class EpisodeEngine:
    """Stepwise episode driver shared by run_episode and the bridge server."""

    def __init__(self, cfg: EpisodeConfig):
        self.cfg = cfg
        self.space = cfg.space
        self.ops = build_ops(cfg.setup, self.space)
        self.cache = displacement_cache(self.space)
        self.target = cfg.target.normalize()
        self.rng: np.random.Generator | None = None
        self.true_ket: Ket | None = None
        self.filter_state: FilterState | None = None
        self.record: EpisodeRecord | None = None
        self.cycle = 0
        self.done = False

    def reset(self, seed: int | None = None) -> None:
        seed = self.cfg.seed if seed is None else seed
        self.rng = np.random.default_rng(np.random.SeedSequence(seed))
        if self.cfg.initial_ket is not None:
            self.true_ket = self.cfg.initial_ket.normalize()
            base = init_episode(self.target, self.space, self.cfg.setup)
            self.filter_state = replace(base, rho_est=self.true_ket.to_density())
        else:
            guess = alpha_guess(self.target)
            self.true_ket = self.cache.apply_to_ket(vacuum(self.space), guess).normalize()
            self.filter_state = init_episode(self.target, self.space, self.cfg.setup)
        self.record = EpisodeRecord(seed=seed)
        self.cycle = 0
        self.done = False

    # -- state inspection ---------------------------------------------------

    def _framed_true_amplitudes(self) -> np.ndarray:
        psi = self.true_ket.amplitudes
        if self.filter_state.frame is not None:
            psi = self.filter_state.frame * psi
        return psi

    def true_fidelity(self) -> float:
        overlap = np.vdot(self.target.amplitudes, self._framed_true_amplitudes())
        return float(min(max(abs(overlap) ** 2, 0.0), 1.0))

    def filter_fidelity(self) -> float:
        return fidelity_pure(estimate_in_frame(self.filter_state), self.target)

    def _subspace_pops(self) -> tuple[float, ...]:
        pops = np.abs(self.true_ket.amplitudes) ** 2
        dn = self.cfg.setup.delta_n
        return tuple(
            float(pops[self.space.levels % dn == m].sum()) for m in range(dn)
        )

    def guard_tripped(self) -> bool:
        idx = list(self.cfg.guard_levels)
        true_pop = float((np.abs(self.true_ket.amplitudes) ** 2)[idx].sum())
        est_pop = float(self.filter_state.rho_est.populations()[idx].sum())
        return max(true_pop, est_pop) > self.cfg.guard_threshold

    # -- cycle execution ----------------------------------------------------

    def _log(self, alpha, true_outcome, reported, jumped) -> None:
        self.record.steps.append(self.cycle)
        self.record.alphas.append(alpha)
        self.record.true_outcomes.append(true_outcome)
        self.record.reported_outcomes.append(reported)
        self.record.filter_fidelities.append(self.filter_fidelity())
        self.record.true_fidelities.append(self.true_fidelity())
        self.record.jumps.append(jumped)
        self.record.subspace_pops.append(self._subspace_pops())

    def adjustment_cycle(self, alpha: complex) -> None:
        """Cycle 0: displacement only, fine-tuning the initial guess."""
        alpha = clamp_action(alpha)
        self.true_ket = self.cache.apply_to_ket(self.true_ket, alpha).normalize()
        self.filter_state = displace_only(self.filter_state, alpha)
        self._log(alpha, None, None, False)
        self.cycle += 1

    def feedback_cycle(self, alpha: complex) -> None:
        """One full cycle: drive, decay, measure, read out, update the filter."""
        alpha = clamp_action(alpha)
        noise = self.cfg.noise
        self.true_ket = self.cache.apply_to_ket(self.true_ket, alpha).normalize()
        jumped = False
        if noise is not None:
            self.true_ket, jumped = true_decay_step(self.true_ket, noise, self.rng)
        p_g, _ = outcome_probs_ket(self.ops, self.true_ket)
        true_outcome = OUTCOME_G if self.rng.random() < p_g else OUTCOME_E
        diag = self.ops.operator(true_outcome).entries.diagonal().real
        self.true_ket = Ket(diag * self.true_ket.amplitudes, self.space).normalize()
        if noise is not None:
            reported = sample_readout(true_outcome, noise, self.rng)
            self.filter_state = noisy_step(
                self.filter_state, alpha, reported, self.ops, noise
            )
        else:
            reported = true_outcome
            self.filter_state = ideal_step(
                self.filter_state, alpha, true_outcome, self.ops
            )
        self._log(alpha, true_outcome, reported, jumped)
        self.cycle += 1


def run_episode(cfg: EpisodeConfig, controller) -> EpisodeRecord:
    """Run one seeded trajectory to completion, guard stop, or failure."""
    engine = EpisodeEngine(cfg)
    engine.reset()
    try:
        engine.adjustment_cycle(controller(engine.filter_state))
        for _ in range(cfg.max_cycles):
            if engine.guard_tripped():
                engine.record.terminal_status = STATUS_GUARD_STOP
                return engine.record
            engine.feedback_cycle(controller(engine.filter_state))
        if engine.guard_tripped():
            engine.record.terminal_status = STATUS_GUARD_STOP
            return engine.record
    except NumericalFailure:
        engine.record.terminal_status = STATUS_NUMERICAL_FAILURE
        return engine.record
    engine.record.terminal_status = STATUS_COMPLETED
    return engine.record


def trajectory_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Deterministic per-trajectory seed, independent of scheduling."""
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))


def _seed_as_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(2, np.uint64)[0])


def _batch_worker(args) -> EpisodeRecord:
    cfg, controller, index = args
    seeded = replace(cfg, seed=_seed_as_int(trajectory_seed(cfg.seed, index)))
    return run_episode(seeded, controller)


def run_batch(
    cfg: EpisodeConfig, controller, n_traj: int, workers: int = 1
) -> list[EpisodeRecord]:
    """n_traj independent trajectories; results identical for any worker count."""
    if n_traj < 1:
        raise ValueError(f"n_traj must be >= 1, got {n_traj}")
    tasks = [(cfg, controller, i) for i in range(n_traj)]
    if workers <= 1 or n_traj == 1:
        return [_batch_worker(t) for t in tasks]
    chunk = max(1, n_traj // (workers * 8))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_batch_worker, tasks, chunksize=chunk))


def free_evolution_reference(
    target: Ket, noise: NoiseParams, cycles: int, substeps: int = 10
) -> np.ndarray:
    """Fidelity-to-target of the uncontrolled master equation, starting from
    a perfect preparation; first-order integration at dt = t_cycle/substeps."""
    target = target.normalize()
    rho = target.to_density()
    dt = noise.t_cycle / substeps
    out = np.empty(cycles + 1)
    out[0] = 1.0
    for c in range(1, cycles + 1):
        if noise.kappa > 0.0:
            for _ in range(substeps):
                rho = DensityMatrix(
                    rho.entries + dt * lindblad_rhs(rho, noise.kappa), rho.space
                ).normalize()
        out[c] = fidelity_pure(rho, target)
    return out
