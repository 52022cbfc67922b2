"""Decoherence model: Lindblad photon decay, per-cycle jump unraveling,
first-order decay map for the filter, and readout-error handling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ZeroProbabilityOutcome
from .fock import DensityMatrix, Ket
from .measurement import OUTCOME_E, OUTCOME_G


@dataclass(frozen=True)
class NoiseParams:
    """Cavity decay and probe-readout imperfections.

    eps_probe lumps all probe-qubit sigma_z-type errors into one extra
    symmetric readout-flip probability on top of the assignment errors.
    """

    t_cav: float
    t_cycle: float
    eta_e_given_g: float = 0.0
    eta_g_given_e: float = 0.0
    eps_probe: float = 0.0

    def __post_init__(self):
        if not self.t_cav > 0.0:
            raise ValueError(f"t_cav must be positive, got {self.t_cav}")
        if not (self.t_cycle > 0.0 and math.isfinite(self.t_cycle)):
            raise ValueError(f"t_cycle must be positive and finite, got {self.t_cycle}")
        if self.t_cycle / self.t_cav >= 0.1:
            raise ValueError(
                "t_cycle/t_cav must stay below 0.1 for the first-order decay model"
            )
        for name in ("eta_e_given_g", "eta_g_given_e", "eps_probe"):
            val = getattr(self, name)
            if not 0.0 <= val < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {val}")
        for name, val in (
            ("e_given_g", self.flip_prob(OUTCOME_G)),
            ("g_given_e", self.flip_prob(OUTCOME_E)),
        ):
            if not val < 1.0:
                raise ValueError(f"effective flip probability {name} reaches 1")

    @property
    def kappa(self) -> float:
        return 0.0 if math.isinf(self.t_cav) else 1.0 / self.t_cav

    @property
    def kappa_dt(self) -> float:
        return self.kappa * self.t_cycle

    def flip_prob(self, true_outcome: str) -> float:
        """Probability that true_outcome is reported as the other one."""
        if true_outcome == OUTCOME_G:
            return self.eta_e_given_g + self.eps_probe
        if true_outcome == OUTCOME_E:
            return self.eta_g_given_e + self.eps_probe
        raise ValueError(f"unknown outcome {true_outcome!r}")


def lindblad_rhs(rho: DensityMatrix, kappa: float) -> np.ndarray:
    """kappa (a rho a^dag - (N rho + rho N)/2); traceless by construction."""
    r = rho.entries
    lev = rho.space.levels
    out = np.zeros_like(r)
    sq = np.sqrt(lev[:-1] + 1.0)
    out[:-1, :-1] = np.outer(sq, sq) * r[1:, 1:]
    out -= 0.5 * (lev[:, None] + lev[None, :]) * r
    return kappa * out


def filter_decay_step(rho: DensityMatrix, noise: NoiseParams) -> DensityMatrix:
    """One-cycle first-order decay map (1 + dt L) the filter uses for relaxation."""
    if noise.kappa == 0.0:
        return rho
    stepped = rho.entries + noise.t_cycle * lindblad_rhs(rho, noise.kappa)
    return DensityMatrix(stepped, rho.space).normalize()


def _no_jump_factors(levels: np.ndarray, kappa_dt: float) -> np.ndarray:
    return np.exp(-0.5 * kappa_dt * levels)


def true_decay_step(state, noise: NoiseParams, rng: np.random.Generator):
    """One cycle of the jump unraveling of photon decay.

    Draws a single jump decision from the exact no-jump survival probability
    (multi-jump probability per cycle is < 1e-6 in every regime modeled here).
    The jump operator acts on the damped state: for this channel the
    post-jump state does not depend on where inside the cycle the jump lands
    (a e^{-k tau N/2} equals e^{-k tau N/2} a up to a scalar), and composing
    jump with the full-cycle damping keeps damped coherent states exactly on
    the analytic trajectory. Returns (state, jumped).
    """
    if noise.kappa == 0.0:
        return state, False
    kdt = noise.kappa_dt
    if isinstance(state, Ket):
        factors = _no_jump_factors(state.space.levels, kdt)
        survived = factors * state.amplitudes
        p_nojump = float(np.vdot(survived, survived).real)
        if rng.random() < 1.0 - p_nojump:
            lowered = np.zeros_like(survived)
            lev = state.space.levels
            lowered[:-1] = np.sqrt(lev[1:].astype(float)) * survived[1:]
            return Ket(lowered, state.space).normalize(), True
        return Ket(survived, state.space).normalize(), False
    if isinstance(state, DensityMatrix):
        factors = _no_jump_factors(state.space.levels, kdt)
        damped = factors[:, None] * state.entries * factors[None, :]
        p_nojump = float(np.trace(damped).real)
        if rng.random() < 1.0 - p_nojump:
            lev = state.space.levels
            sq = np.sqrt(lev[:-1] + 1.0)
            jumped = np.zeros_like(damped)
            jumped[:-1, :-1] = np.outer(sq, sq) * damped[1:, 1:]
            return DensityMatrix(jumped, state.space).normalize(), True
        return DensityMatrix(damped, state.space).normalize(), False
    raise TypeError(f"state must be Ket or DensityMatrix, got {type(state)!r}")


def sample_readout(true_outcome: str, noise: NoiseParams, rng: np.random.Generator) -> str:
    """Mis-assign the readout with the effective flip probabilities."""
    flip = noise.flip_prob(true_outcome)
    if flip > 0.0 and rng.random() < flip:
        return OUTCOME_E if true_outcome == OUTCOME_G else OUTCOME_G
    return true_outcome


def bayes_weights(
    p_g: float, p_e: float, noise: NoiseParams, reported: str
) -> tuple[float, float]:
    """Posterior (w_correct, w_flipped) over the true outcome given the report.

    w_correct weighs the branch where the reported outcome is the true one,
    w_flipped the branch where the readout was mis-assigned. Standard
    two-hypothesis Bayes with the effective flip probabilities as likelihoods.
    """
    eta_eg = noise.flip_prob(OUTCOME_G)
    eta_ge = noise.flip_prob(OUTCOME_E)
    if reported == OUTCOME_G:
        num_correct = (1.0 - eta_eg) * p_g
        num_flipped = eta_ge * p_e
    elif reported == OUTCOME_E:
        num_correct = (1.0 - eta_ge) * p_e
        num_flipped = eta_eg * p_g
    else:
        raise ValueError(f"unknown outcome {reported!r}")
    total = num_correct + num_flipped
    if total <= 0.0:
        raise ZeroProbabilityOutcome(
            f"reported outcome {reported!r} has zero total probability"
        )
    return num_correct / total, num_flipped / total
