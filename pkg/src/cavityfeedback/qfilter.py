"""Recursive estimator of the cavity state from actions and readouts.

The ideal step replays the displacement and the measurement back-action on
the estimate, which reproduces the true state exactly when nothing is lost.
The noisy step inserts a first-order relaxation map and replaces the sharp
back-action by the Bayes-weighted mixture over the two possible true readouts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channels import NoiseParams, bayes_weights, filter_decay_step
from .errors import ZeroProbabilityOutcome
from .fock import (
    DensityMatrix,
    FockSpace,
    Ket,
    displacement_cache,
    mean_photon_ket,
    vacuum,
)
from .measurement import (
    MIN_OUTCOME_PROB,
    OUTCOME_E,
    OUTCOME_G,
    MeasurementOps,
    MeasurementSetup,
    frame_correction,
    outcome_probs,
)


@dataclass(frozen=True)
class FilterState:
    """Estimate plus the classical bookkeeping that travels with it.

    frame is the cumulative (+-1) diagonal absorbing the alternating
    measurement sign in even-spacing mode; None when not tracking.
    frame_flip is the per-measurement factor (constant over an episode).
    """

    rho_est: DensityMatrix
    step_index: int = 0
    frame: np.ndarray | None = None
    frame_flip: np.ndarray | None = None


def alpha_guess(target: Ket) -> complex:
    """Initial coherent amplitude: sqrt(mean photon), phased by the relative
    phase between the first two superposed components."""
    nbar = mean_photon_ket(target)
    amps = target.amplitudes
    nonzero = np.flatnonzero(np.abs(amps) > 1e-12)
    theta = 0.0
    if nonzero.size >= 2:
        theta = float(np.angle(amps[nonzero[1]] * np.conj(amps[nonzero[0]])))
    return np.sqrt(nbar) * np.exp(1j * theta)


def init_episode(
    target: Ket, space: FockSpace, setup: MeasurementSetup | None = None
) -> FilterState:
    """Educated-guess start: the vacuum displaced by alpha_guess."""
    cache = displacement_cache(space)
    rho0 = cache.apply_to_ket(vacuum(space), alpha_guess(target)).to_density()
    frame = None
    flip = None
    if setup is not None and setup.phase_tracking:
        frame = np.ones(space.dim)
        flip = frame_correction(setup, space)
    return FilterState(rho_est=rho0, step_index=0, frame=frame, frame_flip=flip)


def displace_only(state: FilterState, alpha: complex) -> FilterState:
    """Apply a displacement without a measurement (the cycle-0 adjustment)."""
    cache = displacement_cache(state.rho_est.space)
    rho = cache.apply_to_density(state.rho_est, alpha)
    return replace(state, rho_est=rho, step_index=state.step_index + 1)


def _advance_frame(state: FilterState) -> np.ndarray | None:
    if state.frame is None:
        return None
    return state.frame * state.frame_flip


def ideal_step(
    state: FilterState, alpha: complex, outcome: str, ops: MeasurementOps
) -> FilterState:
    """Displacement followed by the exact back-action of the observed outcome."""
    cache = displacement_cache(state.rho_est.space)
    rho = cache.apply_to_density(state.rho_est, alpha)
    p_g, p_e = outcome_probs(ops, rho)
    prob = p_g if outcome == OUTCOME_G else p_e
    if prob <= MIN_OUTCOME_PROB:
        raise ZeroProbabilityOutcome(f"outcome {outcome!r} probability {prob:.3e}")
    diag = ops.operator(outcome).entries.diagonal().real
    post = DensityMatrix(
        diag[:, None] * rho.entries * diag[None, :], rho.space
    ).normalize()
    return replace(
        state, rho_est=post, step_index=state.step_index + 1, frame=_advance_frame(state)
    )


def noisy_step(
    state: FilterState,
    alpha: complex,
    reported: str,
    ops: MeasurementOps,
    noise: NoiseParams,
) -> FilterState:
    """Displacement, first-order decay, then the readout-uncertain back-action:
    a Bayes-weighted mixture of the two conditional post-measurement states."""
    cache = displacement_cache(state.rho_est.space)
    rho = filter_decay_step(cache.apply_to_density(state.rho_est, alpha), noise)
    p_g, p_e = outcome_probs(ops, rho)
    w_correct, w_flipped = bayes_weights(p_g, p_e, noise, reported)
    flipped = OUTCOME_E if reported == OUTCOME_G else OUTCOME_G
    branch_probs = {OUTCOME_G: p_g, OUTCOME_E: p_e}
    mixture = np.zeros_like(rho.entries)
    total_weight = 0.0
    for outcome, weight in ((reported, w_correct), (flipped, w_flipped)):
        prob = branch_probs[outcome]
        if weight <= 0.0 or prob <= MIN_OUTCOME_PROB:
            continue
        diag = ops.operator(outcome).entries.diagonal().real
        mixture += weight * diag[:, None] * rho.entries * diag[None, :] / prob
        total_weight += weight
    if total_weight <= MIN_OUTCOME_PROB:
        raise ZeroProbabilityOutcome(
            f"reported outcome {reported!r} leaves no posterior mass"
        )
    post = DensityMatrix(mixture, rho.space).normalize()
    return replace(
        state, rho_est=post, step_index=state.step_index + 1, frame=_advance_frame(state)
    )


def estimate_in_frame(state: FilterState) -> DensityMatrix:
    """The estimate with the tracked phase frame folded in (identity when
    not tracking); this is what fidelities and observations are read from."""
    if state.frame is None:
        return state.rho_est
    f = state.frame
    return DensityMatrix(
        f[:, None] * state.rho_est.entries * f[None, :], state.rho_est.space
    )


def state_to_json_dict(state: FilterState) -> dict:
    """JSON-friendly snapshot (real/imag parts) for debugging and the bridge."""
    rho = state.rho_est.entries
    out = {
        "step_index": state.step_index,
        "rho_real": rho.real.tolist(),
        "rho_imag": rho.imag.tolist(),
    }
    if state.frame is not None:
        out["frame"] = state.frame.tolist()
    return out
