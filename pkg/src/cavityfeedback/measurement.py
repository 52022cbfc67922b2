"""Ramsey weak-measurement operators and stabilizable-subspace algebra.

The probe qubit picks up a phase phi0 per cavity photon; reading it out along
the Ramsey axis phi_r applies cos/sin Kraus operators to the cavity. Fock
states whose photon numbers agree modulo delta_n share one Bloch angle and
span a subspace that the back-action leaves invariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, ZeroProbabilityOutcome
from .fock import DensityMatrix, FockSpace, Ket, Operator

TWO_PI = 2.0 * math.pi
# Ramsey-phase offset for even delta_n, chosen so every subspace gets a
# distinct outcome probability (mid-fringe cannot separate opposing angles).
EVEN_PHI_R_OFFSET = 2.0 * math.pi / 5.0

OUTCOME_G = "g"
OUTCOME_E = "e"
MIN_OUTCOME_PROB = 1e-14


@dataclass(frozen=True)
class MeasurementSetup:
    """Parameters of one Ramsey weak measurement.

    parity follows delta_n: odd spacings use phi0 = 4*pi/delta_n and a
    mid-fringe Ramsey phase; even spacings must fall back to phi0 =
    2*pi/delta_n, which leaves an alternating sign to track classically.
    """

    delta_n: int
    phi0: float
    phi_r: float
    parity: str
    phase_tracking: bool

    def __post_init__(self):
        if self.delta_n < 1:
            raise ValueError(f"delta_n must be >= 1, got {self.delta_n}")
        if self.parity not in ("odd", "even"):
            raise ValueError(f"parity must be 'odd' or 'even', got {self.parity!r}")
        if self.parity == "odd" and self.phase_tracking:
            raise ValueError("odd-parity setups never need phase tracking")
        if self.parity == "even" and not self.phase_tracking:
            raise ValueError("even-parity setups require phase tracking")


@dataclass(frozen=True)
class MeasurementOps:
    """Kraus pair for the two qubit readouts; both real diagonal."""

    m_g: Operator
    m_e: Operator

    def __post_init__(self):
        gg = self.m_g.entries.conj().T @ self.m_g.entries
        ee = self.m_e.entries.conj().T @ self.m_e.entries
        defect = np.abs(gg + ee - np.eye(self.m_g.dim)).max()
        if defect > 1e-12:
            raise ShapeMismatch(f"Kraus completeness defect {defect:.3e}")

    @property
    def dim(self) -> int:
        return self.m_g.dim

    def operator(self, outcome: str) -> Operator:
        if outcome == OUTCOME_G:
            return self.m_g
        if outcome == OUTCOME_E:
            return self.m_e
        raise ValueError(f"unknown outcome {outcome!r}")


def build_setup(
    delta_n: int, m_target: int = 0, parity_override: str | None = None
) -> MeasurementSetup:
    """Choose phi0 and the Ramsey phase for a photon-number spacing delta_n.

    m_target anchors the Ramsey phase to the subspace holding the target:
    odd spacings sit at mid fringe (target outcome probability 1/2), even
    spacings sit 2*pi/5 away so all subspaces separate in probability.
    """
    if delta_n < 1:
        raise ValueError(f"delta_n must be >= 1, got {delta_n}")
    if not 0 <= m_target < delta_n:
        raise ValueError(f"m_target must be in 0..{delta_n - 1}, got {m_target}")
    parity = parity_override or ("odd" if delta_n % 2 == 1 else "even")
    if parity == "odd":
        phi0 = 4.0 * math.pi / delta_n
        phi_r = phi0 * m_target + math.pi / 2.0
        tracking = False
    elif parity == "even":
        phi0 = TWO_PI / delta_n
        phi_r = phi0 * m_target + EVEN_PHI_R_OFFSET
        tracking = True
    else:
        raise ValueError(f"parity_override must be 'odd' or 'even', got {parity!r}")
    return MeasurementSetup(
        delta_n=delta_n, phi0=phi0, phi_r=phi_r, parity=parity, phase_tracking=tracking
    )


def build_ops(setup: MeasurementSetup, space: FockSpace) -> MeasurementOps:
    """M_g = cos((phi0 N - phi_r)/2), M_e = sin((phi0 N - phi_r)/2)."""
    args = 0.5 * (setup.phi0 * space.levels - setup.phi_r)
    return MeasurementOps(
        m_g=Operator(np.diag(np.cos(args)).astype(complex), hermitian_hint=True),
        m_e=Operator(np.diag(np.sin(args)).astype(complex), hermitian_hint=True),
    )


def outcome_probs(ops: MeasurementOps, rho: DensityMatrix) -> tuple[float, float]:
    """(P_g, P_e) = (tr M_g rho M_g^dag, tr M_e rho M_e^dag)."""
    pops = rho.entries.diagonal().real
    cg = ops.m_g.entries.diagonal().real
    ce = ops.m_e.entries.diagonal().real
    p_g = float(np.dot(cg * cg, pops))
    p_e = float(np.dot(ce * ce, pops))
    return p_g, p_e


def outcome_probs_ket(ops: MeasurementOps, ket: Ket) -> tuple[float, float]:
    pops = np.abs(ket.amplitudes) ** 2
    cg = ops.m_g.entries.diagonal().real
    ce = ops.m_e.entries.diagonal().real
    return float(np.dot(cg * cg, pops)), float(np.dot(ce * ce, pops))


def back_action(ops: MeasurementOps, rho: DensityMatrix, outcome: str) -> DensityMatrix:
    """rho -> M_s rho M_s^dag / tr(M_s rho M_s^dag) for the observed outcome."""
    p_g, p_e = outcome_probs(ops, rho)
    prob = p_g if outcome == OUTCOME_G else p_e
    if prob <= MIN_OUTCOME_PROB:
        raise ZeroProbabilityOutcome(
            f"outcome {outcome!r} has probability {prob:.3e}"
        )
    diag = ops.operator(outcome).entries.diagonal().real
    post = diag[:, None] * rho.entries * diag[None, :]
    return DensityMatrix(post, rho.space).normalize()


def back_action_ket(ops: MeasurementOps, ket: Ket, outcome: str) -> Ket:
    diag = ops.operator(outcome).entries.diagonal().real
    post = Ket(diag * ket.amplitudes, ket.space)
    if post.norm ** 2 <= MIN_OUTCOME_PROB:
        raise ZeroProbabilityOutcome(
            f"outcome {outcome!r} has probability {post.norm ** 2:.3e}"
        )
    return post.normalize()


def subspace_index(n: int, delta_n: int) -> int:
    """Which stabilizable subspace the Fock level n belongs to."""
    if n < 0:
        raise ValueError(f"photon number must be >= 0, got {n}")
    return n % delta_n


def subspace_population(rho: DensityMatrix, m: int, delta_n: int) -> float:
    """Total population on Fock levels with n mod delta_n == m."""
    if not 0 <= m < delta_n:
        raise ValueError(f"m must be in 0..{delta_n - 1}, got {m}")
    pops = rho.entries.diagonal().real
    mask = rho.space.levels % delta_n == m
    return float(pops[mask].sum())


def subspace_population_ket(ket: Ket, m: int, delta_n: int) -> float:
    if not 0 <= m < delta_n:
        raise ValueError(f"m must be in 0..{delta_n - 1}, got {m}")
    pops = np.abs(ket.amplitudes) ** 2
    mask = ket.space.levels % delta_n == m
    return float(pops[mask].sum())


def bloch_angle(m: int, setup: MeasurementSetup) -> float:
    """Equatorial Bloch angle the subspace m imprints on the probe qubit."""
    if not 0 <= m < setup.delta_n:
        raise ValueError(f"m must be in 0..{setup.delta_n - 1}, got {m}")
    return (setup.phi0 * m) % TWO_PI


def frame_correction(setup: MeasurementSetup, space: FockSpace) -> np.ndarray:
    """Diagonal (+-1) correction absorbing the per-measurement alternating sign.

    With phi0 = 2*pi/delta_n the Kraus arguments of levels m and m + l*delta_n
    differ by pi*l, flipping signs on odd l. Multiplying level n by
    (-1)^{floor(n/delta_n)} after each measurement makes every stabilizable
    subspace see a constant scalar again. Identity for odd setups.
    """
    if not setup.phase_tracking:
        return np.ones(space.dim)
    return np.where((space.levels // setup.delta_n) % 2 == 0, 1.0, -1.0)


def verify_stabilizable(
    target: Ket, setup: MeasurementSetup, tol: float = 1e-10
) -> tuple[bool, dict[str, float]]:
    """Is the target a joint eigenvector of M_g and M_e (tracked frame for even)?

    Returns (ok, residuals) where residuals holds the per-operator
    eigen-equation defects ||M psi - lambda psi||.
    """
    space = target.space
    ops = build_ops(setup, space)
    frame = frame_correction(setup, space)
    psi = target.normalize().amplitudes
    residuals = {}
    for name, op in ((OUTCOME_G, ops.m_g), (OUTCOME_E, ops.m_e)):
        applied = frame * (op.entries.diagonal().real * psi)
        lam = np.vdot(psi, applied)
        residuals[name] = float(np.linalg.norm(applied - lam * psi))
    ok = all(r < tol for r in residuals.values())
    return ok, residuals
