"""Fidelity-Lyapunov displacement controller.

V(rho) = tr((I - |t><t|) rho) = 1 - F is expanded to second order in the
displacement amplitude; the Newton step of the resulting real quadratic form
gives the control, guarded by a positive-definiteness check and an amplitude
clamp. The three expansion coefficients come from traces against commutators
that are precomputed once per target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure
from .fock import DensityMatrix, FockSpace, Ket, Operator, annihilation, fidelity_pure

STATUS_NEWTON = "newton"
STATUS_CLAMPED = "clamped"
STATUS_REJECTED = "rejected"

ZETA_STATIONARY_TOL = 1e-12


@dataclass(frozen=True)
class LyapunovContext:
    """Precomputed target-dependent operators.

    upsilon = I - rho_target; c_op = [a, upsilon]; g_op = [a, c_op];
    e_op = [a^dag, c_op]. alpha_max clamps the returned amplitude.
    """

    target: Ket
    upsilon: Operator
    c_op: Operator
    g_op: Operator
    e_op: Operator
    alpha_max: float


def build_context(target: Ket, space: FockSpace, alpha_max: float = 0.3) -> LyapunovContext:
    if alpha_max <= 0.0:
        raise ValueError(f"alpha_max must be positive, got {alpha_max}")
    psi = target.normalize().amplitudes
    a = annihilation(space).entries
    ad = a.conj().T
    upsilon = np.eye(space.dim, dtype=complex) - np.outer(psi, psi.conj())
    c = a @ upsilon - upsilon @ a
    g = a @ c - c @ a
    e = ad @ c - c @ ad
    return LyapunovContext(
        target=Ket(psi, space),
        upsilon=Operator(upsilon, hermitian_hint=True),
        c_op=Operator(c),
        g_op=Operator(g),
        e_op=Operator(e),
        alpha_max=alpha_max,
    )


def _trace_prod(a: np.ndarray, b: np.ndarray) -> complex:
    # tr(A B) without forming the product
    return complex(np.sum(a * b.T))


def lyapunov_value(ctx: LyapunovContext, rho: DensityMatrix) -> float:
    """V(rho) = tr(upsilon rho) = 1 - fidelity to the pure target."""
    return float(_trace_prod(ctx.upsilon.entries, rho.entries).real)


def expansion_coeffs(
    ctx: LyapunovContext, rho: DensityMatrix
) -> tuple[complex, complex, float]:
    """(zeta, gamma, chi): traces of the precomputed commutators against rho.

    chi is real for Hermitian rho; its imaginary residue is checked and dropped.
    """
    zeta = _trace_prod(ctx.c_op.entries, rho.entries)
    gamma = _trace_prod(ctx.g_op.entries, rho.entries)
    chi = _trace_prod(ctx.e_op.entries, rho.entries)
    if abs(chi.imag) > 1e-8:
        raise NumericalFailure(f"chi has imaginary part {chi.imag:.3e}")
    return zeta, gamma, chi.real


def quadratic_model(
    zeta: complex, gamma: complex, chi: float, alpha: complex
) -> float:
    """q(alpha): the predicted change of V under the displacement alpha."""
    first = 2.0 * (alpha * np.conj(zeta)).real
    second = (alpha * alpha * np.conj(gamma)).real - (abs(alpha) ** 2) * chi
    return float(first + second)


def newton_alpha(ctx: LyapunovContext, rho: DensityMatrix) -> tuple[complex, str]:
    """Newton displacement from the local quadratic model.

    When the 2x2 real Hessian is positive definite (chi < -|gamma|) the
    minimizer (chi zeta + gamma zeta^*) / (chi^2 - |gamma|^2) is returned,
    radially clamped to alpha_max. When it is not: with a nonzero gradient a
    short steepest-descent step along -zeta is taken; at a gradient-stationary
    point with negative curvature (e.g. a state orthogonal to the target
    subspace) the model's minimum on the |alpha| <= alpha_max disk lies on the
    boundary along the most negative curvature direction, so the full allowed
    displacement is applied.

    Every nonzero candidate is verified against the exact V and halved until
    it actually descends; a Newton step that needed halving is no longer a
    trusted model minimum and is downgraded to rejected status.
    """
    zeta, gamma, chi = expansion_coeffs(ctx, rho)
    abs_gamma = abs(gamma)
    if chi < -abs_gamma:
        alpha = (chi * zeta + gamma * np.conj(zeta)) / (chi * chi - abs_gamma * abs_gamma)
        mag = abs(alpha)
        if mag > ctx.alpha_max:
            return _ensure_descent(ctx, rho, alpha * (ctx.alpha_max / mag), STATUS_CLAMPED)
        if mag < ZETA_STATIONARY_TOL:
            return 0.0 + 0.0j, STATUS_NEWTON
        return _ensure_descent(ctx, rho, alpha, STATUS_NEWTON)
    if abs(zeta) < ZETA_STATIONARY_TOL:
        lam_min = -chi - abs_gamma
        if lam_min < 0.0:
            # direction minimizing Re(u^2 gamma^*) - |u|^2 chi: half the
            # phase of gamma, rotated by pi/2
            direction = np.exp(0.5j * np.angle(gamma) + 0.5j * np.pi) if abs_gamma else 1.0
            return _ensure_descent(
                ctx, rho, ctx.alpha_max * direction, STATUS_REJECTED
            )
        return 0.0 + 0.0j, STATUS_REJECTED
    alpha = -(ctx.alpha_max / 10.0) * zeta / abs(zeta)
    return _ensure_descent(ctx, rho, alpha, STATUS_REJECTED)


def _ensure_descent(
    ctx: LyapunovContext, rho: DensityMatrix, alpha: complex, status: str
) -> tuple[complex, str]:
    from .fock import displacement_cache

    cache = displacement_cache(rho.space)
    v0 = lyapunov_value(ctx, rho)
    candidate = alpha
    for _ in range(50):
        if lyapunov_value(ctx, cache.apply_to_density(rho, candidate)) < v0:
            if candidate is not alpha and status in (STATUS_NEWTON, STATUS_CLAMPED):
                return candidate, STATUS_REJECTED
            return candidate, status
        candidate = candidate * 0.5
        if abs(candidate) < 1e-14:
            break
    return 0.0 + 0.0j, STATUS_REJECTED


def lyapunov_policy(ctx: LyapunovContext, filter_state) -> complex:
    """Controller entry point: Newton displacement for the current estimate."""
    from .qfilter import estimate_in_frame

    alpha, _ = newton_alpha(ctx, estimate_in_frame(filter_state))
    return alpha


def hessian_eigenvalues(gamma: complex, chi: float) -> tuple[float, float]:
    """Eigenvalues (-chi - |gamma|, -chi + |gamma|) of the real quadratic form."""
    return -chi - abs(gamma), -chi + abs(gamma)


def sanity_check_target(ctx: LyapunovContext) -> float:
    """V at the target itself; should vanish to rounding."""
    return lyapunov_value(ctx, ctx.target.to_density())
