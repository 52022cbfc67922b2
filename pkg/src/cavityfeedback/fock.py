"""Truncated Fock-space linear algebra: states, operators, displacement, fidelity."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.special import eval_genlaguerre, gammaln

from .errors import NumericalFailure, ShapeMismatch, TruncationWarning

HERMITICITY_TOL = 1e-12
TRACE_TOL = 1e-10
EIGENVALUE_FLOOR = -1e-10
# NumericalFailure below this; eigenvalues in [EIG_HARD_FLOOR, 0) are clamped to 0
EIG_HARD_FLOOR = -1e-6
EDGE_LEAK_THRESHOLD = 1e-6


@dataclass(frozen=True)
class FockSpace:
    """Fock space truncated to the levels 0..dim-1."""

    dim: int

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"FockSpace needs dim >= 2, got {self.dim}")

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.dim)


@dataclass(frozen=True)
class Operator:
    """Dense operator on a truncated Fock space."""

    entries: np.ndarray
    hermitian_hint: bool = False

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeMismatch(f"operator must be square, got {m.shape}")
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def dagger(self) -> "Operator":
        return Operator(self.entries.conj().T, hermitian_hint=self.hermitian_hint)


class Ket:
    """Pure state on a truncated Fock space."""

    __slots__ = ("amplitudes", "space")

    def __init__(self, amplitudes, space: FockSpace):
        amps = np.asarray(amplitudes, dtype=complex)
        if amps.shape != (space.dim,):
            raise ShapeMismatch(
                f"ket amplitudes have shape {amps.shape}, space dim is {space.dim}"
            )
        self.amplitudes = amps
        self.space = space

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalize(self) -> "Ket":
        n = self.norm
        if n < 1e-300:
            raise NumericalFailure("cannot normalize a zero ket")
        return Ket(self.amplitudes / n, self.space)

    def to_density(self) -> "DensityMatrix":
        psi = self.amplitudes
        return DensityMatrix(np.outer(psi, psi.conj()), self.space)

    def overlap(self, other: "Ket") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


class DensityMatrix:
    """Hermitian trace-one matrix on a truncated Fock space."""

    __slots__ = ("entries", "space")

    def __init__(self, entries, space: FockSpace):
        m = np.asarray(entries, dtype=complex)
        if m.shape != (space.dim, space.dim):
            raise ShapeMismatch(
                f"density matrix has shape {m.shape}, space dim is {space.dim}"
            )
        self.entries = m
        self.space = space

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def normalize(self) -> "DensityMatrix":
        """Re-Hermitize and rescale to unit trace (drift control after superoperators)."""
        m = 0.5 * (self.entries + self.entries.conj().T)
        tr = np.trace(m).real
        if tr < 1e-300:
            raise NumericalFailure("cannot normalize a zero-trace density matrix")
        return DensityMatrix(m / tr, self.space)

    def hermiticity_defect(self) -> float:
        return float(np.abs(self.entries - self.entries.conj().T).max())

    def populations(self) -> np.ndarray:
        return self.entries.diagonal().real.copy()

    def validate(self) -> None:
        """Check the density-matrix invariants; raise NumericalFailure on violation."""
        if self.hermiticity_defect() > HERMITICITY_TOL:
            raise NumericalFailure(
                f"Hermiticity defect {self.hermiticity_defect():.3e} above tolerance"
            )
        if abs(self.trace.real - 1.0) > TRACE_TOL or abs(self.trace.imag) > TRACE_TOL:
            raise NumericalFailure(f"trace {self.trace} not 1 within tolerance")
        evals = np.linalg.eigvalsh(0.5 * (self.entries + self.entries.conj().T))
        if evals.min() < EIGENVALUE_FLOOR:
            raise NumericalFailure(f"negative eigenvalue {evals.min():.3e}")


def vacuum(space: FockSpace) -> Ket:
    amps = np.zeros(space.dim, dtype=complex)
    amps[0] = 1.0
    return Ket(amps, space)


def basis_ket(space: FockSpace, n: int) -> Ket:
    if not 0 <= n < space.dim:
        raise ValueError(f"level {n} outside 0..{space.dim - 1}")
    amps = np.zeros(space.dim, dtype=complex)
    amps[n] = 1.0
    return Ket(amps, space)


def annihilation(space: FockSpace) -> Operator:
    """Lowering operator: a[n-1, n] = sqrt(n)."""
    return Operator(np.diag(np.sqrt(np.arange(1, space.dim, dtype=float)), 1))


def creation(space: FockSpace) -> Operator:
    return annihilation(space).dagger()


def number(space: FockSpace) -> Operator:
    return Operator(np.diag(space.levels.astype(float)), hermitian_hint=True)


def identity(space: FockSpace) -> Operator:
    return Operator(np.eye(space.dim), hermitian_hint=True)


def edge_leakage(space: FockSpace, alpha: complex, probe_level: int | None = None) -> float:
    """Population that displacing |probe_level> by alpha sends past the top
    retained level, evaluated with the closed-form (untruncated) displaced
    number-state amplitudes.

    Defaults to probe_level = dim - 3, the reference used by the truncation guard.
    """
    n = space.dim - 3 if probe_level is None else probe_level
    x = abs(alpha) ** 2
    if x == 0.0:
        return 0.0
    total = 0.0
    # |<m|D(alpha)|n>|^2 = e^{-x} (n!/m!) x^{m-n} [L_n^{(m-n)}(x)]^2 for m >= n
    for m in range(space.dim, space.dim + 120):
        k = m - n
        lag = eval_genlaguerre(n, k, x)
        if lag == 0.0:
            log_term = -np.inf
        else:
            log_term = (
                -x + gammaln(n + 1) - gammaln(m + 1) + k * np.log(x) + 2.0 * np.log(abs(lag))
            )
        term = float(np.exp(log_term))
        total += term
        if term < 1e-24 and m > space.dim + 5:
            break
    return total


def displacement(space: FockSpace, alpha: complex) -> Operator:
    """Displacement operator exp(alpha a^dag - alpha^* a) on the truncated space.

    Computed by scaling-and-squaring matrix exponential of the truncated
    generator, so it is exactly unitary on the retained levels. Emits
    TruncationWarning when displacing |dim-3> by alpha would leak more than
    1e-6 population past the top level.
    """
    if not np.isfinite(alpha):
        raise ValueError("displacement amplitude must be finite")
    if edge_leakage(space, alpha) > EDGE_LEAK_THRESHOLD:
        warnings.warn(
            f"displacement alpha={alpha:.4g} reaches the truncation edge "
            f"(dim={space.dim})",
            TruncationWarning,
            stacklevel=2,
        )
    a = annihilation(space).entries
    gen = alpha * a.conj().T - np.conj(alpha) * a
    return Operator(expm(gen))


class DisplacementCache:
    """Fast exact displacement via one spectral factorization per space.

    The generator obeys alpha a^dag - alpha^* a =
    R(theta) [r (a^dag - a)] R(theta)^dag with R(theta) = diag(e^{i theta n}),
    exactly on the truncated space, so a single eigendecomposition of
    -i(a^dag - a) yields D(alpha) for every alpha at two small matmuls.
    Agrees with displacement() to machine precision.
    """

    def __init__(self, space: FockSpace):
        self.space = space
        s = creation(space).entries - annihilation(space).entries
        evals, evecs = np.linalg.eigh(-1j * s)
        self._evals = evals
        self._evecs = evecs
        self._evecs_h = evecs.conj().T
        self._levels = space.levels

    def matrix(self, alpha: complex) -> np.ndarray:
        r = abs(alpha)
        if r == 0.0:
            return np.eye(self.space.dim, dtype=complex)
        theta = np.angle(alpha)
        core = (self._evecs * np.exp(1j * r * self._evals)) @ self._evecs_h
        phase = np.exp(1j * theta * self._levels)
        return phase[:, None] * core * phase.conj()[None, :]

    def apply_to_ket(self, ket: Ket, alpha: complex) -> Ket:
        if alpha == 0:
            return ket
        return Ket(self.matrix(alpha) @ ket.amplitudes, self.space)

    def apply_to_density(self, rho: DensityMatrix, alpha: complex) -> DensityMatrix:
        if alpha == 0:
            return rho
        d = self.matrix(alpha)
        return DensityMatrix(d @ rho.entries @ d.conj().T, rho.space).normalize()


_DISPLACEMENT_CACHES: dict[int, DisplacementCache] = {}


def displacement_cache(space: FockSpace) -> DisplacementCache:
    """Memoized DisplacementCache per dimension (immutable, thread-safe)."""
    cache = _DISPLACEMENT_CACHES.get(space.dim)
    if cache is None:
        cache = DisplacementCache(space)
        _DISPLACEMENT_CACHES[space.dim] = cache
    return cache


def apply_displacement(rho: DensityMatrix, alpha: complex) -> DensityMatrix:
    """rho -> D(alpha) rho D(-alpha), re-Hermitized and renormalized."""
    d = displacement(rho.space, alpha).entries
    return DensityMatrix(d @ rho.entries @ d.conj().T, rho.space).normalize()


def fidelity_pure(rho: DensityMatrix, target: Ket) -> float:
    """<psi|rho|psi> for a pure target, clipped to [0, 1]."""
    psi = target.amplitudes
    val = np.vdot(psi, rho.entries @ psi).real
    return float(min(max(val, 0.0), 1.0))


def _clipped_psd_eigvals(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition with rank truncation: eigenvalues below the
    dim*eps*lambda_max noise scale are zeroed so square roots do not amplify
    rounding junk (sqrt(1e-16) is 1e-8 per spurious mode)."""
    herm = 0.5 * (matrix + matrix.conj().T)
    evals, evecs = np.linalg.eigh(herm)
    if evals.min() < EIG_HARD_FLOOR:
        raise NumericalFailure(
            f"eigenvalue {evals.min():.3e} below {EIG_HARD_FLOOR} in fidelity"
        )
    cutoff = herm.shape[0] * np.finfo(float).eps * max(float(evals.max()), 0.0)
    return np.where(evals < cutoff, 0.0, evals), evecs


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    evals, evecs = _clipped_psd_eigvals(matrix)
    return (evecs * np.sqrt(evals)) @ evecs.conj().T


def fidelity_general(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Uhlmann fidelity (tr sqrt(sqrt(rho) sigma sqrt(rho)))^2 via eigendecomposition."""
    if rho.space.dim != sigma.space.dim:
        raise ShapeMismatch("density matrices live on different spaces")
    sq = _psd_sqrt(rho.entries)
    inner = sq @ sigma.entries @ sq
    evals, _ = _clipped_psd_eigvals(inner)
    val = np.sqrt(evals).sum() ** 2
    return float(min(max(val, 0.0), 1.0))


def mean_photon(rho: DensityMatrix) -> float:
    """tr(N rho); real and nonnegative for a valid state."""
    val = float(np.dot(rho.space.levels, rho.entries.diagonal().real))
    return max(val, 0.0)


def mean_photon_ket(ket: Ket) -> float:
    return float(np.dot(ket.space.levels, np.abs(ket.amplitudes) ** 2))
