import numpy as np
import pytest

from cavityfeedback.fock import DensityMatrix, FockSpace, Ket


@pytest.fixture
def space30():
    return FockSpace(30)


@pytest.fixture
def space12():
    return FockSpace(12)


def random_ket(rng, space):
    amps = rng.standard_normal(space.dim) + 1j * rng.standard_normal(space.dim)
    return Ket(amps, space).normalize()


def random_density(rng, space, rank=None):
    rank = rank or space.dim
    g = rng.standard_normal((space.dim, rank)) + 1j * rng.standard_normal((space.dim, rank))
    m = g @ g.conj().T
    return DensityMatrix(m / np.trace(m).real, space)


def random_mixed_purity_density(rng, space):
    """Mixture of a random pure state and a random full-rank state; the kind
    of estimate the controller actually sees mid-episode."""
    w = rng.uniform(0.0, 0.5)
    pure = random_ket(rng, space).to_density()
    mixed = random_density(rng, space)
    return DensityMatrix((1 - w) * pure.entries + w * mixed.entries, space).normalize()


def two_comp_ket(space, n1, n2, phase=0.0):
    amps = np.zeros(space.dim, dtype=complex)
    amps[n1] = 1 / np.sqrt(2)
    amps[n2] = np.exp(1j * phase) / np.sqrt(2)
    return Ket(amps, space)


def benchmark_target(space):
    return two_comp_ket(space, 1, 4)
