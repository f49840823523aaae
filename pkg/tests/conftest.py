import math

import numpy as np
import pytest

from wfelab.states import GridState, SpinState, SymmetricState


def random_symmetric(n_spins, rng):
    amps = rng.standard_normal(2 * n_spins) + 1j * rng.standard_normal(2 * n_spins)
    amps /= np.linalg.norm(amps)
    return SymmetricState(n_spins, amps)


def random_spin(n_spins, rng):
    dim = 2**n_spins
    amps = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    amps /= np.linalg.norm(amps)
    return SpinState(n_spins, amps)


def gaussian_grid(grid_points=128, box_half_width=10.0, center=0.0, sigma=1.0,
                  k0=0.0, spin=None):
    """Normalized 1D single-particle Gaussian, optionally boosted / with spin."""
    spin_levels = 1 if spin is None else 2
    size = grid_points * spin_levels
    template = GridState(1, 1, grid_points, box_half_width,
                         np.zeros(size, dtype=complex), spin_levels=spin_levels,
                         normalized=False)
    x = template.coordinates()
    psi = np.exp(-((x - center) ** 2) / (4.0 * sigma**2) + 1j * k0 * x)
    if spin is not None:
        chi = np.asarray(spin, dtype=complex)
        chi = chi / np.linalg.norm(chi)
        psi = np.multiply.outer(psi, chi)
    amps = psi.reshape(-1)
    amps = amps / math.sqrt(float(np.vdot(amps, amps).real) * template.measure_weight)
    return template.with_amplitudes(amps, normalized=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
