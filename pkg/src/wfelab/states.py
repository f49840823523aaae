"""Wavefunction representations and constructors for the named test states.

Three state types are supported:

* :class:`SpinState` -- N two-level spins on the full 2**N configuration basis.
  Configuration index convention: bit i of the index is spin i, bit value 0
  means spin value +1/2 and bit value 1 means -1/2.  Spin 0 is the qubit in
  the measurement toy model.
* :class:`SymmetricState` -- one qubit plus M = N-1 apparatus spins restricted
  to the permutation-symmetric (Dicke) sector of the apparatus.  Amplitudes are
  stored as a (2, M+1) block: row = qubit value (0 -> +1/2, 1 -> -1/2),
  column n = number of "down" apparatus spins, in the orthonormal Dicke basis.
* :class:`GridState` -- one or two particles on a periodic spatial grid (1D or
  2D per particle), optionally carrying a spin-1/2 factor per particle.
  Tensor axis order: spatial axes particle-major (x1[, y1], x2[, y2]), then
  one spin axis per particle (index 0 -> spin +1/2).

All states are immutable after construction (amplitude buffers are frozen) and
carry a plain complex amplitude vector; grid inner products apply the measure
weight h**(dims * n_particles).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

NORM_TOL = 1e-12
SYMMETRY_TOL = 1e-10
BRANCH_OVERLAP_TOL = 1e-12
MOMENTUM_OVERLAP_TOL = 1e-10

STATE_FORMAT_NAME = "wfelab-state"
STATE_FORMAT_VERSION = 1


class StateError(ValueError):
    """Base class for state construction and validation failures."""


class ShapeMismatchError(StateError):
    """Two states that must share type and shape do not."""


class AsymmetricStateError(StateError):
    """A full spin state is not permutation symmetric in the apparatus spins."""

    def __init__(self, defect):
        self.defect = float(defect)
        super().__init__(
            f"state is not symmetric under apparatus permutations: "
            f"residual norm {self.defect:.3e} exceeds {SYMMETRY_TOL:.0e}"
        )


class BranchOverlapError(StateError):
    """Cat/two-bump branches overlap (or wrap around the box) beyond tolerance."""


def _freeze(amps) -> np.ndarray:
    out = np.ascontiguousarray(amps, dtype=complex)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SpinState:
    """Wavefunction of ``n_spins`` two-level spins over all 2**N configurations."""

    n_spins: int
    amplitudes: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        if self.n_spins < 1:
            raise StateError("n_spins must be >= 1")
        amps = _freeze(self.amplitudes)
        if amps.shape != (2**self.n_spins,):
            raise StateError(
                f"amplitude vector has length {amps.size}, expected {2**self.n_spins}"
            )
        object.__setattr__(self, "amplitudes", amps)
        if self.normalized and abs(self.norm2() - 1.0) > NORM_TOL:
            raise StateError(
                f"state marked normalized but ||psi||^2 = {self.norm2()!r}"
            )

    @property
    def measure_weight(self) -> float:
        return 1.0

    def norm2(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def tensor(self) -> np.ndarray:
        """Amplitudes reshaped to one axis of length 2 per spin.

        Axis i is spin i; index 0 along an axis is spin value +1/2.
        """
        return self.amplitudes.reshape((2,) * self.n_spins, order="F")

    def with_amplitudes(self, amps, normalized=False) -> "SpinState":
        return SpinState(self.n_spins, amps, normalized=normalized)

    def spin_values(self, site: int) -> np.ndarray:
        """Diagonal of the site spin-z operator (values +-1/2) over configurations."""
        idx = np.arange(2**self.n_spins)
        return 0.5 - ((idx >> site) & 1).astype(float)


@dataclass(frozen=True)
class SymmetricState:
    """Qubit (x) Dicke-sector apparatus state; amplitudes laid out as (2, M+1)."""

    n_spins: int
    amplitudes: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        if self.n_spins < 2:
            raise StateError("SymmetricState needs a qubit plus at least one apparatus spin")
        amps = _freeze(self.amplitudes)
        if amps.shape != (2 * self.n_apparatus + 2,):
            raise StateError(
                f"amplitude vector has length {amps.size}, "
                f"expected {2 * (self.n_apparatus + 1)}"
            )
        object.__setattr__(self, "amplitudes", amps)
        if self.normalized and abs(self.norm2() - 1.0) > NORM_TOL:
            raise StateError(
                f"state marked normalized but ||psi||^2 = {self.norm2()!r}"
            )

    @property
    def n_apparatus(self) -> int:
        return self.n_spins - 1

    @property
    def measure_weight(self) -> float:
        return 1.0

    def norm2(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def block(self) -> np.ndarray:
        """View as a (2, M+1) block: [qubit value, number of down spins]."""
        return self.amplitudes.reshape(2, self.n_apparatus + 1)

    def with_amplitudes(self, amps, normalized=False) -> "SymmetricState":
        return SymmetricState(self.n_spins, amps, normalized=normalized)

    def readout_values(self) -> np.ndarray:
        """Apparatus total spin S(n) = (M - 2n)/2 for n = 0..M."""
        m = self.n_apparatus
        return (m - 2.0 * np.arange(m + 1)) / 2.0

    def readout_distribution(self) -> np.ndarray:
        """Probability of each apparatus readout value S(n), qubit traced out."""
        return (np.abs(self.block()) ** 2).sum(axis=0)


@dataclass(frozen=True)
class GridState:
    """One or two particles on a periodic grid, optionally with spin-1/2 factors.

    ``grid_points`` points per axis on [-L, L) with spacing h = 2L/G; momenta
    are spectral (FFT) wavenumbers of the periodic box.
    """

    n_particles: int
    dims_per_particle: int
    grid_points: int
    box_half_width: float
    amplitudes: np.ndarray
    spin_levels: int = 1
    normalized: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.n_particles not in (1, 2):
            raise StateError("n_particles must be 1 or 2")
        if self.dims_per_particle not in (1, 2):
            raise StateError("dims_per_particle must be 1 or 2")
        if self.spin_levels not in (1, 2):
            raise StateError("spin_levels must be 1 or 2")
        if self.grid_points < 2 or self.box_half_width <= 0:
            raise StateError("need grid_points >= 2 and box_half_width > 0")
        amps = _freeze(self.amplitudes)
        if amps.shape != (self.size,):
            raise StateError(
                f"amplitude vector has length {amps.size}, expected {self.size}"
            )
        object.__setattr__(self, "amplitudes", amps)
        if self.normalized and abs(self.norm2() - 1.0) > NORM_TOL:
            raise StateError(
                f"state marked normalized but ||psi||^2 = {self.norm2()!r}"
            )

    # -- geometry -----------------------------------------------------------

    @property
    def size(self) -> int:
        return (
            self.grid_points ** (self.dims_per_particle * self.n_particles)
            * self.spin_levels**self.n_particles
        )

    @property
    def spacing(self) -> float:
        return 2.0 * self.box_half_width / self.grid_points

    @property
    def measure_weight(self) -> float:
        return self.spacing ** (self.dims_per_particle * self.n_particles)

    @property
    def tensor_shape(self) -> tuple:
        shape = (self.grid_points,) * (self.dims_per_particle * self.n_particles)
        if self.spin_levels > 1:
            shape = shape + (self.spin_levels,) * self.n_particles
        return shape

    def coordinates(self) -> np.ndarray:
        g = self.grid_points
        return -self.box_half_width + self.spacing * np.arange(g)

    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.grid_points, d=self.spacing)

    def spatial_axis(self, particle: int, dim: int) -> int:
        return particle * self.dims_per_particle + dim

    def spin_axis(self, particle: int) -> int:
        if self.spin_levels == 1:
            raise StateError("state carries no spin factor")
        return self.n_particles * self.dims_per_particle + particle

    # -- values -------------------------------------------------------------

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.tensor_shape)

    def norm2(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real) * self.measure_weight

    def with_amplitudes(self, amps, normalized=False) -> "GridState":
        return GridState(
            self.n_particles,
            self.dims_per_particle,
            self.grid_points,
            self.box_half_width,
            np.asarray(amps, dtype=complex).reshape(-1),
            spin_levels=self.spin_levels,
            normalized=normalized,
            meta=dict(self.meta),
        )


State = SpinState | SymmetricState | GridState


def _same_shape(a: State, b: State) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, SpinState) or isinstance(a, SymmetricState):
        return a.n_spins == b.n_spins
    return (
        a.n_particles == b.n_particles
        and a.dims_per_particle == b.dims_per_particle
        and a.grid_points == b.grid_points
        and a.box_half_width == b.box_half_width
        and a.spin_levels == b.spin_levels
    )


def norm_and_inner(a: State, b: State):
    """Return (||a||, <a|b>), with the grid measure weight applied.

    Raises ShapeMismatchError unless a and b share type and shape.
    """
    if not _same_shape(a, b):
        raise ShapeMismatchError(
            f"cannot take inner product of {type(a).__name__} and "
            f"{type(b).__name__} with different shapes"
        )
    inner = complex(np.vdot(a.amplitudes, b.amplitudes)) * a.measure_weight
    return math.sqrt(a.norm2()), inner


# ---------------------------------------------------------------------------
# Operator families
# ---------------------------------------------------------------------------

POSITION_X = "position_x"
MOMENTUM_PX = "momentum_px"
ANGULAR_MOMENTUM_LZ = "angular_momentum_lz"
SPIN_Z = "spin_z"
TOTAL_JZ = "total_jz"

FAMILY_KINDS = (POSITION_X, MOMENTUM_PX, ANGULAR_MOMENTUM_LZ, SPIN_Z, TOTAL_JZ)

_GRID_KINDS = (POSITION_X, MOMENTUM_PX, ANGULAR_MOMENTUM_LZ, TOTAL_JZ)


@dataclass(frozen=True)
class OperatorFamily:
    """A summed single-site operator family sum_i O_i over the listed sites.

    ``kind`` selects the per-site operator; ``sites`` lists the particles or
    spins the sum runs over (qubit = site 0 for spin states).
    """

    kind: str
    sites: tuple

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise StateError(f"unknown operator family kind {self.kind!r}")
        object.__setattr__(self, "sites", tuple(int(s) for s in self.sites))
        if len(self.sites) == 0:
            raise StateError("operator family needs at least one site")
        if len(set(self.sites)) != len(self.sites):
            raise StateError("operator family sites must be distinct")

    @property
    def n_sites(self) -> int:
        return len(self.sites)


def spin_family(state: SpinState | SymmetricState, include_qubit=True) -> OperatorFamily:
    """Spin-z family over all spins, or apparatus spins only."""
    sites = range(state.n_spins) if include_qubit else range(1, state.n_spins)
    return OperatorFamily(SPIN_Z, tuple(sites))


def validate_family(state: State, family: OperatorFamily):
    if isinstance(state, (SpinState, SymmetricState)):
        if family.kind != SPIN_Z:
            raise StateError(f"family {family.kind!r} requires a grid state")
        if any(s < 0 or s >= state.n_spins for s in family.sites):
            raise StateError("family site out of range for this state")
        if isinstance(state, SymmetricState):
            sites = set(family.sites)
            allowed = (
                set(range(state.n_spins)),
                set(range(1, state.n_spins)),
                {0},
            )
            if sites not in allowed:
                raise StateError(
                    "on a symmetric-sector state the spin-z family must cover "
                    "all spins, all apparatus spins, or the qubit alone"
                )
    else:
        if family.kind not in _GRID_KINDS and family.kind != SPIN_Z:
            raise StateError(f"unknown family kind {family.kind!r}")
        if any(s < 0 or s >= state.n_particles for s in family.sites):
            raise StateError("family site out of range for this state")
        if family.kind in (ANGULAR_MOMENTUM_LZ, TOTAL_JZ) and state.dims_per_particle != 2:
            raise StateError("angular momentum families need 2D particles")
        if family.kind in (SPIN_Z, TOTAL_JZ) and state.spin_levels == 1:
            raise StateError("spin families need spin-carrying grid states")


def _mul_along_axis(tensor, values, axis):
    shape = [1] * tensor.ndim
    shape[axis] = len(values)
    return tensor * values.reshape(shape)


def _momentum_along_axis(tensor, wavenumbers, axis):
    # P = -i d/dx acts as multiplication by k in the Fourier representation.
    ft = np.fft.fft(tensor, axis=axis)
    return np.fft.ifft(_mul_along_axis(ft, wavenumbers, axis), axis=axis)


def _grid_site_apply(state: GridState, tensor, kind, particle):
    x = state.coordinates()
    k = state.wavenumbers()
    if kind == POSITION_X:
        return _mul_along_axis(tensor, x, state.spatial_axis(particle, 0))
    if kind == MOMENTUM_PX:
        return _momentum_along_axis(tensor, k, state.spatial_axis(particle, 0))
    if kind == ANGULAR_MOMENTUM_LZ:
        ax_x = state.spatial_axis(particle, 0)
        ax_y = state.spatial_axis(particle, 1)
        xpy = _mul_along_axis(_momentum_along_axis(tensor, k, ax_y), x, ax_x)
        ypx = _mul_along_axis(_momentum_along_axis(tensor, k, ax_x), x, ax_y)
        return xpy - ypx
    if kind == SPIN_Z:
        return _mul_along_axis(tensor, np.array([0.5, -0.5]), state.spin_axis(particle))
    if kind == TOTAL_JZ:
        return _grid_site_apply(state, tensor, ANGULAR_MOMENTUM_LZ, particle) + _grid_site_apply(
            state, tensor, SPIN_Z, particle
        )
    raise StateError(f"unknown family kind {kind!r}")


def _spin_sum_diagonal(state: SpinState | SymmetricState, sites) -> np.ndarray:
    """Diagonal of sum_i S_i^z (values +-1/2) in the state's own basis."""
    if isinstance(state, SpinState):
        idx = np.arange(2**state.n_spins)
        diag = np.zeros(idx.size)
        for s in sites:
            diag += 0.5 - ((idx >> s) & 1)
        return diag
    m = state.n_apparatus
    s1 = np.array([0.5, -0.5])
    s_app = state.readout_values()
    sites = set(sites)
    diag = np.zeros((2, m + 1))
    if 0 in sites:
        diag += s1[:, None]
    if sites - {0}:
        diag += s_app[None, :]
    return diag.reshape(-1)


def apply_family_sum(state: State, family: OperatorFamily) -> np.ndarray:
    """Amplitudes of (sum_{i in sites} O_i) psi in the state's own basis."""
    validate_family(state, family)
    if isinstance(state, (SpinState, SymmetricState)):
        return _spin_sum_diagonal(state, family.sites) * state.amplitudes
    tensor = state.tensor()
    out = np.zeros_like(tensor)
    for p in family.sites:
        out = out + _grid_site_apply(state, tensor, family.kind, p)
    return out.reshape(-1)


def family_diagonal(state: SpinState | SymmetricState, family: OperatorFamily) -> np.ndarray:
    """The diagonal of sum O_i when it is diagonal (spin-z families only)."""
    validate_family(state, family)
    if not isinstance(state, (SpinState, SymmetricState)):
        raise StateError("family_diagonal applies to spin states only")
    return _spin_sum_diagonal(state, family.sites)


def family_applier(template: State, family: OperatorFamily):
    """Closure applying sum_i O_i to flat amplitude vectors of the template's shape.

    Avoids re-wrapping amplitude arrays in state objects inside integrator
    inner loops; spin-z families reduce to a precomputed diagonal.
    """
    validate_family(template, family)
    if isinstance(template, (SpinState, SymmetricState)):
        diag = _spin_sum_diagonal(template, family.sites)

        def apply_diag(z):
            return diag * z

        return apply_diag
    shape = template.tensor_shape

    def apply_grid(z):
        tensor = z.reshape(shape)
        out = np.zeros_like(tensor)
        for p in family.sites:
            out = out + _grid_site_apply(template, tensor, family.kind, p)
        return out.reshape(-1)

    return apply_grid


# ---------------------------------------------------------------------------
# Symmetric-sector embedding
# ---------------------------------------------------------------------------

EMBED_MAX_SPINS = 24


def _popcount(values: np.ndarray) -> np.ndarray:
    if hasattr(np, "bitwise_count"):
        return np.bitwise_count(values.astype(np.uint64)).astype(np.int64)
    out = np.zeros(values.shape, dtype=np.int64)
    v = values.astype(np.int64)
    while np.any(v):
        out += v & 1
        v >>= 1
    return out


def _dicke_weights(n_spins: int):
    """Qubit index, down-spin count and 1/sqrt(C(M,n)) per full configuration."""
    m = n_spins - 1
    idx = np.arange(2**n_spins)
    qubit = idx & 1
    n_down = _popcount(idx >> 1)
    binom = np.array([math.comb(m, n) for n in range(m + 1)], dtype=float)
    return qubit, n_down, 1.0 / np.sqrt(binom[n_down])


def embed_symmetric(s: SymmetricState) -> SpinState:
    """Isometric embedding of a Dicke-sector state into the full 2**N basis."""
    if s.n_spins > EMBED_MAX_SPINS:
        raise StateError(f"refusing to embed N={s.n_spins} > {EMBED_MAX_SPINS} spins")
    qubit, n_down, w = _dicke_weights(s.n_spins)
    block = s.block()
    amps = block[qubit, n_down] * w
    return SpinState(s.n_spins, amps, normalized=s.normalized)


def project_symmetric(f: SpinState) -> SymmetricState:
    """Project a full state onto the qubit (x) Dicke sector.

    Raises AsymmetricStateError (reporting the residual norm) when more than
    SYMMETRY_TOL of the state lives outside the symmetric sector.
    """
    m = f.n_spins - 1
    qubit, n_down, w = _dicke_weights(f.n_spins)
    key = qubit * (m + 1) + n_down
    size = 2 * (m + 1)
    coeff = np.bincount(key, weights=(f.amplitudes * w).real, minlength=size) + 1j * np.bincount(
        key, weights=(f.amplitudes * w).imag, minlength=size
    )
    # The Dicke weight enters twice: once in the bra, once above; dividing by
    # C(M,n) = 1/w^2 per class is already accounted for since sum over the
    # class of w * psi equals the coefficient only for symmetric states.
    reduced = SymmetricState(f.n_spins, coeff, normalized=False)
    back = embed_symmetric(reduced)
    defect = math.sqrt(max(float(np.vdot(f.amplitudes - back.amplitudes,
                                         f.amplitudes - back.amplitudes).real), 0.0))
    if defect > SYMMETRY_TOL:
        raise AsymmetricStateError(defect)
    return SymmetricState(f.n_spins, coeff, normalized=f.normalized)


# ---------------------------------------------------------------------------
# Bumps and named state builders
# ---------------------------------------------------------------------------

def _bump(x, center, width, shape):
    if shape == "gaussian":
        # width is the standard deviation of |phi|^2.
        return np.exp(-((x - center) ** 2) / (4.0 * width**2))
    if shape == "box":
        # characteristic function of total width `width`
        return np.where(np.abs(x - center) <= width / 2.0, 1.0, 0.0).astype(float)
    raise StateError(f"unknown bump shape {shape!r}")


def _check_bump_fits(x, b, h, label):
    total = float(np.sum(np.abs(b) ** 2)) * h
    if total == 0.0:
        raise BranchOverlapError(f"{label}: bump has no support on the grid")
    edge = (abs(b[0]) ** 2 + abs(b[-1]) ** 2) * h
    if edge / total > BRANCH_OVERLAP_TOL:
        raise BranchOverlapError(
            f"{label}: wrap-around tail mass {edge / total:.3e} exceeds "
            f"{BRANCH_OVERLAP_TOL:.0e}; enlarge the box"
        )


def _two_bump(x, separation, width, shape, h):
    left = _bump(x, -separation, width, shape)
    right = _bump(x, +separation, width, shape)
    _check_bump_fits(x, left, h, "left branch")
    _check_bump_fits(x, right, h, "right branch")
    nl = math.sqrt(float(np.sum(np.abs(left) ** 2)) * h)
    nr = math.sqrt(float(np.sum(np.abs(right) ** 2)) * h)
    overlap = abs(float(np.sum(left * right)) * h) / (nl * nr)
    if overlap > BRANCH_OVERLAP_TOL:
        raise BranchOverlapError(
            f"branch overlap {overlap:.3e} exceeds {BRANCH_OVERLAP_TOL:.0e}; "
            "increase the separation or shrink the bumps"
        )
    return left / nl, right / nr


def _qubit_amplitudes(alpha, beta, gamma):
    if abs(abs(alpha) ** 2 + abs(beta) ** 2 - 1.0) > 1e-10:
        raise StateError("need |alpha|^2 + |beta|^2 = 1")
    return complex(alpha), complex(beta) * np.exp(1j * gamma)


def build_mqp_state(
    space,
    *,
    n_particles=1,
    grid_points=None,
    box_half_width=None,
    separation=None,
    bump_width=None,
    bump_shape="gaussian",
    n_spins=None,
    alpha=1 / math.sqrt(2),
    beta=1 / math.sqrt(2),
    gamma=0.0,
):
    """Product of per-site two-branch superpositions (no collective dispersion).

    ``space="grid"``: each particle is (phi(x+R) + phi(x-R))/sqrt(2) on its own
    1D axis, R = ``separation``.  ``space="spin"``: qubit (alpha, beta) times
    the product of (|up> + |down>)/sqrt(2) over the apparatus spins, stored in
    the Dicke basis (binomial coefficients).
    """
    if space == "grid":
        g = int(grid_points)
        state0 = GridState(
            n_particles, 1, g, float(box_half_width),
            np.zeros(g**n_particles, dtype=complex), normalized=False,
        )
        x = state0.coordinates()
        left, right = _two_bump(x, separation, bump_width, bump_shape, state0.spacing)
        single = (left + right) / math.sqrt(2.0)
        amps = single
        for _ in range(n_particles - 1):
            amps = np.multiply.outer(amps, single)
        amps = amps.reshape(-1)
        amps = amps / math.sqrt(float(np.vdot(amps, amps).real) * state0.measure_weight)
        return state0.with_amplitudes(amps, normalized=True)
    if space == "spin":
        n = int(n_spins)
        m = n - 1
        a, b = _qubit_amplitudes(alpha, beta, gamma)
        binom = np.array([math.comb(m, k) for k in range(m + 1)], dtype=float)
        apparatus = np.sqrt(binom) / math.sqrt(2.0**m)
        block = np.zeros((2, m + 1), dtype=complex)
        block[0] = a * apparatus
        block[1] = b * apparatus
        return SymmetricState(n, block.reshape(-1))
    raise StateError(f"unknown space {space!r}")


def build_cat_state(
    space,
    *,
    n_particles=1,
    grid_points=None,
    box_half_width=None,
    separation=None,
    bump_width=None,
    bump_shape="gaussian",
    n_spins=None,
    alpha=1 / math.sqrt(2),
    beta=1 / math.sqrt(2),
    gamma=0.0,
):
    """Superposition of two product branches: alpha |+R...> + beta e^{i gamma} |-R...>.

    Grid version: branches are products of single bumps at +R (with amplitude
    alpha) and at -R.  Spin version: alpha |qubit +1/2>|n=0> + beta e^{i gamma}
    |qubit -1/2>|n=M>, i.e. readout fully right / fully left.
    """
    if space == "grid":
        g = int(grid_points)
        state0 = GridState(
            n_particles, 1, g, float(box_half_width),
            np.zeros(g**n_particles, dtype=complex), normalized=False,
        )
        x = state0.coordinates()
        left, right = _two_bump(x, separation, bump_width, bump_shape, state0.spacing)
        a, b = _qubit_amplitudes(alpha, beta, gamma)
        branch_r = right
        branch_l = left
        for _ in range(n_particles - 1):
            branch_r = np.multiply.outer(branch_r, right)
            branch_l = np.multiply.outer(branch_l, left)
        amps = (a * branch_r + b * branch_l).reshape(-1)
        nrm = math.sqrt(float(np.vdot(amps, amps).real) * state0.measure_weight)
        return state0.with_amplitudes(amps / nrm, normalized=True)
    if space == "spin":
        n = int(n_spins)
        m = n - 1
        a, b = _qubit_amplitudes(alpha, beta, gamma)
        block = np.zeros((2, m + 1), dtype=complex)
        block[0, 0] = a     # qubit up, all apparatus spins up: S = +R
        block[1, m] = b     # qubit down, all apparatus spins down: S = -R
        return SymmetricState(n, block.reshape(-1))
    raise StateError(f"unknown space {space!r}")


def build_momentum_cat(
    grid_points,
    box_half_width,
    q_width,
    p0,
    alpha=1 / math.sqrt(2),
    beta=1 / math.sqrt(2),
    gamma=0.0,
) -> GridState:
    """Two-component spinor alpha psi_q(p-p0)|+> + beta e^{i gamma} psi_q(p+p0)|->.

    Built directly on the spectral momentum lattice and transformed to the
    position grid.  Branch overlap above MOMENTUM_OVERLAP_TOL is recorded as a
    warning in the state metadata.
    """
    g = int(grid_points)
    state0 = GridState(
        1, 1, g, float(box_half_width),
        np.zeros(2 * g, dtype=complex), spin_levels=2, normalized=False,
    )
    k = state0.wavenumbers()
    a, b = _qubit_amplitudes(alpha, beta, gamma)
    bump_up = np.exp(-((k - p0) ** 2) / (4.0 * q_width**2))
    bump_dn = np.exp(-((k + p0) ** 2) / (4.0 * q_width**2))
    nu = math.sqrt(float(np.sum(bump_up**2)))
    nd = math.sqrt(float(np.sum(bump_dn**2)))
    overlap = float(np.sum(bump_up * bump_dn)) / (nu * nd)
    meta = {}
    if overlap > MOMENTUM_OVERLAP_TOL:
        meta["momentum_overlap_warning"] = overlap
    spinor = np.zeros((g, 2), dtype=complex)
    spinor[:, 0] = a * np.fft.ifft(bump_up / nu)
    spinor[:, 1] = b * np.fft.ifft(bump_dn / nd)
    amps = spinor.reshape(-1)
    nrm = math.sqrt(float(np.vdot(amps, amps).real) * state0.measure_weight)
    out = state0.with_amplitudes(amps / nrm, normalized=True)
    out.meta.update(meta)
    return out


def build_initial_toy(
    n_spins,
    alpha=1 / math.sqrt(2),
    beta=1 / math.sqrt(2),
    center=0.5,
    gamma=0.0,
    rho=0.0,
    rng=None,
) -> SymmetricState:
    """Banded initial state of the measurement toy model.

    Qubit factor (alpha, beta e^{i gamma}) times the uniform-per-configuration
    superposition of apparatus configurations with |S(n)| <= center, i.e.
    Dicke coefficients proportional to sqrt(C(M, n)) inside the band.  With
    rho > 0, independent complex Gaussian perturbations of RMS size rho are
    added to the in-band amplitudes and the state is renormalized.
    """
    n = int(n_spins)
    m = n - 1
    r_well = m / 2.0
    if not 0 <= center <= r_well:
        raise StateError(f"center must lie in [0, {r_well}]")
    a, b = _qubit_amplitudes(alpha, beta, gamma)
    s_vals = (m - 2.0 * np.arange(m + 1)) / 2.0
    band = np.abs(s_vals) <= center + 1e-12
    if not np.any(band):
        raise StateError("no apparatus configuration satisfies |S(n)| <= center")
    weights = np.zeros(m + 1)
    weights[band] = np.sqrt([math.comb(m, int(k)) for k in np.nonzero(band)[0]])
    weights /= math.sqrt(float(np.sum(weights**2)))
    block = np.zeros((2, m + 1), dtype=complex)
    block[0] = a * weights
    block[1] = b * weights
    if rho > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        mask = np.zeros((2, m + 1), dtype=bool)
        mask[:, band] = True
        noise = rng.standard_normal(mask.sum()) + 1j * rng.standard_normal(mask.sum())
        block[mask] += rho * noise / math.sqrt(2.0)
    amps = block.reshape(-1)
    amps = amps / math.sqrt(float(np.vdot(amps, amps).real))
    return SymmetricState(n, amps)


# ---------------------------------------------------------------------------
# Serialization (field names are fixed in docs/state_format.md)
# ---------------------------------------------------------------------------

def state_to_dict(state: State) -> dict:
    amps = [[float(z.real), float(z.imag)] for z in state.amplitudes]
    head = {"format": STATE_FORMAT_NAME, "version": STATE_FORMAT_VERSION}
    if isinstance(state, SpinState):
        return {**head, "type": "spin", "n_spins": state.n_spins, "amplitudes": amps}
    if isinstance(state, SymmetricState):
        return {**head, "type": "symmetric", "n_spins": state.n_spins, "amplitudes": amps}
    return {
        **head,
        "type": "grid",
        "n_particles": state.n_particles,
        "dims_per_particle": state.dims_per_particle,
        "grid_points": state.grid_points,
        "box_half_width": state.box_half_width,
        "spin_levels": state.spin_levels,
        "amplitudes": amps,
    }


def state_from_dict(data: dict) -> State:
    if data.get("format") != STATE_FORMAT_NAME:
        raise StateError(f"not a {STATE_FORMAT_NAME} document")
    if data.get("version") != STATE_FORMAT_VERSION:
        raise StateError(f"unsupported state format version {data.get('version')!r}")
    amps = np.array([complex(re, im) for re, im in data["amplitudes"]])
    kind = data.get("type")
    if kind == "spin":
        return SpinState(int(data["n_spins"]), amps, normalized=False)
    if kind == "symmetric":
        return SymmetricState(int(data["n_spins"]), amps, normalized=False)
    if kind == "grid":
        return GridState(
            int(data["n_particles"]),
            int(data["dims_per_particle"]),
            int(data["grid_points"]),
            float(data["box_half_width"]),
            amps,
            spin_levels=int(data.get("spin_levels", 1)),
            normalized=False,
        )
    raise StateError(f"unknown state type {kind!r}")


def save_state(state: State, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(state_to_dict(state), fh)


def load_state(path) -> State:
    with open(path, "r", encoding="utf-8") as fh:
        return state_from_dict(json.load(fh))
