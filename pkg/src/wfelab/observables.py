"""Quadratic functionals of a wavefunction: dispersion, magnetization,
center of mass, energies, well occupations, and the macroscopic
back-of-envelope energy estimator.

All quantities use internal units hbar = 1; only :func:`macro_estimate`
works in SI units (w in J/m^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .states import (
    GridState,
    OperatorFamily,
    SpinState,
    State,
    StateError,
    SymmetricState,
    apply_family_sum,
    validate_family,
)


@dataclass
class ObservableReport:
    """One sample of the recorded observables.

    Spin runs fill m, p_left, p_right; grid runs fill com and momentum.
    Energies are present whenever a model is supplied.
    """

    norm: float
    dispersion: float | None = None
    m: float | None = None
    e_qm: float | None = None
    e_wfe: float | None = None
    e_total: float | None = None
    com: np.ndarray | None = None
    momentum: np.ndarray | None = None
    p_left: float | None = None
    p_right: float | None = None


def _expectation(state: State, op_amps: np.ndarray) -> complex:
    return complex(np.vdot(state.amplitudes, op_amps)) * state.measure_weight


def dispersion(state: State, family: OperatorFamily) -> float:
    """Variance of the site-averaged family: <(A/N_f - <A/N_f>)^2>, A = sum O_i."""
    validate_family(state, family)
    a_psi = apply_family_sum(state, family)
    mean = _expectation(state, a_psi).real
    # <A^2> as ||A psi||^2 keeps the result >= 0 up to round-off.
    second = float(np.vdot(a_psi, a_psi).real) * state.measure_weight
    return (second - mean**2) / family.n_sites**2


def family_variance(state: State, family: OperatorFamily) -> float:
    """Unscaled variance of the summed family, N_f^2 * dispersion."""
    return dispersion(state, family) * family.n_sites**2


def magnetization(state, spin_values: str = "half") -> float:
    """Mean per-site spin expectation (1/N) sum_i <S_i>.

    ``spin_values`` selects the two-level values: "half" for +-1/2, "one" for
    +-1.  Also accepts a bare collective vector phi_n over n = 0..N down
    spins, for which the +-1 convention gives (1/N) sum |phi_n|^2 (N - 2n).
    """
    if spin_values not in ("half", "one"):
        raise StateError(f"unknown spin_values {spin_values!r}")
    scale = 1.0 if spin_values == "half" else 2.0
    if isinstance(state, np.ndarray):
        phi = np.asarray(state, dtype=complex)
        n = phi.size - 1
        weights = (n - 2.0 * np.arange(n + 1)) / 2.0
        return scale * float(np.sum(np.abs(phi) ** 2 * weights)) / n
    if isinstance(state, (SpinState, SymmetricState)):
        fam = OperatorFamily("spin_z", tuple(range(state.n_spins)))
        total = _expectation(state, apply_family_sum(state, fam)).real
        return scale * total / state.n_spins
    if isinstance(state, GridState):
        if state.spin_levels == 1:
            raise StateError("magnetization needs a spin-bearing state")
        fam = OperatorFamily("spin_z", tuple(range(state.n_particles)))
        total = _expectation(state, apply_family_sum(state, fam)).real
        return scale * total / state.n_particles
    raise StateError(f"cannot compute magnetization of {type(state).__name__}")


def com_and_momentum(state: GridState):
    """Per-axis (<(1/N) sum X_i>, <sum P_i>) with spectral momentum."""
    if not isinstance(state, GridState):
        raise StateError("com_and_momentum applies to grid states")
    com = np.zeros(state.dims_per_particle)
    mom = np.zeros(state.dims_per_particle)
    tensor = state.tensor()
    x = state.coordinates()
    k = state.wavenumbers()
    for dim in range(state.dims_per_particle):
        for p in range(state.n_particles):
            ax = state.spatial_axis(p, dim)
            shape = [1] * tensor.ndim
            shape[ax] = x.size
            com[dim] += float(
                np.vdot(tensor, tensor * x.reshape(shape)).real
            ) * state.measure_weight
            ft = np.fft.fft(tensor, axis=ax)
            mom[dim] += float(
                np.vdot(ft, ft * k.reshape(shape)).real
            ) * state.measure_weight / state.grid_points
        com[dim] /= state.n_particles
    return com, mom


def energies(state: State, model):
    """(E_qm, E_wfe, E_total) for a model with linear part, weight w and family."""
    e_qm = 0.0
    if model.h_apply is not None:
        e_qm = _expectation(state, np.asarray(model.h_apply(state))).real
    e_wfe = 0.0
    if model.w > 0.0 and model.family is not None:
        e_wfe = model.w * family_variance(state, model.family)
    return e_qm, e_wfe, e_qm + e_wfe


def _readout_probabilities(state):
    """(values S, probabilities) of the apparatus readout for spin states."""
    if isinstance(state, SymmetricState):
        return state.readout_values(), state.readout_distribution()
    if isinstance(state, SpinState):
        m = state.n_spins - 1
        idx = np.arange(2**state.n_spins)
        n_down = np.zeros(idx.size, dtype=float)
        for s in range(1, state.n_spins):
            n_down += (idx >> s) & 1
        s_vals = (m - 2.0 * n_down) / 2.0
        return s_vals, np.abs(state.amplitudes) ** 2
    raise StateError("well occupations apply to spin states")


def well_occupations(state, split: float | None = None):
    """(p_left, p_right): readout probability below -split / above +split.

    The default split is R/2 = (N-1)/4, half-way between the central hill and
    the wells.  The band |S| <= split is excluded from both.
    """
    s_vals, probs = _readout_probabilities(state)
    r_well = (state.n_spins - 1) / 2.0
    if split is None:
        split = r_well / 2.0
    if not 0.0 < split < r_well:
        raise StateError(f"split must lie in (0, {r_well})")
    p_right = float(probs[s_vals > split].sum())
    p_left = float(probs[s_vals < -split].sum())
    return p_left, p_right


def classical_force_gap(state: GridState, dv) -> float:
    """Normalized gap |<dv(x)> - dv(<x>)| / max |dv| on the state's support.

    ``dv`` is the spatial derivative of the potential, supplied as a callable
    so it can be evaluated off-grid at <x>.  Returns 0 for a constant
    potential (zero scale) by convention.
    """
    if state.n_particles != 1 or state.dims_per_particle != 1:
        raise StateError("classical_force_gap is defined for one 1D particle")
    tensor = state.tensor()
    prob = (np.abs(tensor) ** 2).reshape(state.grid_points, -1).sum(axis=1)
    prob = prob * state.measure_weight
    x = state.coordinates()
    force_mean = float(np.sum(prob * dv(x)))
    x_mean = float(np.sum(prob * x))
    support = prob > 1e-12 * prob.max()
    scale = float(np.max(np.abs(dv(x[support]))))
    if scale == 0.0:
        return 0.0
    return abs(force_mean - dv(x_mean)) / scale


def macro_estimate(w: float, n: float, r: float, mode: str = "cat") -> float:
    """Back-of-envelope WFE energy in joules, SI inputs (w in J/m^2).

    ``mode="cat"``: w N^2 R^2 for a superposition of two branches separated
    by 2R.  ``mode="product"``: w N R^2 for a product of single-particle
    superpositions of extent R.
    """
    if w < 0 or n <= 0 or r < 0:
        raise StateError("macro_estimate needs w >= 0, n > 0, r >= 0")
    if mode == "cat":
        return w * n**2 * r**2
    if mode == "product":
        return w * n * r**2
    raise StateError(f"unknown mode {mode!r}")


def make_report(state: State, model=None, split: float | None = None) -> ObservableReport:
    """Evaluate every observable applicable to the state type."""
    report = ObservableReport(norm=math.sqrt(state.norm2()))
    if model is not None:
        report.e_qm, report.e_wfe, report.e_total = energies(state, model)
        if model.family is not None:
            report.dispersion = dispersion(state, model.family)
    if isinstance(state, (SpinState, SymmetricState)):
        report.m = magnetization(state)
        if state.n_spins >= 2:
            report.p_left, report.p_right = well_occupations(state, split)
        if report.dispersion is None:
            fam = OperatorFamily("spin_z", tuple(range(state.n_spins)))
            report.dispersion = dispersion(state, fam)
    else:
        report.com, report.momentum = com_and_momentum(state)
    return report


# ---------------------------------------------------------------------------
# CSV row layout (fixed column order)
# ---------------------------------------------------------------------------

_AXIS_NAMES = ("x", "y")


def report_header(report: ObservableReport) -> list:
    """Column names; spin runs and grid runs differ in the trailing block."""
    cols = ["t", "norm", "E_qm", "E_wfe", "E_total"]
    if report.com is not None:
        cols += [f"com_{_AXIS_NAMES[i]}" for i in range(len(report.com))]
        cols += ["D"]
        cols += [f"mom_{_AXIS_NAMES[i]}" for i in range(len(report.momentum))]
    else:
        cols += ["m", "D", "p_left", "p_right"]
    return cols


def report_row(t: float, report: ObservableReport) -> list:
    row = [t, report.norm, report.e_qm, report.e_wfe, report.e_total]
    if report.com is not None:
        row += list(report.com) + [report.dispersion] + list(report.momentum)
    else:
        row += [report.m, report.dispersion, report.p_left, report.p_right]
    return row
