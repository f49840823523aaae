"""Nonlinear Hamiltonian flow of the penalized energy functional.

The evolution solved here is i dpsi/dt = H_QM psi + grad(psi) with hbar = 1,
where grad is the derivative of the dispersion penalty with respect to psi*:

    grad(psi) = { w A^2 - 2 w <psi|A|psi> A } psi,     A = sum_i O_i.

The factor convention is fixed by requiring the w = 0 limit to be the
standard Schrodinger equation, i.e. rhs = -i (H psi + grad).

Three integrators are provided:

* ``implicit_midpoint`` (default) -- preserves the quadratic norm invariant to
  solver tolerance and is symplectic for the flow; stage equations are solved
  by plain fixed-point iteration, so dt must resolve the stiffest phase
  (contraction requires roughly dt * ||H + wG|| < 2).
* ``extended_phase_space`` -- explicit symplectic method on a doubled copy of
  the state with a binding rotation, for cross-checks.
* ``rk4_reference`` -- classic fourth-order Runge-Kutta, used only as a
  convergence-order oracle (it conserves nothing exactly).

The state norm is never artificially renormalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .observables import ObservableReport, make_report
from .states import OperatorFamily, State, family_applier

METHODS = ("implicit_midpoint", "extended_phase_space", "rk4_reference")
DEFAULT_SOLVER_TOL = 1e-12
DEFAULT_MAX_ITERATIONS = 50


class IntegrationError(RuntimeError):
    """Stage-solver divergence or non-finite amplitudes, with the failure time."""

    def __init__(self, message, t):
        self.t = float(t)
        super().__init__(f"{message} (at t = {t:.6g})")


@dataclass(frozen=True)
class ModelSpec:
    """Energy functional: abstract self-adjoint linear part plus (w, family) penalty.

    ``h_apply`` maps a state to the amplitude vector of H_QM psi (None for a
    pure penalty flow); ``w`` and ``family`` define the dispersion penalty.
    """

    h_apply: Callable[[State], np.ndarray] | None
    w: float = 0.0
    family: OperatorFamily | None = None
    label: str = ""

    def __post_init__(self):
        if self.w < 0:
            raise ValueError("w must be >= 0")
        if self.w > 0 and self.family is None:
            raise ValueError("a positive w needs an operator family")


@dataclass
class TrajectoryRecord:
    """Sampled observables of one trajectory plus integrator metadata."""

    times: np.ndarray
    reports: list
    method: str
    dt: float
    max_residual: float = 0.0
    max_iterations_used: int = 0
    snapshots: list = field(default_factory=list)
    final_state: State | None = None
    info: dict = field(default_factory=dict)


def hermiticity_defect(model: ModelSpec, a: State, b: State) -> float:
    """|<a|Hb> - <Ha|b>|, the symmetry defect of the linear part."""
    ha = np.asarray(model.h_apply(a))
    hb = np.asarray(model.h_apply(b))
    w = a.measure_weight
    return abs(complex(np.vdot(a.amplitudes, hb)) * w - complex(np.vdot(ha, b.amplitudes)) * w)


def wfe_gradient(state: State, w: float, family: OperatorFamily) -> np.ndarray:
    """{ w A^2 - 2 w <psi|A|psi> A } psi as an amplitude vector."""
    if w < 0:
        raise ValueError("w must be >= 0")
    apply_a = family_applier(state, family)
    z = state.amplitudes
    az = apply_a(z)
    mean = float(np.vdot(z, az).real) * state.measure_weight
    return w * apply_a(az) - (2.0 * w * mean) * az


def _gradient_closure(template: State, model: ModelSpec):
    """Flat-array closure for H psi + wfe gradient (the dE/dpsi* action)."""
    weight = template.measure_weight
    if model.h_apply is None:
        h_flat = None
    else:
        h_apply = model.h_apply

        def h_flat(z):
            return np.asarray(h_apply(template.with_amplitudes(z)))

    if model.w > 0.0:
        apply_a = family_applier(template, model.family)
        w = model.w

        def grad(z):
            az = apply_a(z)
            mean = float(np.vdot(z, az).real) * weight
            g = w * apply_a(az) - (2.0 * w * mean) * az
            if h_flat is not None:
                g = g + h_flat(z)
            return g

        return grad
    if h_flat is None:
        return lambda z: np.zeros_like(z)
    return h_flat


def rhs(state: State, model: ModelSpec) -> np.ndarray:
    """Time derivative of the amplitudes: -i (H psi + wfe gradient)."""
    return -1j * _gradient_closure(state, model)(state.amplitudes)


# ---------------------------------------------------------------------------
# steppers
# ---------------------------------------------------------------------------

def _midpoint_step(z, dt, f, tol, max_iterations, t):
    y = z + dt * f(z)
    prev = math.inf
    for it in range(1, max_iterations + 1):
        y_new = z + dt * f(0.5 * (z + y))
        diff = float(np.linalg.norm(y_new - y))
        y = y_new
        if diff <= 0.1 * tol:
            return y, it, diff
        if diff >= prev and diff <= tol:
            # stalled at round-off but within tolerance
            return y, it, diff
        if not np.isfinite(diff):
            raise IntegrationError("fixed-point iteration diverged", t)
        prev = diff
    raise IntegrationError(
        f"stage solver did not reach residual {tol:g} in {max_iterations} "
        f"iterations (last update {prev:.3e}); reduce dt", t,
    )


def _rk4_step(z, dt, f):
    k1 = f(z)
    k2 = f(z + 0.5 * dt * k1)
    k3 = f(z + 0.5 * dt * k2)
    k4 = f(z + dt * k3)
    return z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _tao_map_a(psi, chi, delta, g):
    gs = g(psi.real + 1j * chi.imag)
    return psi - 1j * (delta * gs.real), chi + delta * gs.imag


def _tao_map_b(psi, chi, delta, g):
    gs = g(chi.real + 1j * psi.imag)
    return psi + delta * gs.imag, chi - 1j * (delta * gs.real)


def _tao_step(psi, chi, dt, g, omega):
    half = 0.5 * dt
    psi, chi = _tao_map_a(psi, chi, half, g)
    psi, chi = _tao_map_b(psi, chi, half, g)
    total = psi + chi
    diff = (psi - chi) * np.exp(-2j * omega * dt)
    psi, chi = 0.5 * (total + diff), 0.5 * (total - diff)
    psi, chi = _tao_map_b(psi, chi, half, g)
    psi, chi = _tao_map_a(psi, chi, half, g)
    return psi, chi


# ---------------------------------------------------------------------------
# trajectory driver
# ---------------------------------------------------------------------------

def evolve(
    state0: State,
    model: ModelSpec,
    t_final: float,
    dt: float,
    method: str = "implicit_midpoint",
    record_every: int = 1,
    solver_tol: float = DEFAULT_SOLVER_TOL,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    snapshot_every: int = 0,
    tao_omega: float = 20.0,
    split: float | None = None,
) -> TrajectoryRecord:
    """Integrate the flow and sample observables every ``record_every`` steps.

    ``snapshot_every`` > 0 additionally stores full states every that many
    records.  Raises IntegrationError on stage-solver divergence or
    non-finite amplitudes, reporting the offending time.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; pick one of {METHODS}")
    if dt <= 0 or t_final < dt:
        raise ValueError("need dt > 0 and t_final >= dt")
    n_steps = int(round(t_final / dt))
    grad = _gradient_closure(state0, model)

    def f(z):
        return -1j * grad(z)

    z = state0.amplitudes.copy()
    chi = z.copy() if method == "extended_phase_space" else None

    times = [0.0]
    reports = [make_report(state0, model, split=split)]
    snapshots = [(0.0, state0)] if snapshot_every > 0 else []
    max_residual = 0.0
    max_iters = 0
    n_records = 0

    for step in range(1, n_steps + 1):
        t = step * dt
        if method == "implicit_midpoint":
            z, iters, residual = _midpoint_step(
                z, dt, f, solver_tol, max_iterations, t
            )
            max_iters = max(max_iters, iters)
            max_residual = max(max_residual, residual)
        elif method == "rk4_reference":
            z = _rk4_step(z, dt, f)
        else:
            z, chi = _tao_step(z, chi, dt, grad, tao_omega)
        if step % record_every == 0 or step == n_steps:
            if not np.all(np.isfinite(z.view(float))):
                raise IntegrationError("non-finite amplitudes", t)
            current = state0.with_amplitudes(z)
            times.append(t)
            reports.append(make_report(current, model, split=split))
            n_records += 1
            if snapshot_every > 0 and (n_records % snapshot_every == 0 or step == n_steps):
                snapshots.append((t, current))

    return TrajectoryRecord(
        times=np.array(times),
        reports=reports,
        method=method,
        dt=dt,
        max_residual=max_residual,
        max_iterations_used=max_iters,
        snapshots=snapshots,
        final_state=state0.with_amplitudes(z),
        info={"w": model.w, "label": model.label, "n_steps": n_steps},
    )


# ---------------------------------------------------------------------------
# sensitivity experiments
# ---------------------------------------------------------------------------

@dataclass
class SensitivityResult:
    """Divergence diagnostics of two trajectories started nearby."""

    times: np.ndarray
    prob_distance: np.ndarray      # L2 distance between readout distributions
    delta_readout: np.ndarray      # <S>_a - <S>_b
    readout_a: np.ndarray
    readout_b: np.ndarray


def _readout_series(record: TrajectoryRecord):
    values = []
    dists = []
    for _, state in record.snapshots:
        p = state.readout_distribution()
        s = state.readout_values()
        dists.append(p)
        values.append(float(np.sum(p * s)))
    return np.array(values), np.array(dists)


def sensitivity_run(
    state_a: State,
    state_b: State,
    model: ModelSpec,
    t_final: float,
    dt: float,
    record_every: int = 1,
    method: str = "implicit_midpoint",
) -> SensitivityResult:
    """Evolve two nearby states and track how their readouts diverge."""
    kwargs = dict(
        method=method, record_every=record_every, snapshot_every=1
    )
    rec_a = evolve(state_a, model, t_final, dt, **kwargs)
    rec_b = evolve(state_b, model, t_final, dt, **kwargs)
    s_a, p_a = _readout_series(rec_a)
    s_b, p_b = _readout_series(rec_b)
    times = np.array([t for t, _ in rec_a.snapshots])
    dist = np.sqrt(np.sum((p_a - p_b) ** 2, axis=1))
    return SensitivityResult(
        times=times,
        prob_distance=dist,
        delta_readout=s_a - s_b,
        readout_a=s_a,
        readout_b=s_b,
    )
