"""Numerical verification of the operator-family admissibility constraints.

For a candidate family {O_i} the dispersion penalty adds the state-dependent
operator B = (sum O_i)^2 - 2 <sum O_i> (sum O_i) to the flow.  Whether the
center-of-mass equations stay unmodified reduces to commutator conditions:
for each particle k the expectations

    <psi| [X_k, G] |psi>   and   <psi| [P_k, G] |psi>

must vanish, where G collects the O_k-bearing part of B,

    G = O_k^2 + 2 sum_{j != k} O_j O_k - 2 (sum_i <O_i>) O_k,

and B - G commutes with X_k (it involves no O_k factor).  Position and
spectral-momentum candidates pass these checks up to the measured grid
calibration floor; the angular-momentum candidates fail, with the failure of
the position check quantified by a real anomaly F_k entering the velocity law

    d<X_k>/dt = <P_k>/m + ANOMALY_PREFACTOR * w * F_k.

Discrete grids violate canonical commutators near box edges and band edges,
so every verdict is calibrated: the pass tolerance is 100x the measured
residual of [X, P] psi = i psi on the same test-state family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ModelSpec, evolve
from .observables import com_and_momentum
from .states import (
    ANGULAR_MOMENTUM_LZ,
    GridState,
    MOMENTUM_PX,
    OperatorFamily,
    POSITION_X,
    SPIN_Z,
    StateError,
    TOTAL_JZ,
)

# Global constant relating the anomaly expectation to the velocity law; fixed
# empirically by the dynamical cross-check (anomaly_dynamic_check) and frozen.
# With F_k defined as (1/i) <[X_k, G]> the fitted value is 1.
ANOMALY_PREFACTOR = 1.0

CANDIDATES = (POSITION_X, MOMENTUM_PX, ANGULAR_MOMENTUM_LZ, TOTAL_JZ)
TOLERANCE_FACTOR = 100.0
PRODUCT_TOL = 1e-10


class CalibrationError(RuntimeError):
    """The grid calibration floor is too poor to support a verdict."""


class OperatorSet:
    """Matrix-free actions of X_k, Y_k, P_{x,k}, P_{y,k}, L_{z,k}, S_{z,k}.

    Built from the geometry of a template grid state; all methods map flat
    amplitude vectors to flat amplitude vectors.
    """

    def __init__(self, template: GridState):
        self.template = template
        self.shape = template.tensor_shape
        self.coords = template.coordinates()
        self.wavenumbers = template.wavenumbers()
        self.weight = template.measure_weight

    # -- single-operator actions ---------------------------------------------

    def _mul(self, z, values, axis):
        t = z.reshape(self.shape)
        shape = [1] * t.ndim
        shape[axis] = len(values)
        return (t * values.reshape(shape)).reshape(-1)

    def _spectral(self, z, axis):
        t = z.reshape(self.shape)
        shape = [1] * t.ndim
        shape[axis] = len(self.wavenumbers)
        ft = np.fft.fft(t, axis=axis)
        return np.fft.ifft(ft * self.wavenumbers.reshape(shape), axis=axis).reshape(-1)

    def x(self, z, k):
        return self._mul(z, self.coords, self.template.spatial_axis(k, 0))

    def y(self, z, k):
        return self._mul(z, self.coords, self.template.spatial_axis(k, 1))

    def px(self, z, k):
        return self._spectral(z, self.template.spatial_axis(k, 0))

    def py(self, z, k):
        return self._spectral(z, self.template.spatial_axis(k, 1))

    def lz(self, z, k):
        return self.x(self.py(z, k), k) - self.y(self.px(z, k), k)

    def sz(self, z, k):
        return self._mul(z, np.array([0.5, -0.5]), self.template.spin_axis(k))

    def site_apply(self, kind, z, k):
        if kind == POSITION_X:
            return self.x(z, k)
        if kind == MOMENTUM_PX:
            return self.px(z, k)
        if kind == ANGULAR_MOMENTUM_LZ:
            return self.lz(z, k)
        if kind == SPIN_Z:
            return self.sz(z, k)
        if kind == TOTAL_JZ:
            return self.lz(z, k) + self.sz(z, k)
        raise StateError(f"unknown candidate kind {kind!r}")

    def inner(self, a, b) -> complex:
        return complex(np.vdot(a, b)) * self.weight

    def norm(self, a) -> float:
        return math.sqrt(float(np.vdot(a, a).real) * self.weight)

    def expectation(self, psi, kind, k) -> float:
        val = self.inner(psi, self.site_apply(kind, psi, k))
        return float(val.real)

    # -- diagnostics ----------------------------------------------------------

    def symmetry_defect(self, kind, k, a, b) -> float:
        """|<a|Ob> - <Oa|b>| for the site operator."""
        return abs(
            self.inner(a, self.site_apply(kind, b, k))
            - self.inner(self.site_apply(kind, a, k), b)
        )

    def calibration_residual(self, states) -> float:
        """max ||[X, P] psi - i psi|| over states, particles and axes."""
        worst = 0.0
        for state in states:
            z = state.amplitudes
            for k in range(self.template.n_particles):
                pairs = [(self.x, self.px)]
                if self.template.dims_per_particle == 2:
                    pairs.append((self.y, self.py))
                for pos, mom in pairs:
                    comm = pos(mom(z, k), k) - mom(pos(z, k), k)
                    worst = max(worst, self.norm(comm - 1j * z))
        return worst


# ---------------------------------------------------------------------------
# the G operator and its commutator checks
# ---------------------------------------------------------------------------

def build_G(ops: OperatorSet, state: GridState, k: int, kind: str):
    """State-dependent actions (G, rest) with G + rest = the full penalty bracket.

    G carries every O_k-bearing term; rest commutes with X_k and P_k.  The
    site expectations O_i(psi) are evaluated on the supplied state.
    """
    n = ops.template.n_particles
    if not 0 <= k < n:
        raise StateError(f"particle index {k} out of range")
    exps = [ops.expectation(state.amplitudes, kind, i) for i in range(n)]
    total_exp = sum(exps)
    others = [j for j in range(n) if j != k]

    def apply_g(z):
        ok_z = ops.site_apply(kind, z, k)
        out = ops.site_apply(kind, ok_z, k)
        for j in others:
            out = out + 2.0 * ops.site_apply(kind, ok_z, j)
        return out - 2.0 * total_exp * ok_z

    def apply_rest(z):
        acc = np.zeros_like(z)
        for j in others:
            oj_z = ops.site_apply(kind, z, j)
            acc = acc + (-2.0 * total_exp) * oj_z
            for l in others:
                acc = acc + ops.site_apply(kind, oj_z, l)
        return acc

    return apply_g, apply_rest


@dataclass
class CheckValue:
    """One commutator expectation with its magnitude scale."""

    value: complex
    scale: float
    term_left: complex
    term_right: complex


def _commutator_expectation(ops, state, k, apply_g, conjugator) -> CheckValue:
    z = state.amplitudes
    gz = apply_g(z)
    cz = conjugator(z, k)
    left = ops.inner(z, conjugator(gz, k))      # <psi| C G |psi>
    right = ops.inner(z, apply_g(cz))           # <psi| G C |psi>
    value = left - right
    scale = ops.norm(gz) * ops.norm(cz)
    # expectations of commutators of symmetric operators are purely imaginary
    if abs(value.real) > max(1e-10 * scale, 1e-13):
        raise AssertionError(
            f"commutator expectation not purely imaginary: {value!r} at scale {scale}"
        )
    return CheckValue(value=value, scale=scale, term_left=left, term_right=right)


def check_com_position(ops: OperatorSet, state: GridState, k: int, kind: str) -> CheckValue:
    """<psi|[X_k, G]|psi>; zero (within tolerance) leaves the velocity law intact."""
    apply_g, _ = build_G(ops, state, k, kind)
    return _commutator_expectation(ops, state, k, apply_g, ops.x)


def check_com_momentum(ops: OperatorSet, state: GridState, k: int, kind: str) -> CheckValue:
    """<psi|[P_k, G]|psi>; zero keeps the force law free of extra terms."""
    apply_g, _ = build_G(ops, state, k, kind)
    return _commutator_expectation(ops, state, k, apply_g, ops.px)


def anomaly_F(ops: OperatorSet, state: GridState, k: int) -> float:
    """The real anomaly F_k = (1/i) <[X_k, G]> of the angular-momentum family.

    Evaluated from its displayed three-term form:
    F_k = -<Y_k L_k + L_k Y_k> - 2 sum_{j != k} <L_j Y_k> + 2 <sum L> <Y_k>.
    """
    if ops.template.dims_per_particle != 2:
        raise StateError("the anomaly needs 2D particles")
    z = state.amplitudes
    n = ops.template.n_particles
    yz = ops.y(z, k)
    lz_k = ops.lz(z, k)
    anti = ops.inner(z, ops.y(lz_k, k)) + ops.inner(z, ops.lz(yz, k))
    cross = 0.0
    for j in range(n):
        if j != k:
            cross += ops.inner(z, ops.lz(yz, j)).real
    l_total = sum(ops.expectation(z, ANGULAR_MOMENTUM_LZ, j) for j in range(n))
    y_mean = ops.inner(z, yz).real
    return -anti.real - 2.0 * cross + 2.0 * l_total * y_mean


# ---------------------------------------------------------------------------
# spin-sector terms of the L + S candidate
# ---------------------------------------------------------------------------

@dataclass
class SpinSectorValues:
    ii_value: complex
    iii_value: complex
    is_product: bool             # space (x) spin product structure detected
    schmidt_ratio: float


def _space_spin_schmidt_ratio(state: GridState) -> float:
    n_space = state.grid_points ** (state.dims_per_particle * state.n_particles)
    mat = state.amplitudes.reshape(n_space, -1)
    s = np.linalg.svd(mat, compute_uv=False)
    return float(s[1] / s[0]) if s.size > 1 else 0.0


def check_spin_sector(ops: OperatorSet, state: GridState, k: int) -> SpinSectorValues:
    """Evaluate the pure-spin (II) and cross (III) parts of the position check.

    II collects the S-only terms of G for O = L + S and commutes with X_k
    exactly; III collects the L-S cross terms, whose expectation cancels on
    space (x) spin product states.  Non-product inputs are evaluated anyway
    and flagged via ``is_product``.
    """
    if ops.template.spin_levels != 2:
        raise StateError("spin-sector checks need spin-carrying grid states")
    z = state.amplitudes
    n = ops.template.n_particles
    s_exp = sum(ops.expectation(z, SPIN_Z, j) for j in range(n))
    l_exp = sum(ops.expectation(z, ANGULAR_MOMENTUM_LZ, j) for j in range(n))
    others = [j for j in range(n) if j != k]

    def apply_ii(v):
        sk = ops.sz(v, k)
        out = ops.sz(sk, k)
        for j in others:
            out = out + 2.0 * ops.sz(sk, j)
        return out - 2.0 * s_exp * sk

    def apply_iii(v):
        sk = ops.sz(v, k)
        lk = ops.lz(v, k)
        out = 2.0 * ops.sz(lk, k)
        for j in others:
            out = out + 2.0 * (ops.sz(lk, j) + ops.lz(sk, j))
        return out - 2.0 * s_exp * lk - 2.0 * l_exp * sk

    ii = _commutator_expectation_raw(ops, z, k, apply_ii)
    iii = _commutator_expectation_raw(ops, z, k, apply_iii)
    ratio = _space_spin_schmidt_ratio(state)
    return SpinSectorValues(
        ii_value=ii, iii_value=iii, is_product=ratio <= PRODUCT_TOL, schmidt_ratio=ratio
    )


def _commutator_expectation_raw(ops, z, k, apply_op) -> complex:
    gz = apply_op(z)
    return ops.inner(z, ops.x(gz, k)) - ops.inner(z, apply_op(ops.x(z, k)))


# ---------------------------------------------------------------------------
# dense-matrix oracle (capped at 16x16 single-particle 2D grids)
# ---------------------------------------------------------------------------

DENSE_MAX_GRID = 16


class DenseOracle:
    """Dense single-particle matrices applied through tensor leg contraction.

    Momentum uses the unitary DFT matrix instead of FFTs, so agreement with
    the matrix-free path is a genuine cross-implementation check.
    """

    def __init__(self, template: GridState):
        if template.grid_points > DENSE_MAX_GRID:
            raise StateError(f"dense oracle capped at {DENSE_MAX_GRID} grid points per axis")
        self.template = template
        g = template.grid_points
        f = np.fft.fft(np.eye(g)) / math.sqrt(g)
        p1 = f.conj().T @ np.diag(template.wavenumbers()) @ f
        x1 = np.diag(template.coordinates())
        eye = np.eye(g)
        if template.dims_per_particle == 2:
            self.x_mat = np.kron(x1, eye)
            self.y_mat = np.kron(eye, x1)
            self.px_mat = np.kron(p1, eye)
            self.py_mat = np.kron(eye, p1)
            self.lz_mat = self.x_mat @ self.py_mat - self.y_mat @ self.px_mat
        else:
            self.x_mat = x1
            self.px_mat = p1

    def _apply_particle(self, mat, z, k):
        t = self.template
        g, d = t.grid_points, t.dims_per_particle
        tensor = z.reshape(t.tensor_shape)
        axes = list(range(k * d, (k + 1) * d))
        moved = np.moveaxis(tensor, axes, range(d))
        folded = moved.reshape(g**d, -1)
        out = (mat @ folded).reshape(moved.shape)
        return np.moveaxis(out, range(d), axes).reshape(-1)

    def site_apply(self, kind, z, k):
        if kind == POSITION_X:
            return self._apply_particle(self.x_mat, z, k)
        if kind == MOMENTUM_PX:
            return self._apply_particle(self.px_mat, z, k)
        if kind == ANGULAR_MOMENTUM_LZ:
            return self._apply_particle(self.lz_mat, z, k)
        if kind == SPIN_Z:
            t = self.template
            tensor = z.reshape(t.tensor_shape)
            shape = [1] * tensor.ndim
            shape[t.spin_axis(k)] = 2
            return (tensor * np.array([0.5, -0.5]).reshape(shape)).reshape(-1)
        if kind == TOTAL_JZ:
            return self.site_apply(ANGULAR_MOMENTUM_LZ, z, k) + self.site_apply(SPIN_Z, z, k)
        raise StateError(f"unknown candidate kind {kind!r}")


def dense_check_com_position(state: GridState, k: int, kind: str) -> complex:
    """Dense-matrix evaluation of <psi|[X_k, G]|psi> for cross-validation."""
    oracle = DenseOracle(state)
    weight = state.measure_weight
    n = state.n_particles
    z = state.amplitudes

    def inner(a, b):
        return complex(np.vdot(a, b)) * weight

    exps = [inner(z, oracle.site_apply(kind, z, i)).real for i in range(n)]
    total = sum(exps)

    def apply_g(v):
        ok_v = oracle.site_apply(kind, v, k)
        out = oracle.site_apply(kind, ok_v, k)
        for j in range(n):
            if j != k:
                out = out + 2.0 * oracle.site_apply(kind, ok_v, j)
        return out - 2.0 * total * ok_v

    gz = apply_g(z)
    xz = oracle._apply_particle(oracle.x_mat, z, k)
    return inner(z, oracle._apply_particle(oracle.x_mat, gz, k)) - inner(z, apply_g(xz))


# ---------------------------------------------------------------------------
# test-state family and the constraint table
# ---------------------------------------------------------------------------

def correlated_gaussian_state(
    grid_points=32,
    box_half_width=9.0,
    sigma=0.8,
    xy_corr=0.3,
    centers=((0.6, 0.4), (-0.5, 0.3)),
    boosts=((0.5, -0.35), (-0.3, 0.45)),
    phase_xy=0.25,
    n_particles=2,
    spin=None,
    normalize=True,
) -> GridState:
    """2D Gaussian product over particles with correlations and phase structure.

    The xy correlation and the phase terms (per-particle plane-wave boosts
    plus an xy phase curvature) activate the angular-momentum anomaly, which
    vanishes identically on real (time-reversal-symmetric) wavefunctions; the
    displaced centers give its <Y_k> term something to see.  An optional spin
    vector (shape (2,)*n_particles) attaches a spin factor.
    """
    if not -0.99 < xy_corr < 0.99:
        raise StateError("xy correlation must lie in (-1, 1)")
    spin_levels = 1 if spin is None else 2
    g = int(grid_points)
    size = g ** (2 * n_particles) * spin_levels**n_particles
    template = GridState(
        n_particles, 2, g, float(box_half_width),
        np.zeros(size, dtype=complex), spin_levels=spin_levels, normalized=False,
    )
    x = template.coordinates()
    tensor = None
    for p in range(n_particles):
        cx, cy = centers[p % len(centers)]
        bx, by = boosts[p % len(boosts)]
        dx = (x - cx)[:, None]
        dy = (x - cy)[None, :]
        blob = np.exp(
            -(dx**2 + dy**2 - 2.0 * xy_corr * dx * dy) / (4.0 * sigma**2)
            + 1j * (bx * dx + by * dy + phase_xy * dx * dy)
        )
        tensor = blob if tensor is None else np.multiply.outer(tensor, blob)
    amps = tensor.reshape(-1)
    if spin is not None:
        chi = np.asarray(spin, dtype=complex).reshape(-1)
        chi = chi / np.linalg.norm(chi)
        amps = np.multiply.outer(amps, chi).reshape(-1)
    if normalize:
        amps = amps / math.sqrt(float(np.vdot(amps, amps).real) * template.measure_weight)
    return template.with_amplitudes(amps, normalized=normalize)


def admissibility_family(grid_points=32, box_half_width=9.0, with_spin=False, n_states=2):
    """The correlated Gaussian test-state family used for calibrated verdicts."""
    variants = [
        dict(xy_corr=0.3, centers=((0.6, 0.4), (-0.5, 0.3)),
             boosts=((0.5, -0.35), (-0.3, 0.45)), phase_xy=0.25),
        dict(xy_corr=-0.4, centers=((-0.3, 0.55), (0.45, -0.35)),
             boosts=((-0.4, 0.3), (0.35, -0.5)), phase_xy=-0.2),
        dict(xy_corr=0.2, centers=((0.2, -0.6), (0.5, 0.25)),
             boosts=((0.3, 0.4), (-0.45, -0.3)), phase_xy=0.3),
    ]
    spin = None
    if with_spin:
        spin = np.array([[0.8, 0.1], [0.2, 0.55]])
    states = [
        correlated_gaussian_state(
            grid_points, box_half_width, spin=spin, **variants[i % len(variants)]
        )
        for i in range(n_states)
    ]
    return states


@dataclass
class ConstraintCheck:
    name: str
    value: complex
    scale: float
    tolerance: float
    passed: bool


@dataclass
class ConstraintReport:
    """Calibrated pass/fail record of one candidate family."""

    candidate: str
    checks: list
    calibration_residual: float
    verdict: str = field(init=False)

    def __post_init__(self):
        self.verdict = "pass" if all(c.passed for c in self.checks) else "fail"

    def to_json_dict(self) -> dict:
        return {
            "candidate": self.candidate,
            "checks": [
                {
                    "name": c.name,
                    "value_re": float(c.value.real),
                    "value_im": float(c.value.imag),
                    "scale": c.scale,
                    "tolerance": c.tolerance,
                    "pass": c.passed,
                }
                for c in self.checks
            ],
            "calibration_residual": self.calibration_residual,
        }


def run_admissibility(
    grid_points=32,
    box_half_width=9.0,
    candidates=CANDIDATES,
    n_states=2,
    calibration_floor=1e-4,
) -> list:
    """Evaluate the position/momentum commutator table for each candidate.

    Verdict tolerance is TOLERANCE_FACTOR times the measured [X, P]
    calibration residual of the same state family; a calibration residual
    above ``calibration_floor`` refuses to report verdicts.
    """
    reports = []
    for kind in candidates:
        with_spin = kind in (SPIN_Z, TOTAL_JZ)
        states = admissibility_family(grid_points, box_half_width, with_spin, n_states)
        ops = OperatorSet(states[0])
        residual = ops.calibration_residual(states)
        if residual > calibration_floor:
            raise CalibrationError(
                f"[X,P] calibration residual {residual:.3e} exceeds "
                f"{calibration_floor:.0e}; refine the grid before judging candidates"
            )
        tolerance = TOLERANCE_FACTOR * residual
        checks = []
        for i, state in enumerate(states):
            for k in range(state.n_particles):
                pos = check_com_position(ops, state, k, kind)
                checks.append(
                    ConstraintCheck(
                        name=f"com_position[k={k},state={i}]",
                        value=pos.value,
                        scale=pos.scale,
                        tolerance=tolerance,
                        passed=abs(pos.value) <= tolerance * pos.scale,
                    )
                )
                mom = check_com_momentum(ops, state, k, kind)
                checks.append(
                    ConstraintCheck(
                        name=f"com_momentum[k={k},state={i}]",
                        value=mom.value,
                        scale=mom.scale,
                        tolerance=tolerance,
                        passed=abs(mom.value) <= tolerance * mom.scale,
                    )
                )
                if kind in (ANGULAR_MOMENTUM_LZ, TOTAL_JZ):
                    anomaly = (pos.value / 1j).real
                    checks.append(
                        ConstraintCheck(
                            name=f"anomaly[k={k},state={i}]",
                            value=complex(anomaly),
                            scale=pos.scale,
                            tolerance=tolerance,
                            passed=abs(anomaly) <= tolerance * pos.scale,
                        )
                    )
        reports.append(
            ConstraintReport(candidate=kind, checks=checks, calibration_residual=residual)
        )
    return reports


# ---------------------------------------------------------------------------
# dynamical cross-check of the anomaly prefactor
# ---------------------------------------------------------------------------

def anomaly_dynamic_check(
    grid_points=12,
    box_half_width=5.0,
    w=2e-3,
    mass=1.0,
    spring=0.5,
    t_final=0.4,
    dt=0.005,
    k_particle=0,
    sigma=0.7,
    xy_corr=0.35,
):
    """Fit the constant c in d<X_k>/dt = <P_k>/m + c * w * F_k along a trajectory.

    Runs the angular-momentum-family flow on a two-particle 2D grid and
    compares the centered finite difference of <X_k> against the velocity law;
    returns the fitted constant and the relative residual of the fit.
    """
    state0 = correlated_gaussian_state(
        grid_points, box_half_width, sigma=sigma, xy_corr=xy_corr,
        centers=((0.7, 0.5), (-0.6, 0.4)),
    )
    ops = OperatorSet(state0)
    x = state0.coordinates()

    def h_apply(state):
        z = state.amplitudes
        out = np.zeros_like(z)
        for k in range(state.n_particles):
            for dim in range(2):
                ax = state.spatial_axis(k, dim)
                t = z.reshape(state.tensor_shape)
                ft = np.fft.fft(t, axis=ax)
                shape = [1] * t.ndim
                shape[ax] = x.size
                k2 = state.wavenumbers() ** 2
                out += np.fft.ifft(ft * k2.reshape(shape), axis=ax).reshape(-1) / (2 * mass)
                out += (t * (spring * 0.5 * x**2).reshape(shape)).reshape(-1)
        return out

    family = OperatorFamily(ANGULAR_MOMENTUM_LZ, tuple(range(state0.n_particles)))
    model = ModelSpec(h_apply=h_apply, w=w, family=family, label="anomaly-check")
    record = evolve(state0, model, t_final, dt, record_every=1, snapshot_every=1)

    times = np.array([t for t, _ in record.snapshots])
    xs, ps, fs = [], [], []
    for _, state in record.snapshots:
        com, mom = com_and_momentum(state)
        # per-particle X_k and P_k rather than the COM averages
        z = state.amplitudes
        xs.append(ops.inner(z, ops.x(z, k_particle)).real)
        ps.append(ops.inner(z, ops.px(z, k_particle)).real)
        fs.append(anomaly_F(ops, state, k_particle))
    xs, ps, fs = map(np.array, (xs, ps, fs))
    dxdt = (xs[2:] - xs[:-2]) / (times[2:] - times[:-2])
    lhs = dxdt - ps[1:-1] / mass
    rhs = w * fs[1:-1]
    fitted = float(np.dot(lhs, rhs) / np.dot(rhs, rhs))
    residual = float(np.linalg.norm(lhs - fitted * rhs) / np.linalg.norm(rhs))
    return {
        "fitted_constant": fitted,
        "relative_residual": residual,
        "frozen_constant": ANOMALY_PREFACTOR,
        "max_anomaly": float(np.abs(fs).max()),
    }
