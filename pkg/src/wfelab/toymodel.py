"""Qubit-plus-apparatus measurement toy model.

One qubit (site 0) couples to an apparatus of M = N-1 spins whose collective
readout S = sum of apparatus spin-z values moves in a double-well potential
V(S) = const (S^2 - R^2)^2 with R = (N-1)/2 and const = delta_v / R^4.  The
kinetic term is -(1/mass) * Delta with the discrete spin-flip Laplacian
Delta = sum_i (flip_i - 1) (reflecting rule: an out-of-range shift maps to the
unshifted configuration), and the qubit couples through alpha_c * s_1 * S.

Simulations default to the 2(M+1)-dimensional symmetric-sector representation,
which is exact for permutation-symmetric initial data; full 2^N runs are kept
for cross-validation at small N.

Default parameter choices not fixed by the model definition: mass = 1,
delta_v = 4 and a coupling alpha_c = -delta_v / 4, with the sign chosen so a
qubit leaning to +1/2 tilts the potential toward positive readout.  The
coupling magnitude puts the qubit branches in the pinning regime (each branch
tilts the wells by about half the barrier height); with a much weaker
coupling the qubit precesses faster than it can steer the apparatus and the
terminal readout sign decorrelates from the qubit bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .dynamics import ModelSpec, TrajectoryRecord, evolve
from .states import (
    OperatorFamily,
    SpinState,
    StateError,
    SymmetricState,
    build_initial_toy,
    embed_symmetric,
)

SQRT_HALF = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class ToyParams:
    """Model and experiment parameters of the measurement toy model."""

    n_spins: int = 10
    mass: float = 1.0
    delta_v: float = 4.0
    alpha_c: float | None = None          # None -> -delta_v / 4
    w: float = 2.0
    center: float = 0.5
    alpha: float = SQRT_HALF
    beta: float = SQRT_HALF
    gamma: float = 0.0
    rho: float = 0.0
    include_qubit_in_wfe: bool = True
    split: float | None = None            # None -> R/2
    cat_threshold: float = 0.25
    side_threshold: float = 0.7

    def __post_init__(self):
        if self.n_spins < 2:
            raise StateError("toy model needs the qubit plus at least one apparatus spin")
        if self.mass <= 0 or self.delta_v <= 0 or self.w < 0:
            raise StateError("need mass > 0, delta_v > 0 and w >= 0")

    @property
    def n_apparatus(self) -> int:
        return self.n_spins - 1

    @property
    def r_well(self) -> float:
        return self.n_apparatus / 2.0

    @property
    def v_const(self) -> float:
        return self.delta_v / self.r_well**4

    @property
    def coupling(self) -> float:
        if self.alpha_c is not None:
            return self.alpha_c
        return -self.delta_v / 4.0

    def wfe_family(self, state) -> OperatorFamily:
        sites = range(state.n_spins) if self.include_qubit_in_wfe else range(1, state.n_spins)
        return OperatorFamily("spin_z", tuple(sites))


def potential(x, params: ToyParams):
    """Double-well readout potential V(x) = const (x^2 - R^2)^2."""
    return params.v_const * (np.asarray(x, dtype=float) ** 2 - params.r_well**2) ** 2


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def _apparatus_flip_matrix(m: int) -> np.ndarray:
    """Collective flip sum_i F_i restricted to the Dicke sector (tridiagonal)."""
    n = np.arange(m)
    hop = np.sqrt((n + 1.0) * (m - n))
    return np.diag(hop, 1) + np.diag(hop, -1)


def toy_laplacian(state):
    """Spin-flip Laplacian sum_i (flip_i - 1) in the state's own representation."""
    if isinstance(state, SymmetricState):
        m = state.n_apparatus
        block = state.block()
        out = block[::-1].copy()                   # qubit flip
        flip = _apparatus_flip_matrix(m)
        out += block @ flip.T                      # apparatus collective flip
        out -= state.n_spins * block
        return state.with_amplitudes(out.reshape(-1))
    if isinstance(state, SpinState):
        tensor = state.tensor()
        out = -state.n_spins * tensor
        for i in range(state.n_spins):
            out = out + np.flip(tensor, axis=i)
        return state.with_amplitudes(out.flatten(order="F"))
    raise StateError("toy_laplacian applies to spin states")


def _diagonal_terms(state, params: ToyParams) -> np.ndarray:
    """V(S) + alpha_c s_1 S evaluated on the state's basis."""
    if isinstance(state, SymmetricState):
        s_vals = state.readout_values()
        v = potential(s_vals, params)
        s1 = np.array([0.5, -0.5])
        diag = v[None, :] + params.coupling * s1[:, None] * s_vals[None, :]
        return diag.reshape(-1)
    idx = np.arange(2**state.n_spins)
    n_down = np.zeros(idx.size)
    for i in range(1, state.n_spins):
        n_down += (idx >> i) & 1
    s_app = (state.n_spins - 1) / 2.0 - n_down
    s1 = 0.5 - (idx & 1)
    return potential(s_app, params) + params.coupling * s1 * s_app


def toy_hamiltonian_apply(state, params: ToyParams):
    """H_QM psi = -(1/mass) Delta psi + V(S) psi + alpha_c s_1 S psi."""
    lap = toy_laplacian(state)
    amps = -lap.amplitudes / params.mass + _diagonal_terms(state, params) * state.amplitudes
    return state.with_amplitudes(amps)


def reduced_hamiltonian_matrix(params: ToyParams) -> np.ndarray:
    """Dense H_QM on the 2(M+1)-dimensional symmetric sector."""
    m = params.n_apparatus
    dim_app = m + 1
    eye2 = np.eye(2)
    eye_app = np.eye(dim_app)
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    lap = (
        np.kron(swap, eye_app)
        + np.kron(eye2, _apparatus_flip_matrix(m))
        - params.n_spins * np.eye(2 * dim_app)
    )
    s_vals = (m - 2.0 * np.arange(dim_app)) / 2.0
    diag = np.kron(eye2, np.diag(potential(s_vals, params)))
    diag += params.coupling * np.kron(np.diag([0.5, -0.5]), np.diag(s_vals))
    return -lap / params.mass + diag


def full_hamiltonian_matrix(params: ToyParams) -> np.ndarray:
    """Dense H_QM on the full 2^N basis (small N only)."""
    n = params.n_spins
    if n > 12:
        raise StateError("full dense Hamiltonian capped at N = 12")
    dim = 2**n
    lap = -n * np.eye(dim)
    idx = np.arange(dim)
    for i in range(n):
        lap[idx, idx ^ (1 << i)] += 1.0
    template = SpinState(n, np.zeros(dim, dtype=complex), normalized=False)
    return -lap / params.mass + np.diag(_diagonal_terms(template, params))


def ground_energy(params: ToyParams) -> float:
    """Smallest eigenvalue of H_QM on the symmetric sector (dense diagonalization)."""
    return float(np.linalg.eigvalsh(reduced_hamiltonian_matrix(params))[0])


def toy_model_spec(params: ToyParams, representation: str = "symmetric") -> ModelSpec:
    """Assemble the ModelSpec driving evolve() for either representation."""
    if representation == "symmetric":
        h = reduced_hamiltonian_matrix(params)
        template = SymmetricState(
            params.n_spins, np.zeros(2 * params.n_apparatus + 2, dtype=complex),
            normalized=False,
        )
    elif representation == "full":
        h = full_hamiltonian_matrix(params)
        template = SpinState(
            params.n_spins, np.zeros(2**params.n_spins, dtype=complex), normalized=False
        )
    else:
        raise StateError(f"unknown representation {representation!r}")
    family = params.wfe_family(template)

    def h_apply(state):
        return h @ state.amplitudes

    return ModelSpec(h_apply=h_apply, w=params.w, family=family,
                     label=f"toy-{representation}")


# ---------------------------------------------------------------------------
# measurement runs
# ---------------------------------------------------------------------------

def classify(p_left: float, p_right: float, params: ToyParams) -> str:
    """Terminal verdict from the well occupations: cat / left / right / undecided."""
    if min(p_left, p_right) >= params.cat_threshold:
        return "cat"
    if p_left >= params.side_threshold:
        return "left"
    if p_right >= params.side_threshold:
        return "right"
    return "undecided"


def stable_dt(params: ToyParams, dt_max: float = 0.01, kappa: float = 0.35) -> float:
    """Step size keeping the midpoint fixed-point iteration contracting.

    The contraction constant is about dt/2 times the stiffest phase rate,
    dominated by the penalty diagonal w * (span of sum S)^2 at large w.
    """
    smax = params.n_spins / 2.0
    lip = (
        2.0 * params.n_spins / params.mass
        + params.delta_v
        + abs(params.coupling) * smax
        + 3.0 * params.w * smax**2
    )
    return min(dt_max, 2.0 * kappa / lip)


def initial_toy_state(params: ToyParams, seed=None) -> SymmetricState:
    rng = np.random.default_rng(seed) if params.rho > 0 else None
    return build_initial_toy(
        params.n_spins, params.alpha, params.beta, params.center,
        gamma=params.gamma, rho=params.rho, rng=rng,
    )


def run_measurement(
    params: ToyParams,
    t_final: float = 13.2,
    dt: float | None = None,
    seed=0,
    method: str = "implicit_midpoint",
    record_every: int = 10,
    representation: str = "symmetric",
    snapshot_every: int = 0,
) -> TrajectoryRecord:
    """One measurement run: banded initial state, evolve, classify the outcome."""
    state = initial_toy_state(params, seed)
    if representation == "full":
        state = embed_symmetric(state)
    model = toy_model_spec(params, representation)
    if dt is None:
        dt = stable_dt(params)
    record = evolve(
        state, model, t_final, dt,
        method=method, record_every=record_every,
        snapshot_every=snapshot_every, split=params.split,
    )
    final = record.reports[-1]
    record.info.update(
        classification=classify(final.p_left, final.p_right, params),
        p_left=final.p_left,
        p_right=final.p_right,
        seed=seed,
        e_wfe_max=max(r.e_wfe for r in record.reports),
        representation=representation,
    )
    return record


# ---------------------------------------------------------------------------
# cat formation sweep
# ---------------------------------------------------------------------------

def _sweep_cell(args):
    params, t_final, dt, seed, record_every = args
    record = run_measurement(
        params, t_final=t_final, dt=dt, seed=seed, record_every=record_every
    )
    return record.info["classification"], record.info["e_wfe_max"]


@dataclass
class SweepResult:
    rows: list                       # dict per (N, w) cell
    n_critical: list                 # (w, N_c or None) per w
    slope: float | None              # log-log slope of N_c against w


def interpolate_n_critical(n_list: Sequence[int], fractions: Sequence[float]):
    """Smallest N with cat fraction below 1/2, linearly interpolated."""
    for i, (n, frac) in enumerate(zip(n_list, fractions)):
        if frac < 0.5:
            if i == 0:
                return float(n)
            n_prev, f_prev = n_list[i - 1], fractions[i - 1]
            return n_prev + (0.5 - f_prev) * (n - n_prev) / (frac - f_prev)
    return None


def cat_sweep(
    n_list: Sequence[int],
    w_list: Sequence[float],
    delta_v: float = 1.0,
    trials: int = 5,
    seed=0,
    t_final: float = 10.0,
    dt: float | None = None,
    base: ToyParams | None = None,
    record_every: int = 20,
    n_jobs: int = 1,
) -> SweepResult:
    """Cat-formation frequency over an (N, w) grid with randomized trials.

    Each cell runs ``trials`` independent randomized initial states; per w the
    critical size N_c (cat fraction crossing 1/2) is interpolated and the
    log-log slope of N_c against w is fitted over the resolvable w values.
    """
    if base is None:
        base = ToyParams()
    if base.rho == 0.0:
        base = replace(base, rho=1e-3)
    jobs = []
    seeds = np.random.SeedSequence(seed).generate_state(
        len(n_list) * len(w_list) * trials, dtype=np.uint64
    )
    j = 0
    for n in n_list:
        for w in w_list:
            params = replace(base, n_spins=int(n), w=float(w), delta_v=delta_v)
            for _ in range(trials):
                cell_dt = dt if dt is not None else stable_dt(params)
                jobs.append((params, t_final, cell_dt, int(seeds[j]), record_every))
                j += 1
    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(_sweep_cell, jobs))
    else:
        outcomes = [_sweep_cell(job) for job in jobs]

    rows = []
    j = 0
    for n in n_list:
        for w in w_list:
            cell = outcomes[j: j + trials]
            j += trials
            labels = [c[0] for c in cell]
            rows.append(
                {
                    "N": int(n),
                    "w": float(w),
                    "trials": trials,
                    "cat_fraction": labels.count("cat") / trials,
                    "left_fraction": labels.count("left") / trials,
                    "right_fraction": labels.count("right") / trials,
                    "undecided_fraction": labels.count("undecided") / trials,
                    "mean_E_wfe_max": float(np.mean([c[1] for c in cell])),
                }
            )
    n_critical = []
    for w in w_list:
        fracs = [r["cat_fraction"] for r in rows if r["w"] == float(w)]
        n_critical.append((float(w), interpolate_n_critical(list(n_list), fracs)))
    usable = [(w, nc) for w, nc in n_critical if w > 0 and nc is not None]
    slope = None
    if len(usable) >= 2:
        lw = np.log([w for w, _ in usable])
        ln = np.log([nc for _, nc in usable])
        slope = float(np.polyfit(lw, ln, 1)[0])
    return SweepResult(rows=rows, n_critical=n_critical, slope=slope)
