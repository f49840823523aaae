import math

import numpy as np
import pytest

from wfelab import dynamics as dyn
from wfelab import states as st
from wfelab import toymodel as toy
from wfelab.observables import energies

from conftest import random_symmetric


# ---------------------------------------------------------------------------
# the spin-flip Laplacian
# ---------------------------------------------------------------------------

def test_laplacian_single_spin():
    # reflecting rule on one spin: each out-of-range shift maps to the
    # unshifted value, leaving flip-minus-identity
    one = st.SpinState(1, np.array([1.0, 0.0], dtype=complex))
    out = toy.toy_laplacian(one)
    assert np.allclose(out.amplitudes, [-1.0, 1.0])


def test_laplacian_dicke_m2():
    # apparatus part of Delta on |n=0>: sqrt(2)|n=1> - 2|n=0>
    amps = np.zeros(6, dtype=complex)
    amps[0] = 1.0
    out = toy.toy_laplacian(st.SymmetricState(3, amps)).block()
    # total includes the qubit flip: -3 on (up, 0), +1 on (down, 0)
    assert abs(out[0, 0] - (-3.0)) <= 1e-14
    assert abs(out[0, 1] - math.sqrt(2)) <= 1e-14
    assert abs(out[1, 0] - 1.0) <= 1e-14
    assert abs(out[0, 2]) + abs(out[1, 1]) + abs(out[1, 2]) <= 1e-14


@pytest.mark.parametrize("n_spins", [3, 5, 8])
def test_laplacian_reduced_equals_full(n_spins, rng):
    s = random_symmetric(n_spins, rng)
    reduced = toy.toy_laplacian(s)
    full = toy.toy_laplacian(st.embed_symmetric(s))
    back = st.project_symmetric(full)
    assert np.abs(back.amplitudes - reduced.amplitudes).max() <= 1e-12


@pytest.mark.parametrize("n_spins", [4, 7])
def test_hamiltonian_reduced_equals_full(n_spins, rng):
    params = toy.ToyParams(n_spins=n_spins, w=0.7)
    s = random_symmetric(n_spins, rng)
    reduced = toy.toy_hamiltonian_apply(s, params)
    full = toy.toy_hamiltonian_apply(st.embed_symmetric(s), params)
    back = st.project_symmetric(full)
    assert np.abs(back.amplitudes - reduced.amplitudes).max() <= 1e-12


def test_dense_matrices_match_appliers(rng):
    params = toy.ToyParams(n_spins=6, w=0.0)
    s = random_symmetric(6, rng)
    h_red = toy.reduced_hamiltonian_matrix(params)
    assert np.abs(h_red @ s.amplitudes
                  - toy.toy_hamiltonian_apply(s, params).amplitudes).max() <= 1e-12
    full = st.embed_symmetric(s)
    h_full = toy.full_hamiltonian_matrix(params)
    assert np.abs(h_full @ full.amplitudes
                  - toy.toy_hamiltonian_apply(full, params).amplitudes).max() <= 1e-12


# ---------------------------------------------------------------------------
# the readout potential
# ---------------------------------------------------------------------------

def test_potential_reference_points():
    params = toy.ToyParams(n_spins=9, delta_v=2.5)
    r = params.r_well
    assert toy.potential(r, params) == 0.0
    assert toy.potential(-r, params) == 0.0
    assert abs(toy.potential(0.0, params) - 2.5) <= 1e-14


def test_potential_quarter_point():
    params = toy.ToyParams(n_spins=5, delta_v=1.0)   # R = 2
    assert abs(toy.potential(1.0, params) - 0.5625) <= 1e-14


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

REPORT_ATTRS = ("norm", "m", "dispersion", "e_qm", "e_wfe", "e_total",
                "p_left", "p_right")


def test_reduced_equals_full_trajectory_short():
    params = toy.ToyParams(n_spins=6, mass=5.0, delta_v=0.8, alpha_c=-0.2, w=0.1)
    rec_r = toy.run_measurement(params, t_final=5.0, dt=0.01, seed=2,
                                record_every=25)
    rec_f = toy.run_measurement(params, t_final=5.0, dt=0.01, seed=2,
                                record_every=25, representation="full")
    for ra, rb in zip(rec_r.reports, rec_f.reports):
        for attr in REPORT_ATTRS:
            assert abs(getattr(ra, attr) - getattr(rb, attr)) <= 1e-10


def test_swap_reflection_symmetry():
    # (alpha, beta) -> (beta, alpha) with n -> M-n maps trajectories onto
    # each other; all observables coincide with m (and <S>) negated
    a, b = 0.8, 0.6
    p_fwd = toy.ToyParams(n_spins=8, w=0.8, alpha=a, beta=b)
    p_rev = toy.ToyParams(n_spins=8, w=0.8, alpha=b, beta=a)
    rec_a = toy.run_measurement(p_fwd, t_final=4.0, dt=0.005, record_every=40)
    rec_b = toy.run_measurement(p_rev, t_final=4.0, dt=0.005, record_every=40)
    for ra, rb in zip(rec_a.reports, rec_b.reports):
        assert abs(ra.norm - rb.norm) <= 1e-10
        assert abs(ra.dispersion - rb.dispersion) <= 1e-10
        assert abs(ra.e_total - rb.e_total) <= 1e-10
        assert abs(ra.m + rb.m) <= 1e-10
        assert abs(ra.p_left - rb.p_right) <= 1e-10
        assert abs(ra.p_right - rb.p_left) <= 1e-10


def test_energy_budget_bound():
    params = toy.ToyParams(w=1.5, rho=1e-3)
    e_min = toy.ground_energy(params)
    record = toy.run_measurement(params, t_final=8.0, seed=6, record_every=20)
    e_total0 = record.reports[0].e_total
    for report in record.reports:
        assert report.e_wfe <= e_total0 - e_min + 1e-6


# ---------------------------------------------------------------------------
# measurement outcomes
# ---------------------------------------------------------------------------

def test_measurement_cat_forms_without_penalty():
    params = toy.ToyParams(w=0.0)
    record = toy.run_measurement(params, dt=0.01, seed=0)
    assert record.info["classification"] == "cat"
    assert min(record.info["p_left"], record.info["p_right"]) >= 0.4


def test_measurement_blocked_at_large_penalty():
    params = toy.ToyParams(w=0.0, rho=1e-3)
    state0 = toy.initial_toy_state(params, seed=0)
    e_qm0 = energies(state0, toy.toy_model_spec(params))[0]
    w_big = 1e3 * (params.delta_v + e_qm0) / params.r_well**2
    blocked = toy.ToyParams(w=w_big, rho=1e-3)
    e_min = toy.ground_energy(blocked)
    record = toy.run_measurement(blocked, t_final=0.6, seed=0, record_every=400)
    assert record.info["classification"] != "cat"
    assert record.info["e_wfe_max"] <= record.reports[0].e_total - e_min + 1e-6


def test_measurement_single_branch_goes_right():
    params = toy.ToyParams(alpha=1.0, beta=0.0, w=3.0)
    record = toy.run_measurement(params, t_final=33.5, seed=0)
    assert record.info["classification"] == "right"


def test_classify_thresholds():
    params = toy.ToyParams()
    assert toy.classify(0.3, 0.3, params) == "cat"
    assert toy.classify(0.75, 0.1, params) == "left"
    assert toy.classify(0.05, 0.9, params) == "right"
    assert toy.classify(0.2, 0.5, params) == "undecided"


def test_stable_dt_contracts():
    params = toy.ToyParams(w=50.0)
    dt = toy.stable_dt(params)
    record = toy.run_measurement(params, t_final=50 * dt, dt=dt, seed=1,
                                 record_every=10)
    assert record.max_iterations_used < 50


# ---------------------------------------------------------------------------
# cat sweep
# ---------------------------------------------------------------------------

def test_cat_sweep_shape_and_monotonicity():
    result = toy.cat_sweep([8, 10], [0.0, 1.0, 20.0], trials=3, seed=1,
                           t_final=10.0)
    assert len(result.rows) == 6
    for row in result.rows:
        total = (row["cat_fraction"] + row["left_fraction"]
                 + row["right_fraction"] + row["undecided_fraction"])
        assert abs(total - 1.0) <= 1e-12
    for n in (8, 10):
        fracs = [r["cat_fraction"] for r in result.rows if r["N"] == n]
        assert fracs == sorted(fracs, reverse=True)      # non-increasing in w
        assert fracs[0] == 1.0                           # w = 0 column
        assert fracs[-1] == 0.0                         # strongly penalized


def test_interpolate_n_critical():
    assert toy.interpolate_n_critical([4, 8, 12], [1.0, 1.0, 1.0]) is None
    assert toy.interpolate_n_critical([4, 8, 12], [0.2, 0.1, 0.0]) == 4.0
    nc = toy.interpolate_n_critical([4, 8, 12], [1.0, 0.75, 0.25])
    assert abs(nc - 10.0) <= 1e-12


def test_cat_sweep_critical_size_and_slope():
    # with fixed well depth the blocking threshold moves to smaller N as w
    # grows; N_c(w) decreases and the fitted log-log slope is negative
    result = toy.cat_sweep([6, 8, 10, 12], [0.06, 0.25], trials=3, seed=3,
                           t_final=10.0)
    ncs = dict(result.n_critical)
    assert ncs[0.06] is not None and ncs[0.25] is not None
    assert ncs[0.25] < ncs[0.06]
    assert result.slope < 0
