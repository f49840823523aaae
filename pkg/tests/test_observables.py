import math

import numpy as np
import pytest

from wfelab import states as st
from wfelab import observables as obs
from wfelab.dynamics import ModelSpec
from wfelab.toymodel import ToyParams, toy_model_spec

from conftest import gaussian_grid, random_spin, random_symmetric


def apparatus_family(n_spins):
    return st.OperatorFamily("spin_z", tuple(range(1, n_spins)))


# ---------------------------------------------------------------------------
# dispersion
# ---------------------------------------------------------------------------

def test_dispersion_eigenstate_is_zero():
    # |S = R>: all apparatus spins up
    amps = np.zeros(2 * 7, dtype=complex)
    amps[0] = 1.0
    s = st.SymmetricState(7, amps)
    assert obs.dispersion(s, apparatus_family(7)) <= 1e-14


def test_dispersion_spin_cat_m4():
    cat = st.build_cat_state("spin", n_spins=5)
    assert abs(obs.dispersion(cat, apparatus_family(5)) - 0.25) <= 1e-12


@pytest.mark.parametrize("m", [4, 6])
def test_dispersion_product_state(m):
    mqp = st.build_mqp_state("spin", n_spins=m + 1)
    d = obs.dispersion(mqp, apparatus_family(m + 1))
    assert abs(d - 1.0 / (4 * m)) <= 1e-12


def test_dispersion_nonnegative_random_states(rng):
    fams_states = []
    for _ in range(8):
        fams_states.append((random_symmetric(6, rng), st.spin_family(random_symmetric(6, rng))))
        fams_states.append((random_spin(5, rng), st.OperatorFamily("spin_z", (0, 2, 4))))
    g = gaussian_grid(grid_points=64, k0=1.2, sigma=1.3)
    fams_states.append((g, st.OperatorFamily("momentum_px", (0,))))
    for state, fam in fams_states:
        assert obs.dispersion(state, fam) >= -1e-14


def test_dispersion_zero_iff_eigenstate(rng):
    # both directions on full spin states up to N=8 via brute-force
    # eigendecomposition of the summed family operator
    for n in (4, 6, 8):
        fam = st.OperatorFamily("spin_z", tuple(range(n)))
        template = st.SpinState(n, np.zeros(2**n, dtype=complex), normalized=False)
        diag = st.family_diagonal(template, fam)
        evals, evecs = np.linalg.eigh(np.diag(diag))
        distinct = np.unique(np.round(evals, 9))
        # eigenstate -> zero dispersion
        lam = distinct[len(distinct) // 2]
        mask = np.abs(evals - lam) < 1e-9
        vec = evecs[:, mask] @ (
            rng.standard_normal(mask.sum()) + 1j * rng.standard_normal(mask.sum())
        )
        vec /= np.linalg.norm(vec)
        assert obs.dispersion(st.SpinState(n, vec), fam) <= 1e-13
        # support on two eigenvalues -> strictly positive dispersion
        i, j = np.argmin(diag), np.argmax(diag)
        two = np.zeros(2**n, dtype=complex)
        two[i] = two[j] = 1 / math.sqrt(2)
        assert obs.dispersion(st.SpinState(n, two), fam) > 1e-3


# ---------------------------------------------------------------------------
# magnetization
# ---------------------------------------------------------------------------

def test_magnetization_all_up_half_values():
    amps = np.zeros(2**4, dtype=complex)
    amps[0] = 1.0
    assert abs(obs.magnetization(st.SpinState(4, amps)) - 0.5) <= 1e-14


def test_magnetization_bare_vector_unit_values():
    phi = np.zeros(6, dtype=complex)
    phi[0] = 1.0
    assert abs(obs.magnetization(phi, spin_values="one") - 1.0) <= 1e-14


def test_magnetization_balanced_cat_is_zero():
    cat = st.build_cat_state("spin", n_spins=6)
    assert abs(obs.magnetization(cat)) <= 1e-14


# ---------------------------------------------------------------------------
# center of mass and momentum
# ---------------------------------------------------------------------------

def test_com_momentum_centered_gaussian():
    g = gaussian_grid(grid_points=128)
    com, mom = obs.com_and_momentum(g)
    assert abs(com[0]) <= 1e-12 and abs(mom[0]) <= 1e-12


def test_com_momentum_boosted_gaussian():
    g = gaussian_grid(grid_points=256, k0=1.7)
    _, mom = obs.com_and_momentum(g)
    assert abs(mom[0] - 1.7) <= 1e-10


def test_com_two_particle_mirror_product():
    g, L, a, sigma = 128, 12.0, 2.5, 0.9
    template = st.GridState(2, 1, g, L, np.zeros(g * g, dtype=complex), normalized=False)
    x = template.coordinates()
    one = np.exp(-((x - a) ** 2) / (4 * sigma**2))
    other = np.exp(-((x + a) ** 2) / (4 * sigma**2))
    amps = np.multiply.outer(one, other).reshape(-1)
    amps /= math.sqrt(float(np.vdot(amps, amps).real) * template.measure_weight)
    com, _ = obs.com_and_momentum(template.with_amplitudes(amps, normalized=True))
    assert abs(com[0]) <= 1e-12


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------

def test_energies_ground_well_state_has_zero_penalty():
    params = ToyParams(n_spins=7, w=0.5, include_qubit_in_wfe=False)
    amps = np.zeros(2 * 7, dtype=complex)
    amps[0] = 1.0      # |S = R>, eigenstate of the apparatus family
    s = st.SymmetricState(7, amps)
    model = toy_model_spec(params)
    _, e_wfe, _ = obs.energies(s, model)
    assert abs(e_wfe) <= 1e-12


def test_energies_cat_and_product_scaling():
    w = 0.37
    cat = st.build_cat_state("spin", n_spins=5)
    fam = apparatus_family(5)
    model = ModelSpec(h_apply=None, w=w, family=fam)
    _, e_cat, _ = obs.energies(cat, model)
    assert abs(e_cat - 4.0 * w) <= 1e-12
    for m in (4, 8):
        mqp = st.build_mqp_state("spin", n_spins=m + 1)
        model_m = ModelSpec(h_apply=None, w=w, family=apparatus_family(m + 1))
        _, e_mqp, _ = obs.energies(mqp, model_m)
        assert abs(e_mqp - w * m / 4.0) <= 1e-12


def test_energy_identity_w_nf2_dispersion(rng):
    s = random_symmetric(8, rng)
    fam = st.spin_family(s)
    model = ModelSpec(h_apply=None, w=1.3, family=fam)
    _, e_wfe, _ = obs.energies(s, model)
    assert abs(e_wfe - 1.3 * fam.n_sites**2 * obs.dispersion(s, fam)) <= 1e-12


def test_wfe_scaling_slopes():
    sizes = [4, 8, 16]
    cat_e, mqp_e = [], []
    for m in sizes:
        fam = apparatus_family(m + 1)
        model = ModelSpec(h_apply=None, w=1.0, family=fam)
        cat_e.append(obs.energies(st.build_cat_state("spin", n_spins=m + 1), model)[1])
        mqp_e.append(obs.energies(st.build_mqp_state("spin", n_spins=m + 1), model)[1])
    slope_cat = np.polyfit(np.log(sizes), np.log(cat_e), 1)[0]
    slope_mqp = np.polyfit(np.log(sizes), np.log(mqp_e), 1)[0]
    assert abs(slope_cat - 2.0) <= 0.05
    assert abs(slope_mqp - 1.0) <= 0.05


# ---------------------------------------------------------------------------
# well occupations
# ---------------------------------------------------------------------------

def test_well_occupations_cat():
    cat = st.build_cat_state("spin", n_spins=9)
    p_left, p_right = obs.well_occupations(cat)
    assert abs(p_left - 0.5) <= 1e-12 and abs(p_right - 0.5) <= 1e-12


def test_well_occupations_polarized():
    amps = np.zeros(2 * 9, dtype=complex)
    amps[0] = 1.0
    assert obs.well_occupations(st.SymmetricState(9, amps)) == (0.0, 1.0)


def test_well_occupations_band_excluded():
    s = st.build_initial_toy(9, center=0.5)
    assert obs.well_occupations(s) == (0.0, 0.0)


def test_well_occupations_sum_with_middle(rng):
    s = random_symmetric(9, rng)
    p_left, p_right = obs.well_occupations(s)
    s_vals = s.readout_values()
    split = (s.n_spins - 1) / 4.0
    middle = float(s.readout_distribution()[np.abs(s_vals) <= split].sum())
    assert abs(p_left + p_right + middle - 1.0) <= 1e-12
    assert p_left + p_right <= 1.0 + 1e-12


# ---------------------------------------------------------------------------
# classical force gap
# ---------------------------------------------------------------------------

def test_force_gap_harmonic_is_zero():
    g = gaussian_grid(grid_points=128, center=1.3, sigma=1.1)
    gap = obs.classical_force_gap(g, lambda x: 2.0 * x)
    assert gap <= 1e-12


def test_force_gap_quartic_narrow_gaussian():
    c, mu = 0.25, 1.5
    dv = lambda x: 4.0 * c * x**3
    raw_gaps = []
    for sigma in (0.2, 0.1):
        g = gaussian_grid(grid_points=512, box_half_width=6.0, center=mu, sigma=sigma)
        gap = obs.classical_force_gap(g, dv)
        # quadrature oracle: <dv> - dv(<x>) = 12 c mu sigma^2 for a Gaussian
        x = g.coordinates()
        prob = np.abs(g.amplitudes) ** 2 * g.measure_weight
        scale = np.abs(dv(x[prob > 1e-12 * prob.max()])).max()
        oracle = abs(float(prob @ dv(x)) - dv(float(prob @ x))) / scale
        assert abs(gap - oracle) <= 1e-12
        analytic = 12.0 * c * mu * sigma**2 / scale
        assert abs(gap - analytic) <= 0.05 * analytic
        raw_gaps.append(gap * scale)
    # the un-normalized mismatch scales as sigma^2
    assert abs(raw_gaps[0] / raw_gaps[1] - 4.0) <= 0.2 * 4.0


def test_force_gap_cat_spanning_minima():
    # unbalanced superposition over the two minima of dv = 4c x (x^2 - a^2):
    # <dv> ~ 0 (both packets sit at zero force) while dv(<x>) is mid-slope
    a, c = 3.0, 0.5
    cat = st.build_cat_state("grid", n_particles=1, grid_points=1024,
                             box_half_width=12.0, separation=a, bump_width=0.2,
                             alpha=0.8, beta=0.6)
    gap = obs.classical_force_gap(cat, lambda x: 4.0 * c * x * (x**2 - a**2))
    assert gap > 0.1


def test_force_gap_constant_potential_convention():
    g = gaussian_grid(grid_points=64)
    assert obs.classical_force_gap(g, lambda x: np.zeros_like(x)) == 0.0


# ---------------------------------------------------------------------------
# macroscopic estimate
# ---------------------------------------------------------------------------

def test_macro_estimate_reference_values():
    assert abs(obs.macro_estimate(1e-25, 1e20, 1e-2) / 1e11 - 1.0) <= 1e-12
    assert abs(obs.macro_estimate(1e-25, 1e20, 1e-6, mode="product") / 1e-17 - 1.0) <= 1e-12
    assert abs(obs.macro_estimate(1e-25, 1.0, 6e-11) / 3.6e-46 - 1.0) <= 1e-12


def test_macro_estimate_validation():
    with pytest.raises(st.StateError):
        obs.macro_estimate(1e-25, 1e20, 1e-2, mode="squeezed")
    with pytest.raises(st.StateError):
        obs.macro_estimate(-1.0, 1e20, 1e-2)


# ---------------------------------------------------------------------------
# report layout
# ---------------------------------------------------------------------------

def test_report_csv_columns_spin(rng):
    s = random_symmetric(6, rng)
    model = ModelSpec(h_apply=None, w=0.5, family=st.spin_family(s))
    report = obs.make_report(s, model)
    assert obs.report_header(report) == [
        "t", "norm", "E_qm", "E_wfe", "E_total", "m", "D", "p_left", "p_right"
    ]
    row = obs.report_row(1.5, report)
    assert row[0] == 1.5 and len(row) == 9


def test_report_csv_columns_grid():
    g = gaussian_grid(grid_points=32)
    model = ModelSpec(h_apply=None, w=0.1,
                      family=st.OperatorFamily("position_x", (0,)))
    report = obs.make_report(g, model)
    assert obs.report_header(report) == [
        "t", "norm", "E_qm", "E_wfe", "E_total", "com_x", "D", "mom_x"
    ]
