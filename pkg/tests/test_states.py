import json
import math

import numpy as np
import pytest

from wfelab import states as st
from wfelab.observables import com_and_momentum, dispersion

from conftest import gaussian_grid, random_symmetric


# ---------------------------------------------------------------------------
# norms and inner products
# ---------------------------------------------------------------------------

def test_norm_and_inner_normalized_gaussian():
    g = gaussian_grid()
    norm, inner = st.norm_and_inner(g, g)
    assert abs(norm - 1.0) <= 1e-12
    assert abs(inner - 1.0) <= 1e-12


def test_norm_and_inner_dicke_orthonormal():
    a = np.zeros(2 * 5, dtype=complex)
    b = np.zeros(2 * 5, dtype=complex)
    a[0] = 1.0   # qubit up, n = 0
    b[1] = 1.0   # qubit up, n = 1
    sa = st.SymmetricState(5, a)
    sb = st.SymmetricState(5, b)
    norm, inner = st.norm_and_inner(sa, sb)
    assert abs(norm - 1.0) <= 1e-12
    assert abs(inner) <= 1e-12


def test_inner_product_preserved_under_embedding(rng):
    c = random_symmetric(6, rng)
    d = random_symmetric(6, rng)
    _, reduced = st.norm_and_inner(c, d)
    _, full = st.norm_and_inner(st.embed_symmetric(c), st.embed_symmetric(d))
    assert abs(reduced - full) <= 1e-12


def test_norm_and_inner_shape_mismatch():
    a = random_symmetric(4, np.random.default_rng(0))
    b = random_symmetric(5, np.random.default_rng(1))
    with pytest.raises(st.ShapeMismatchError):
        st.norm_and_inner(a, b)
    with pytest.raises(st.ShapeMismatchError):
        st.norm_and_inner(a, gaussian_grid())


# ---------------------------------------------------------------------------
# symmetric-sector embedding
# ---------------------------------------------------------------------------

def test_embed_dicke_n1_m2():
    # M=2, |n=1>: amplitude 1/sqrt(2) on each of the two one-down configurations
    amps = np.zeros(6, dtype=complex)
    amps[1] = 1.0
    full = st.embed_symmetric(st.SymmetricState(3, amps))
    t = full.amplitudes
    # apparatus spins are bits 1 and 2; qubit bit 0 is up (0)
    idx_one_down = [0b010, 0b100]
    for k in range(8):
        expect = 1 / math.sqrt(2) if k in idx_one_down else 0.0
        assert abs(t[k] - expect) <= 1e-15


def test_embed_dicke_n0_m2():
    amps = np.zeros(6, dtype=complex)
    amps[0] = 1.0
    full = st.embed_symmetric(st.SymmetricState(3, amps))
    assert abs(full.amplitudes[0] - 1.0) <= 1e-15
    assert np.abs(full.amplitudes[1:]).max() <= 1e-15


def test_round_trip_random(rng):
    s = random_symmetric(6, rng)
    back = st.project_symmetric(st.embed_symmetric(s))
    assert np.abs(back.amplitudes - s.amplitudes).max() <= 1e-14


def test_embedding_is_isometry(rng):
    for _ in range(10):
        n = int(rng.integers(2, 9))
        amps = rng.standard_normal(2 * n) + 1j * rng.standard_normal(2 * n)
        s = st.SymmetricState(n, amps, normalized=False)
        assert abs(math.sqrt(st.embed_symmetric(s).norm2()) - math.sqrt(s.norm2())) <= 1e-12


def test_project_rejects_asymmetric_state(rng):
    amps = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    amps /= np.linalg.norm(amps)
    with pytest.raises(st.AsymmetricStateError) as err:
        st.project_symmetric(st.SpinState(4, amps))
    assert err.value.defect > 0


# ---------------------------------------------------------------------------
# cat / MQP builders
# ---------------------------------------------------------------------------

def test_spin_cat_amplitudes():
    cat = st.build_cat_state("spin", n_spins=5)
    block = cat.block().copy()
    assert abs(block[0, 0] - 1 / math.sqrt(2)) <= 1e-15
    assert abs(block[1, 4] - 1 / math.sqrt(2)) <= 1e-15
    block[0, 0] = 0
    block[1, 4] = 0
    assert np.abs(block).max() == 0.0


def test_grid_cat_single_particle_dispersion():
    # one particle: the cat reduces to a single two-bump state, D = R^2 + sigma^2
    r_sep, sigma = 8.0, 1.0
    cat = st.build_cat_state("grid", n_particles=1, grid_points=512,
                             box_half_width=20.0, separation=r_sep, bump_width=sigma)
    d = dispersion(cat, st.OperatorFamily("position_x", (0,)))
    # independent quadrature oracle on the same grid measure
    x = cat.coordinates()
    prob = np.abs(cat.amplitudes) ** 2 * cat.measure_weight
    oracle = float(prob @ x**2 - (prob @ x) ** 2)
    assert abs(d - oracle) <= 1e-12 * max(1.0, oracle)
    assert abs(d - (r_sep**2 + sigma**2)) <= 1e-6 * (r_sep**2 + sigma**2)


def test_grid_mqp_two_particles_box_bumps():
    # product of two-bump characteristic functions: D = (R^2 + r^2/12)/2
    r_sep, width = 3.0, 1.0
    mqp = st.build_mqp_state("grid", n_particles=2, grid_points=256,
                             box_half_width=8.0, separation=r_sep,
                             bump_width=width, bump_shape="box")
    fam = st.OperatorFamily("position_x", (0, 1))
    d = dispersion(mqp, fam)
    # brute-force quadrature oracle: mean square of (x1+x2)/2 on the grid
    x = mqp.coordinates()
    prob = (np.abs(mqp.tensor()) ** 2) * mqp.measure_weight
    xs = (x[:, None] + x[None, :]) / 2.0
    mean = float((prob * xs).sum())
    oracle = float((prob * xs**2).sum()) - mean**2
    assert abs(d - oracle) <= 1e-12 * max(1.0, oracle)
    analytic = (r_sep**2 + width**2 / 12.0) / 2.0
    assert abs(d - analytic) <= 5e-3 * analytic  # discrete-lattice bump variance bias


def test_cat_builder_rejects_overlapping_branches():
    with pytest.raises(st.BranchOverlapError):
        st.build_cat_state("grid", n_particles=1, grid_points=256,
                           box_half_width=12.0, separation=2.0, bump_width=1.0)


def test_builders_emit_normalized_states(rng):
    builders = [
        st.build_cat_state("spin", n_spins=7, alpha=0.6, beta=0.8, gamma=0.4),
        st.build_mqp_state("spin", n_spins=7),
        st.build_cat_state("grid", n_particles=2, grid_points=128,
                           box_half_width=20.0, separation=8.0, bump_width=1.0),
        st.build_mqp_state("grid", n_particles=1, grid_points=128,
                           box_half_width=20.0, separation=8.0, bump_width=1.0),
        st.build_momentum_cat(128, 20.0, 0.5, 4.0),
        st.build_initial_toy(9, rho=1e-3, rng=rng),
    ]
    for state in builders:
        assert abs(math.sqrt(state.norm2()) - 1.0) <= 1e-12


def test_dispersion_separation_cat_vs_mqp():
    # D of the cat is size-independent; D of the product state decays as 1/M
    sizes = [4, 8, 16]
    d_cat, d_mqp = [], []
    for m in sizes:
        fam = st.OperatorFamily("spin_z", tuple(range(1, m + 1)))
        d_cat.append(dispersion(st.build_cat_state("spin", n_spins=m + 1), fam))
        d_mqp.append(dispersion(st.build_mqp_state("spin", n_spins=m + 1), fam))
    assert np.allclose(d_cat, d_cat[0], rtol=1e-12)
    slope = np.polyfit(np.log(sizes), np.log(d_mqp), 1)[0]
    assert abs(slope - (-1.0)) <= 0.05


# ---------------------------------------------------------------------------
# momentum cat
# ---------------------------------------------------------------------------

def test_momentum_cat_single_branch():
    mc = st.build_momentum_cat(256, 20.0, 0.5, 3.0, alpha=1.0, beta=0.0)
    spinor = mc.tensor()
    p_up = float(np.sum(np.abs(spinor[:, 0]) ** 2)) * mc.measure_weight
    assert abs(p_up - 1.0) <= 1e-12
    _, mom = com_and_momentum(mc)
    assert abs(mom[0] - 3.0) <= 1e-8


def test_momentum_cat_equal_weights_any_phase():
    for gamma in (0.0, 1.1, -2.3):
        mc = st.build_momentum_cat(256, 20.0, 0.5, 4.0, gamma=gamma)
        spinor = mc.tensor()
        p_up = float(np.sum(np.abs(spinor[:, 0]) ** 2)) * mc.measure_weight
        assert abs(p_up - 0.5) <= 1e-12


def test_momentum_cat_total_momentum():
    alpha, beta = 0.8, 0.6
    p0 = 4.0
    mc = st.build_momentum_cat(512, 25.0, 0.5, p0, alpha=alpha, beta=beta, gamma=0.7)
    # spectral quadrature oracle, independent of the operator machinery
    spinor = mc.tensor()
    k = mc.wavenumbers()
    total = 0.0
    for s in range(2):
        ft = np.fft.fft(spinor[:, s])
        total += float(np.sum(k * np.abs(ft) ** 2)) / mc.grid_points * mc.measure_weight
    expect = (alpha**2 - beta**2) * p0
    assert abs(total - expect) <= 1e-10
    _, mom = com_and_momentum(mc)
    assert abs(mom[0] - expect) <= 1e-10


def test_momentum_cat_overlap_warning():
    close = st.build_momentum_cat(256, 20.0, 1.0, 1.5)
    assert "momentum_overlap_warning" in close.meta
    wide = st.build_momentum_cat(256, 20.0, 0.4, 8.0)
    assert "momentum_overlap_warning" not in wide.meta


# ---------------------------------------------------------------------------
# toy initial state
# ---------------------------------------------------------------------------

def test_initial_toy_n3_band_is_single_dicke_level():
    s = st.build_initial_toy(3, center=0.5)
    block = s.block()
    # M=2: S(n) = 1, 0, -1; only n=1 satisfies |S| <= 0.5
    assert abs(abs(block[0, 1]) - 1 / math.sqrt(2)) <= 1e-12
    assert abs(abs(block[1, 1]) - 1 / math.sqrt(2)) <= 1e-12
    assert abs(block[0, 0]) + abs(block[0, 2]) + abs(block[1, 0]) + abs(block[1, 2]) == 0.0


def test_initial_toy_qubit_factor():
    s = st.build_initial_toy(5, alpha=1.0, beta=0.0, center=1.0)
    block = s.block()
    assert np.abs(block[1]).max() == 0.0
    assert abs(np.sum(np.abs(block[0]) ** 2) - 1.0) <= 1e-12


def test_initial_toy_no_randomization_is_deterministic():
    a = st.build_initial_toy(8, rho=0.0, rng=np.random.default_rng(1))
    b = st.build_initial_toy(8, rho=0.0, rng=np.random.default_rng(999))
    assert np.array_equal(a.amplitudes, b.amplitudes)


def test_initial_toy_randomization_reproducible_and_in_band():
    a = st.build_initial_toy(8, rho=1e-3, rng=np.random.default_rng(5))
    b = st.build_initial_toy(8, rho=1e-3, rng=np.random.default_rng(5))
    assert np.array_equal(a.amplitudes, b.amplitudes)
    base = st.build_initial_toy(8, rho=0.0)
    # perturbation touches only the banded amplitudes
    mask = base.amplitudes == 0.0
    assert np.abs(a.amplitudes[mask]).max() == 0.0


def test_initial_toy_empty_band_errors():
    with pytest.raises(st.StateError):
        st.build_initial_toy(4, center=0.1)   # M=3: S in {1.5, .5, -.5, -1.5}


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("maker", [
    lambda: st.build_cat_state("spin", n_spins=4),
    lambda: st.build_initial_toy(5),
    lambda: gaussian_grid(grid_points=32, spin=[0.6, 0.8]),
])
def test_state_json_round_trip(tmp_path, maker):
    state = maker()
    path = tmp_path / "state.json"
    st.save_state(state, path)
    loaded = st.load_state(path)
    assert type(loaded) is type(state)
    assert np.abs(loaded.amplitudes - state.amplitudes).max() <= 1e-15


def test_state_json_field_names(tmp_path):
    grid = gaussian_grid(grid_points=16)
    doc = st.state_to_dict(grid)
    assert set(doc) == {"format", "version", "type", "n_particles",
                        "dims_per_particle", "grid_points", "box_half_width",
                        "spin_levels", "amplitudes"}
    assert doc["format"] == "wfelab-state" and doc["version"] == 1
    spin_doc = st.state_to_dict(st.build_cat_state("spin", n_spins=4))
    assert set(spin_doc) == {"format", "version", "type", "n_spins", "amplitudes"}
    assert all(len(pair) == 2 for pair in spin_doc["amplitudes"])


def test_state_json_rejects_bad_version():
    doc = st.state_to_dict(st.build_cat_state("spin", n_spins=4))
    doc["version"] = 99
    with pytest.raises(st.StateError):
        st.state_from_dict(doc)


def test_family_validation():
    spin = st.build_cat_state("spin", n_spins=4)
    with pytest.raises(st.StateError):
        st.validate_family(spin, st.OperatorFamily("position_x", (0,)))
    with pytest.raises(st.StateError):
        # symmetric states cannot address an apparatus subset
        st.validate_family(spin, st.OperatorFamily("spin_z", (1, 2)))
    grid = gaussian_grid(grid_points=16)
    with pytest.raises(st.StateError):
        st.validate_family(grid, st.OperatorFamily("angular_momentum_lz", (0,)))
