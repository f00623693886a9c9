import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from qbattery import single_excitation as se
from qbattery.lattice import LatticeSpec, ValidationError, make_spec

STD = make_spec(50, 0.25, 0.05, 0.05)


def random_spec(n, ratio, g_a, g_b, lam):
    return LatticeSpec(n, 1.0, ratio, g_a, g_b, lam)


spec_strategy = st.builds(
    random_spec,
    st.integers(1, 15).map(lambda k: 2 * k),
    st.floats(0.05, 1.0),
    st.floats(0.0, 0.2),
    st.floats(0.0, 0.2),
    st.floats(0.005, 0.3),
)


def well_separated(spec):
    oa, ob = se.site_frequencies(spec)
    ks = se.momenta(spec.n_sites)
    arg = (oa - ob) ** 2 + 16 * spec.coupling**2 * np.cos(ks / 2) ** 2
    return np.min(np.abs(arg)) > 1e-6


def random_state(n, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=n + 1) + 1j * rng.normal(size=n + 1)
    v /= np.linalg.norm(v)
    return se.PureState1X(v[0], v[1:])


# -- effective Hamiltonian --------------------------------------------------------

def test_effective_hamiltonian_two_sites():
    k = se.build_effective_hamiltonian(make_spec(2, 0.25, 0.05, 0.05)).matrix()
    assert k == pytest.approx(np.array([[1 - 0.025j, 0.05], [0.05, 0.25 - 0.00625j]]))


def test_effective_hamiltonian_is_complex_symmetric():
    k = se.build_effective_hamiltonian(STD).matrix()
    assert np.array_equal(k, k.T)
    assert np.count_nonzero(np.triu(k, 2)) == 0


def test_effective_hamiltonian_rejects_collective_rate():
    with pytest.raises(ValidationError):
        se.build_effective_hamiltonian(STD.replace(gamma_collective=0.01))


def test_zero_coupling_spectrum_is_diagonal():
    s = make_spec(6, 0.4, 0.05, 0.0)
    spec = se.analytic_spectrum(s)
    oa, ob = se.site_frequencies(s)
    assert sorted(spec.omega, key=lambda z: z.real) == pytest.approx([ob] * 3 + [oa] * 3)
    assert np.allclose(spec.band(-1), ob) and np.allclose(spec.band(+1), oa)


# -- spectrum ---------------------------------------------------------------------

def test_uniform_spectrum_closed_form():
    s = make_spec(4, 1.0, 0.05, 0.05)
    spec = se.analytic_spectrum(s)
    oa, _ = se.site_frequencies(s)
    ks = np.array([2 * np.pi / 5, 4 * np.pi / 5])
    assert spec.omega == pytest.approx(np.concatenate([oa - 2 * 0.05 * np.cos(ks / 2),
                                                       oa + 2 * 0.05 * np.cos(ks / 2)]), abs=1e-14)
    assert np.allclose(spec.omega.imag, -0.025)
    _, basis = se.numerical_spectrum(se.build_effective_hamiltonian(s), s)
    assert basis.omega == pytest.approx(spec.omega, abs=1e-12)


def test_spectrum_ordering_and_labels():
    spec = se.analytic_spectrum(STD)
    assert len(spec) == 50
    assert spec.momenta == pytest.approx(2 * np.pi * np.arange(1, 26) / 51)
    assert spec.bands.tolist() == [-1] * 25 + [1] * 25
    assert spec.labels.tolist() == list(range(1, 26)) * 2
    assert np.all(spec.band(-1).real < spec.band(1).real)


def test_standard_spectrum_matches_dense_eigensolver():
    h = se.build_effective_hamiltonian(STD)
    analytic = se.analytic_spectrum(STD)
    numeric, basis = se.numerical_spectrum(h, STD)
    assert np.max(np.abs(numeric.omega - analytic.omega)) <= 1e-9
    assert basis.source == "numerical"


def test_numerical_spectrum_diagonal_case_gives_unit_vectors():
    s = LatticeSpec(2, 1.0, 0.3, 0.05, 0.02, 0.0)
    _, basis = se.numerical_spectrum(se.build_effective_hamiltonian(s), s)
    assert np.allclose(np.abs(basis.right), np.eye(2)[:, ::-1]) or np.allclose(np.abs(basis.right), np.eye(2))


def test_numerical_spectrum_reports_exceptional_point():
    # Omega_A - Omega_B = -4i coupling cos(k/2) makes the 2x2 block defective
    lam = 0.05
    c = np.cos(np.pi / 3)
    s = LatticeSpec(2, 1.0, 1.0, 0.0, 8 * lam * c, lam)
    assert se.analytic_spectrum(s).near_exceptional == (1,)
    with pytest.raises(se.ExceptionalPointError):
        se.numerical_spectrum(se.build_effective_hamiltonian(s), s)


def test_band_sum_rule_and_trace_on_standard_spec():
    spec = se.analytic_spectrum(STD)
    oa, ob = se.site_frequencies(STD)
    assert np.max(np.abs(spec.band(-1) + spec.band(1) - (oa + ob))) <= 1e-10
    k = se.build_effective_hamiltonian(STD).matrix()
    assert abs(spec.omega.sum() - np.trace(k)) <= 1e-9


@given(spec_strategy)
def test_spectrum_invariants_on_random_specs(spec):
    assume(well_separated(spec))
    analytic = se.analytic_spectrum(spec)
    oa, ob = se.site_frequencies(spec)
    assert np.max(np.abs(analytic.band(-1) + analytic.band(1) - (oa + ob))) <= 1e-10
    k = se.build_effective_hamiltonian(spec).matrix()
    assert abs(analytic.omega.sum() - np.trace(k)) <= 1e-9
    numeric = np.linalg.eigvals(k)
    dist = np.abs(analytic.omega[:, None] - numeric[None, :])
    assert np.max(np.min(dist, axis=1)) <= 1e-9
    assert np.max(np.min(dist, axis=0)) <= 1e-9


# -- eigenbasis -------------------------------------------------------------------

def test_uniform_eigenbasis_uses_limit_angle():
    s = make_spec(20, 1.0, 0.05, 0.05)
    for k in se.momenta(20):
        assert 2 * se.mixing_angle(s, k) == pytest.approx(-np.pi / 2)
    basis = se.analytic_eigenbasis(s)
    assert basis.source == "analytic"
    knorm = np.linalg.norm(se.build_effective_hamiltonian(s).matrix(), 2)
    assert np.max(basis.residuals(se.build_effective_hamiltonian(s).matrix())) < 1e-9 * knorm


def test_standard_eigenbasis_is_analytic_and_complete():
    basis = se.analytic_eigenbasis(STD)
    assert basis.source == "analytic"
    assert basis.biorthonormality_error() <= 1e-10
    assert basis.completeness_error() <= 1e-8
    assert np.array_equal(basis.left, basis.right.T)
    # independent accumulation of sum_n |K_n><K_n*|
    acc = sum(np.outer(basis.right[:, n], basis.right[:, n]) for n in range(50))
    assert np.max(np.abs(acc - np.eye(50))) <= 1e-8


@given(spec_strategy)
def test_eigenbasis_invariants_on_random_specs(spec):
    assume(well_separated(spec))
    basis = se.analytic_eigenbasis(spec)
    k = se.build_effective_hamiltonian(spec).matrix()
    assert basis.biorthonormality_error() <= 1e-10
    assert basis.completeness_error() <= 1e-8
    assert np.max(basis.residuals(k)) <= 1e-9 * np.linalg.norm(k, 2)


def test_eigenbasis_falls_back_at_degenerate_point():
    # no coupling, identical sites: every eigenvalue equal, the sine patterns still work
    s = LatticeSpec(4, 1.0, 1.0, 0.05, 0.05, 0.0)
    basis = se.analytic_eigenbasis(s)
    assert basis.biorthonormality_error() <= 1e-10
    assert basis.completeness_error() <= 1e-8


# -- states -----------------------------------------------------------------------

def test_pure_state_normalization_enforced():
    with pytest.raises(ValidationError):
        se.PureState1X(1.0, np.array([1e-6, 0]))
    se.PureState1X(1.0, np.array([1e-7, 0]))  # norm error 1e-14 is accepted


def test_phi0_state():
    s = se.phi0_state(50)
    assert s.amp_g == pytest.approx(2**-0.5)
    assert s.amp_e[9] == s.amp_e[11] == 0.5
    assert np.count_nonzero(s.amp_e) == 2


# -- trajectories -----------------------------------------------------------------

T = np.linspace(0, 60, 241)


def test_ground_state_has_no_coherence():
    g = se.PureState1X.ground(50)
    for j in (1, 10, 50):
        assert np.max(np.abs(se.sigma_x_series(STD, g, j, T))) == 0.0
        assert se.sigma_z_series(STD, g, j, T) == pytest.approx(-1.0)


def test_phi0_initial_population():
    z = se.sigma_z_series(STD, se.phi0_state(50), 10, np.array([0.0]))
    assert z[0] == pytest.approx(-0.5, abs=1e-12)


def test_uniform_decays_monotonically_dimeric_oscillates():
    phi = se.phi0_state(50)
    zu = se.sigma_z_series(make_spec(50, 1.0, 0.05, 0.05), phi, 10, T)
    zd = se.sigma_z_series(STD, phi, 10, T)
    # the uniform site empties by t ~ 18, after which a tiny revival from neighbours appears
    early = T <= 15
    assert np.all(np.diff(zu[early]) < 0)
    assert zu[-1] < zd[-1]
    assert np.any(np.diff(zd[early]) > 0)


def test_correlation_diagonal_is_population():
    phi = se.phi0_state(50)
    for j in (10, 11):
        c = se.correlation_series(STD, phi, j, j, T)
        z = se.sigma_z_series(STD, phi, j, T)
        assert np.max(np.abs(c - (1 + z) / 2)) <= 1e-12


def test_correlation_hermitian_symmetry():
    state = random_state(12, 4)
    s = make_spec(12, 0.3, 0.05, 0.05)
    a = se.correlation_series(s, state, 3, 8, T)
    b = se.correlation_series(s, state, 8, 3, T)
    assert np.max(np.abs(a - np.conj(b))) <= 1e-13


def test_correlation_and_population_share_oscillation():
    phi = se.phi0_state(50)
    t = np.linspace(0, 100, 4001)
    z = se.sigma_z_series(STD, phi, 10, t)
    c = se.correlation_series(STD, phi, 10, 11, t).real

    def dominant(x):
        x = x - np.polyval(np.polyfit(t, x, 3), t)
        f = np.fft.rfftfreq(t.size, t[1] - t[0])
        return f[1:][np.argmax(np.abs(np.fft.rfft(x))[1:])]

    assert dominant(z) == pytest.approx(dominant(c), abs=2 / 100)


def test_named_trajectory_matches_single_series():
    state = random_state(8, 2)
    s = make_spec(8, 0.25, 0.05, 0.05)
    tr = se.trajectory(s, state, ["sigma_z_3", "sigma_x_4", "sigma_y_4", "corr_re_2_5",
                                  "corr_im_2_5", "excitation"], T)
    assert np.array_equal(tr["sigma_z_3"], se.trajectory_sigma_z(s, state, 3, T)["sigma_z_3"])
    assert np.allclose(tr["sigma_x_4"], se.trajectory_sigma_x(s, state, 4, T)["sigma_x_4"], atol=1e-15)
    c = se.trajectory_correlation(s, state, 2, 5, T)
    assert np.array_equal(tr["corr_re_2_5"], c["corr_re_2_5"])
    assert np.array_equal(tr["corr_im_2_5"], c["corr_im_2_5"])
    total = sum((1 + se.sigma_z_series(s, state, j, T)) / 2 for j in range(1, 9))
    assert np.max(np.abs(tr["excitation"] - total)) <= 1e-12
    assert tr.meta["engine"] == "single-excitation"
    with pytest.raises(ValidationError):
        se.trajectory(s, state, ["energy"], T)


def test_site_index_checked():
    with pytest.raises(IndexError):
        se.sigma_z_series(STD, se.phi0_state(50), 51, T)
    with pytest.raises(ValidationError):
        se.sigma_z_series(STD, random_state(8, 0), 1, T)


@given(spec_strategy, st.integers(0, 2**31))
def test_populations_bounded_and_excitation_non_increasing(spec, seed):
    assume(well_separated(spec))
    state = random_state(spec.n_sites, seed)
    basis = se.analytic_eigenbasis(spec)
    t = np.linspace(0, 80, 161)
    zs = np.array([se.sigma_z_series(spec, state, j, t, basis) for j in range(1, spec.n_sites + 1)])
    assert np.all(zs >= -1 - 1e-8) and np.all(zs <= 1 + 1e-8)
    total = np.sum((1 + zs) / 2, axis=0)
    assert np.all(np.diff(total) <= 1e-10)


@given(st.integers(0, 2**31))
def test_trajectories_invariant_under_eigenvector_rescaling(seed):
    rng = np.random.default_rng(seed)
    s = make_spec(10, 0.3, 0.05, 0.05)
    state = random_state(10, seed)
    basis = se.analytic_eigenbasis(s)
    c = rng.uniform(0.2, 5, 10) * np.exp(1j * rng.uniform(0, 2 * np.pi, 10))
    scaled = se.BiorthogonalBasis(basis.spectrum, basis.right * c[None, :], basis.left / c[:, None],
                                  basis.source)
    for j in (1, 4, 10):
        assert np.allclose(se.sigma_z_series(s, state, j, T, scaled), se.sigma_z_series(s, state, j, T, basis),
                           atol=1e-12)
        assert np.allclose(se.sigma_x_series(s, state, j, T, scaled), se.sigma_x_series(s, state, j, T, basis),
                           atol=1e-12)
    assert np.allclose(se.correlation_series(s, state, 2, 7, T, scaled),
                       se.correlation_series(s, state, 2, 7, T, basis), atol=1e-12)


def test_uniform_bulk_population_decays_locally():
    # a flat superposition is translation invariant away from the edges, so the
    # neighbour currents cancel there until the edge disturbance arrives
    n = 40
    s = make_spec(n, 1.0, 0.05, 0.05)
    state = se.PureState1X(2**-0.5, np.full(n, (2 * n) ** -0.5))
    basis = se.analytic_eigenbasis(s)
    h = 1e-3
    for j in (20, 21):
        for t in np.linspace(1, 40, 40):
            z = se.sigma_z_series(s, state, j, np.array([t - h, t, t + h]), basis)
            assert abs((z[2] - z[0]) / (2 * h) + 0.05 * (1 + z[1])) <= 1e-6


def test_uniform_edge_population_is_not_local():
    n = 40
    s = make_spec(n, 1.0, 0.05, 0.05)
    state = se.PureState1X(2**-0.5, np.full(n, (2 * n) ** -0.5))
    h = 1e-3
    t = 30.0
    z = se.sigma_z_series(s, state, 1, np.array([t - h, t, t + h]))
    assert abs((z[2] - z[0]) / (2 * h) + 0.05 * (1 + z[1])) > 1e-5


# -- decay bands ------------------------------------------------------------------

def test_band_report_uniform_all_equal():
    rep = se.decay_band_report(make_spec(50, 1.0, 0.05, 0.05))
    assert np.allclose(rep.decay, rep.decay[0], rtol=0, atol=1e-15)
    assert rep.uniform_reference == pytest.approx(rep.decay[0])


def test_band_report_standard_suppression():
    rep = se.decay_band_report(STD)
    assert np.max(rep.decay) < rep.uniform_reference
    assert len(list(rep.rows())) == 50


def test_band_report_sum_equals_mean_rate():
    rep = se.decay_band_report(STD)
    half = 25
    assert np.all(rep.omega.imag < 0)
    total = rep.decay[:half] + rep.decay[half:]
    assert np.max(np.abs(total - (STD.gamma_a + STD.gamma_b) / 2)) <= 1e-12


def test_band_report_convention_toggle():
    assert se.decay_band_report(STD, "full-rate").uniform_reference == 0.05
    assert se.decay_band_report(STD, "operator").uniform_reference == 0.025
    with pytest.raises(ValueError):
        se.decay_band_report(STD, "other")
