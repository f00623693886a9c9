import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qbattery.integrate import IntegratorConfig
from qbattery.lattice import LatticeSpec, Trajectory, ValidationError, make_spec, site_params


def test_make_spec_standard_parameters():
    s = make_spec(50, 0.25, 0.05, 0.05)
    assert (s.delta_a, s.delta_b) == (1.0, 0.25)
    assert s.gamma_a == 0.05
    assert s.gamma_b == pytest.approx(0.0125, abs=1e-15)
    assert s.coupling == 0.05
    assert s.gamma_collective == 0.0


def test_make_spec_trivial_uniform():
    s = make_spec(2, 1.0, 0.0, 0.0)
    assert s.is_uniform
    assert s.gamma_a == s.gamma_b == 0.0


def test_make_spec_rate_ratio_is_exact():
    s = make_spec(80, 0.25, 0.05, 0.05)
    assert s.gamma_b / s.gamma_a == 0.25


@pytest.mark.parametrize("n", [0, 1, 3, -2, 7])
def test_make_spec_rejects_bad_sizes(n):
    with pytest.raises(ValidationError):
        make_spec(n, 0.5, 0.05, 0.05)


@pytest.mark.parametrize("ratio", [0.0, -0.1, 1.5, float("nan")])
def test_make_spec_rejects_bad_ratio(ratio):
    with pytest.raises(ValidationError):
        make_spec(4, ratio, 0.05, 0.05)


@pytest.mark.parametrize("field,value", [("delta_a", 0.0), ("gamma_a", -1e-3),
                                          ("gamma_b", -1.0), ("gamma_collective", -0.1),
                                          ("coupling", float("inf"))])
def test_spec_field_validation(field, value):
    with pytest.raises(ValidationError):
        LatticeSpec(4, **{field: value})


def test_spec_allows_independent_rates():
    s = LatticeSpec(4, delta_b=0.25, gamma_a=0.05, gamma_b=0.05)
    assert s.gamma_a * s.delta_b != s.gamma_b * s.delta_a


def test_site_params_examples():
    s = make_spec(50, 0.25, 0.05, 0.05)
    assert site_params(s, 1) == (1.0, 0.05)
    assert site_params(s, 2) == pytest.approx((0.25, 0.0125))
    u = make_spec(6, 1.0, 0.05, 0.05)
    assert len({site_params(u, j) for j in range(1, 7)}) == 1


@pytest.mark.parametrize("j", [0, 5, -1])
def test_site_params_out_of_range(j):
    with pytest.raises(IndexError):
        site_params(make_spec(4, 0.5, 0.05, 0.05), j)


@given(n=st.integers(1, 40).map(lambda k: 2 * k),
       ratio=st.floats(1e-3, 1.0), g=st.floats(0, 1), lam=st.floats(-1, 1))
def test_make_spec_properties(n, ratio, g, lam):
    s = make_spec(n, ratio, g, lam)
    assert s.gamma_a * s.delta_b == pytest.approx(s.gamma_b * s.delta_a, rel=1e-15, abs=0)
    for j in range(1, n - 1):
        assert site_params(s, j) == site_params(s, j + 2)
    d = s.detunings()
    assert d[0] == 1.0 and d[-1] == s.delta_b
    assert s.energy_scale() == pytest.approx(n / 2 * (1 + ratio) / 2)


def test_trajectory_rejects_length_mismatch():
    with pytest.raises(ValidationError):
        Trajectory([0.0, 1.0], {"a": [1.0, 2.0, 3.0]})


def test_trajectory_rejects_non_increasing_times():
    with pytest.raises(ValidationError):
        Trajectory([0.0, 1.0, 1.0], {"a": [1.0, 2.0, 3.0]})


def test_trajectory_columns_are_read_only():
    tr = Trajectory([0.0, 1.0], {"a": [1.0, 2.0]})
    with pytest.raises(ValueError):
        tr["a"][0] = 5.0


def test_trajectory_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    t = np.cumsum(rng.uniform(0.01, 1, 20))
    tr = Trajectory(t, {"x": rng.normal(size=20), "y": rng.normal(size=20) * 1e-300})
    path = tmp_path / "t.csv"
    tr.to_csv(path, ["first comment", "second"])
    back = Trajectory.from_csv(path)
    assert np.array_equal(back.times, tr.times)
    for k in tr.columns:
        assert np.array_equal(back[k], tr[k])
    assert back.meta["comments"] == ["first comment", "second"]
    assert path.read_text().splitlines()[2].startswith("t,")


def test_integrator_config_validation():
    with pytest.raises(ValidationError):
        IntegratorConfig(dt=0.0)
    with pytest.raises(ValidationError):
        IntegratorConfig(dt=0.1, t_end=0.05)
    with pytest.raises(ValidationError):
        IntegratorConfig(sample_every=0)
    cfg = IntegratorConfig(dt=0.01, t_end=1.0, sample_every=10)
    assert cfg.n_steps == 100
    assert cfg.times() == pytest.approx(np.linspace(0, 1, 11))
