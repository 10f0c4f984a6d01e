import json

import numpy as np
import pytest

from skewmem.errors import BandwidthError, ConfigError, HypothesisViolation, ValidationError
from skewmem.radial import SkewTable, driftless_model, exit_probability, radial_model, single_membrane_table, skew_coefficients
from skewmem.simulate import SimConfig
from skewmem.verify import (
    TestReport,
    crossing_probability_test,
    derived_seed,
    occupation_ratio_test,
    radial_consistency_test,
    report_table,
    reversibility_test,
    silverman_bandwidth,
)
from skewmem.weights import WeightField, build_membranes, constant_density, power_density


def test_report_pass_rules():
    assert TestReport("a", 1.0, 1.1, 10, "se", stderr=0.04).passed
    assert not TestReport("a", 1.0, 1.2, 10, "se", stderr=0.04).passed
    assert TestReport("b", 0.1, 0.0, 10, "pvalue", p_value=0.02).passed
    assert not TestReport("b", 0.1, 0.0, 10, "pvalue", p_value=0.005).passed
    assert TestReport("c", 1.09, 1.0, 10, "rel", rel_tol=0.1).passed
    assert not TestReport("c", 1.11, 1.0, 10, "rel", rel_tol=0.1).passed
    with pytest.raises(ValidationError):
        TestReport("d", 0.0, 0.0, 1, "bogus")


def test_report_json_carries_pass_flag():
    r = TestReport("a", np.float64(0.5), 0.5, 3, "se", stderr=0.1, details={"x": np.arange(2)})
    d = json.loads(r.to_json())
    assert d["pass"] is True and d["details"]["x"] == [0, 1]
    assert "PASS" in report_table([r])


def test_derived_seeds_are_distinct_and_stable():
    assert derived_seed(1, 1) == derived_seed(1, 1)
    assert len({derived_seed(1, 1), derived_seed(1, 2), derived_seed(2, 1)}) == 3


def test_crossing_target_is_half_for_equal_weights():
    rm = driftless_model(single_membrane_table(1.0, 0.5), domain=(0.0, 2.0))
    rep = crossing_probability_test(rm, 1.0, 0.05, SimConfig(horizon=1.0, step=1e-4, n_paths=4000, seed=3))
    assert rep.target == pytest.approx(0.5, abs=1e-12)
    assert rep.passed


def test_crossing_target_for_asymmetric_shell():
    # driftless scale: slope 1 below and (1 - alpha)/alpha above the membrane
    alpha = 0.75
    rm = driftless_model(single_membrane_table(1.0, alpha), domain=(0.0, 2.0))
    rep = crossing_probability_test(rm, 1.0, 0.05, SimConfig(horizon=1.0, step=1e-4, n_paths=4000, seed=4), upper_eps=0.1)
    below, above = 0.05, 0.1 * (1 - alpha) / alpha
    assert rep.target == pytest.approx(below / (below + above), abs=1e-12)
    assert rep.details["shell"] == [0.95, 1.1]


def test_crossing_swapped_alpha_control_fails():
    rm = driftless_model(single_membrane_table(1.0, 0.8), domain=(0.0, 2.0))
    cfg = SimConfig(horizon=1.0, step=1e-4, n_paths=4000, seed=5)
    assert crossing_probability_test(rm, 1.0, 0.05, cfg).passed
    assert not crossing_probability_test(rm, 1.0, 0.05, cfg, sim_skew=rm.skew.swapped()).passed


def test_crossing_shell_preconditions():
    st = SkewTable(single_membrane_table(1.0, 0.7).entries + single_membrane_table(1.03, 0.6).entries)
    rm = driftless_model(st, domain=(0.0, 2.0))
    cfg = SimConfig(n_paths=10)
    with pytest.raises(ConfigError, match="other membranes"):
        crossing_probability_test(rm, 1.0, 0.05, cfg)
    with pytest.raises(ConfigError, match="no membrane"):
        crossing_probability_test(rm, 0.5, 0.05, cfg)
    with pytest.raises(ConfigError, match="origin"):
        crossing_probability_test(rm, 1.0, 1.5, cfg)


def test_crossing_target_matches_oracle_with_bessel_drift(one_membrane_field):
    rm = radial_model(one_membrane_field)
    rep = crossing_probability_test(rm, 1.0, 0.05, SimConfig(horizon=1.0, step=1e-4, n_paths=200, seed=1))
    assert rep.target == exit_probability(rm.with_domain(0.95, 1.05), 1.0, 0.95, 1.05)
    # outward Bessel drift pushes the target above alpha
    assert rep.target > 2 / 3


def test_radial_consistency_requires_enough_paths(one_membrane_field):
    with pytest.raises(ConfigError):
        radial_consistency_test(one_membrane_field, skew_coefficients(one_membrane_field.membranes), SimConfig(n_paths=50))


def test_radial_consistency_small_run(one_membrane_field):
    st = skew_coefficients(one_membrane_field.membranes)
    cfg = SimConfig(horizon=0.3, step=1e-3, n_paths=1000, seed=2, x0=(1.0, 0.0, 0.0))
    rep = radial_consistency_test(one_membrane_field, st, cfg)
    assert rep.criterion == "pvalue" and rep.passed


def test_silverman_bandwidth_scaling():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((10000, 3))
    assert silverman_bandwidth(x) == pytest.approx((4 / (5 * 10000)) ** (1 / 7), rel=0.03)
    assert silverman_bandwidth(2 * x) == pytest.approx(2 * silverman_bandwidth(x))


def test_reversibility_rejects_tiny_bandwidth(one_membrane_field):
    st = skew_coefficients(one_membrane_field.membranes)
    cfg = SimConfig(horizon=0.2, step=1e-2, n_paths=500, seed=1)
    with pytest.raises(BandwidthError):
        reversibility_test(one_membrane_field, st, cfg, (0.6, 0, 0), (1.4, 0, 0), bandwidth=1e-3)


def test_reversibility_rejects_points_on_membranes(one_membrane_field):
    st = skew_coefficients(one_membrane_field.membranes)
    with pytest.raises(ValidationError):
        reversibility_test(one_membrane_field, st, SimConfig(n_paths=10), (1.0, 0, 0), (1.4, 0, 0))
    with pytest.raises(ValidationError):
        reversibility_test(one_membrane_field, st, SimConfig(n_paths=10), (1.4, 0, 0), (1.4, 0, 0))


def test_reversibility_small_run_without_membranes(flat_field):
    # translation invariance makes the kernel smoothing bias cancel, so a wide bandwidth is unbiased
    st = skew_coefficients(flat_field.membranes)
    cfg = SimConfig(horizon=0.5, step=1e-3, n_paths=20000, seed=11)
    rep = reversibility_test(flat_field, st, cfg, (0.6, 0, 0), (1.4, 0, 0), bandwidth=0.3, n_boot=50)
    assert rep.target == 1.0
    assert abs(rep.estimate - 1.0) <= 4 * rep.stderr


def test_occupation_refuses_transient_configuration(flat_field):
    st = skew_coefficients(flat_field.membranes)
    with pytest.raises(HypothesisViolation) as info:
        occupation_ratio_test(flat_field, st, SimConfig(n_paths=10), (1, 2), (2, 3))
    assert info.value.report["fitted_exponent"] == pytest.approx(3.0, abs=1e-3)


def test_occupation_equal_annuli_give_unit_ratio():
    wf = WeightField(build_membranes({"m0": 1.0, "gamma_top": 1.0, "gammabar_bottom": 1.0}), power_density(3, 2.0))
    st = skew_coefficients(wf.membranes)
    cfg = SimConfig(horizon=2.0, step=1e-2, n_paths=50, seed=3, x0=(1.5, 0, 0))
    rep = occupation_ratio_test(wf, st, cfg, (1, 2), (1, 2))
    assert rep.estimate == 1.0 and rep.target == pytest.approx(1.0)


def test_occupation_target_from_closed_form_masses():
    wf = WeightField(build_membranes({"m0": 1.0, "gamma_top": 1.0, "gammabar_bottom": 1.0}), power_density(3, 2.0))
    st = skew_coefficients(wf.membranes)
    cfg = SimConfig(horizon=2.0, step=1e-2, n_paths=50, seed=3, x0=(1.5, 0, 0))
    rep = occupation_ratio_test(wf, st, cfg, (1, 2), (2, 3))
    mass = lambda a, b: (b - np.arctan(b)) - (a - np.arctan(a))
    assert rep.target == pytest.approx(mass(1, 2) / mass(2, 3), rel=1e-10)
