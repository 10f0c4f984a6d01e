import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import fd_grad
from skewmem.errors import EvaluationError, HypothesisViolation, ValidationError
from skewmem.weights import (
    AnalyticFamily,
    BallSampler,
    WeightField,
    a2_estimate,
    a2_ratio,
    build_membranes,
    check_h1,
    constant_density,
    density_from_callable,
    drift_ac,
    gaussian_density,
    geometric_weights,
    logistic_radii,
    make_density,
    min_phi_on_ball,
    phi,
    power_density,
    psi_mass,
    pure_power_density,
    radial_drift_ac,
)


def explicit():
    return build_membranes({
        "m0": 1.0,
        "inner": [(0.25, 0.5), (0.5, 0.8)],
        "gamma_top": 1.0,
        "outer": [(2.0, 3.0), (4.0, 1.5)],
        "gammabar_bottom": 2.0,
    })


def test_phi_piecewise_constant_on_annuli():
    ms = explicit()
    r = np.array([0.1, 0.3, 0.7, 1.5, 3.0, 10.0])
    assert phi(ms, r).tolist() == [0.5, 0.8, 1.0, 2.0, 3.0, 1.5]


def test_phi_on_membrane_is_average():
    ms = explicit()
    assert phi(ms, 1.0) == 1.5
    assert phi(ms, 0.25) == pytest.approx(0.65)


def test_breaks_and_levels_align():
    ms = explicit()
    assert ms.breaks.tolist() == [0.25, 0.5, 1.0, 2.0, 4.0]
    assert ms.levels.tolist() == [0.5, 0.8, 1.0, 2.0, 3.0, 1.5]


@pytest.mark.parametrize("spec", [
    {"m0": 1.0, "inner": [(0.5, 1.0), (0.4, 1.0)], "gamma_top": 1.0},
    {"m0": 1.0, "inner": [(1.5, 1.0)], "gamma_top": 1.0},
    {"m0": 1.0, "gamma_top": -1.0},
    {"m0": 0.0},
    {"m0": 1.0, "outer": [(2.0, np.inf)]},
    {"m0": 1.0, "bogus": 1},
])
def test_invalid_geometry_rejected(spec):
    with pytest.raises(ValidationError):
        build_membranes(spec)


def test_explicit_truncation_drops_small_jumps():
    ms = build_membranes({
        "m0": 1.0, "inner": [(0.5, 1.0 - 1e-9)], "gamma_top": 1.0,
        "outer": [(2.0, 2.0)], "gammabar_bottom": 2.0 + 1e-9,
    }, truncation_tolerance=1e-6)
    assert ms.inner == () and ms.outer == ()
    assert ms.truncation_note.dropped_inner == 1
    assert ms.truncation_note.dropped_outer == 1
    assert ms.truncation_note.dropped_mass == pytest.approx(2e-9, rel=1e-6)


def family(amp_in=0.5, amp_out=0.5, k_max=20):
    lr, rr = logistic_radii(1.0)
    return AnalyticFamily(1.0, lr, geometric_weights(1.0, amp_in), rr, geometric_weights(2.0, amp_out), k_max)


def test_family_matches_hand_enumeration():
    ms = build_membranes(family(k_max=3), tail_bound=1.0)
    ks = range(-3, 4)
    assert [a for a, _ in ms.inner] == pytest.approx([1.0 / (1 + 2.0 ** (-k)) for k in ks])
    assert [a for a, _ in ms.outer] == pytest.approx([1.0 + 2.0**k for k in ks])
    # weight inside l_k is the family weight with index k
    assert [g for _, g in ms.inner] == pytest.approx([1.0 + 0.5 * 0.5 ** abs(k) for k in ks])
    # weight outside r_k is the family weight with index k + 1
    assert [g for _, g in ms.outer] == pytest.approx([2.0 + 0.5 * 0.5 ** abs(k + 1) for k in ks])
    assert ms.breaks[0] > 0 and np.all(np.diff(ms.breaks) > 0)


def test_family_with_divergent_variation_is_rejected():
    lr, rr = logistic_radii(1.0)
    fam = AnalyticFamily(1.0, lr, lambda k: 1.5 + 0.5 * (-1) ** k, rr, geometric_weights(2.0), 10)
    with pytest.raises(HypothesisViolation):
        build_membranes(fam)


def test_family_truncation_accounts_for_dropped_mass():
    full = build_membranes(family(k_max=20))
    cut = build_membranes(family(k_max=20), truncation_tolerance=1e-3)
    assert len(cut.inner) < len(full.inner)
    # the dropped increments are the small jumps far out in k
    g = np.array([1.0 + 0.5 * 0.5 ** abs(k) for k in range(-20, 22)])
    jumps = np.abs(np.diff(g))
    gb = np.array([2.0 + 0.5 * 0.5 ** abs(k) for k in range(-20, 22)])
    jumps_b = np.abs(np.diff(gb))
    keep = np.abs(np.diff(g) / (g[1:] + g[:-1])) >= 1e-3
    keep_b = np.abs(np.diff(gb) / (gb[1:] + gb[:-1])) >= 1e-3
    expected = jumps[~keep].sum() + jumps_b[~keep_b].sum()
    assert cut.truncation_note.dropped_mass == pytest.approx(expected, rel=1e-12)
    assert cut.truncation_note.tail_mass > 0


def test_family_radii_colliding_in_floating_point():
    lr, rr = logistic_radii(1.0)
    fam = AnalyticFamily(1.0, lr, geometric_weights(1.0, 0.5, 0.999), rr, geometric_weights(2.0), 60)
    with pytest.raises(ValidationError, match="strictly increasing"):
        build_membranes(fam)


def test_check_h1_reports_increment_sums():
    rep = check_h1(explicit(), [0.3, 1.0, 5.0])
    assert rep.sum_inner == pytest.approx(0.3 + 0.2)
    assert rep.sum_outer == pytest.approx(1.0 + 1.5)
    assert rep.delta_r == {0.3: 0.5, 1.0: 0.5, 5.0: 0.5}
    assert rep.passed


def test_min_phi_on_ball_includes_straddling_annulus():
    ms = build_membranes(family(amp_in=-0.5, k_max=10))
    # l_{-7} < 0.01 < l_{-6}: the annulus (l_{-7}, l_{-6}) with weight index -6 meets the ball
    assert min_phi_on_ball(ms, 0.01) == pytest.approx(1.0 - 0.5 * 0.5**6)


@pytest.mark.parametrize("dm", [gaussian_density(3, 0.7), power_density(3, 1.5), pure_power_density(3, -1.0)])
def test_drift_matches_finite_difference_of_log_density(dm):
    rng = np.random.default_rng(1)
    x = rng.uniform(0.3, 2.0, size=(20, 3))
    logrho = lambda p: np.log(dm.rho(p))
    assert np.allclose(drift_ac(dm, x), 0.5 * fd_grad(logrho, x), rtol=1e-6, atol=1e-8)
    r = np.linalg.norm(x, axis=1)
    assert np.allclose(radial_drift_ac(dm, r), np.sum(drift_ac(dm, x) * x, axis=1) / r)


def test_density_from_callable_flags_fd_gradient():
    dm = density_from_callable(3, lambda x: np.exp(-np.sum(np.asarray(x) ** 2, axis=-1)))
    assert dm.fd_gradient
    x = np.array([[0.3, -0.2, 0.5]])
    assert np.allclose(drift_ac(dm, x), -x, rtol=1e-6)


def test_nonpositive_density_is_an_evaluation_error():
    dm = density_from_callable(3, lambda x: np.asarray(x)[..., 0], lambda x: np.ones_like(x))
    with pytest.raises(EvaluationError):
        drift_ac(dm, np.array([[-1.0, 0.0, 0.0]]))


def test_density_dimension_and_exponent_validation():
    with pytest.raises(ValidationError):
        constant_density(2)
    with pytest.raises(ValidationError):
        pure_power_density(3, -3.0)
    with pytest.raises(ValidationError):
        make_density("nope")


@pytest.mark.parametrize("r", [0.5, 2.0, 7.0])
def test_psi_mass_closed_forms(r):
    ms = build_membranes({"m0": 1.0, "gamma_top": 1.0, "gammabar_bottom": 1.0})
    assert psi_mass(WeightField(ms, constant_density(3)), 0.0, r) == pytest.approx(4 * np.pi * r**3 / 3, rel=1e-12)
    assert psi_mass(WeightField(ms, power_density(3, 2.0)), 0.0, r) == pytest.approx(4 * np.pi * (r - np.arctan(r)), rel=1e-10)
    assert psi_mass(WeightField(ms, pure_power_density(3, -2.0)), 0.0, r) == pytest.approx(4 * np.pi * r, rel=1e-10)


def test_psi_mass_with_membrane_splits_by_weight():
    wf = WeightField(build_membranes({"m0": 1.0, "gamma_top": 1.0, "gammabar_bottom": 3.0}), constant_density(3))
    expected = 4 * np.pi / 3 * (1.0 + 3.0 * (8.0 - 1.0))
    assert psi_mass(wf, 0.0, 2.0) == pytest.approx(expected, rel=1e-12)


def test_a2_ratio_is_one_for_constant_weight(flat_field):
    assert a2_ratio(flat_field.psi, np.zeros(3), 2.0, 3) == pytest.approx(1.0, abs=1e-12)


def test_a2_ratio_for_two_level_ball():
    # ball of radius 2 at the origin, weight 1 inside |x|<1 and 3 outside
    wf = WeightField(build_membranes({"m0": 1.0, "gamma_top": 1.0, "gammabar_bottom": 3.0}), constant_density(3))
    est = a2_estimate(wf, BallSampler(np.zeros((1, 3)), np.array([2.0])))
    f_in = 1.0 / 8.0
    expected = (f_in * 1 + (1 - f_in) * 3) * (f_in * 1 + (1 - f_in) / 3)
    assert est.sup_ratio == pytest.approx(expected, rel=1e-10)


@given(st.floats(0.1, 3.0), st.floats(0.1, 10.0), st.floats(0.1, 10.0))
def test_phi_positive_and_bounded_by_levels(r, g1, g2):
    ms = build_membranes({"m0": 1.0, "gamma_top": g1, "gammabar_bottom": g2})
    v = phi(ms, r)
    assert min(g1, g2) <= v <= max(g1, g2)


@given(st.floats(0.01, 100.0))
def test_scaled_membranes_scale_phi(c):
    ms = explicit()
    r = np.array([0.1, 0.3, 0.7, 1.5, 3.0, 10.0])
    assert np.allclose(phi(ms.scaled(c), r), c * phi(ms, r))
