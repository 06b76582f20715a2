import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import special, stats

from hullfacets.geometry.distributions import (
    RadialModel,
    SlowlyVaryingFn,
    TailFamily,
    TailVariant,
    beta_type,
    builtin_models,
    custom_model,
    gaussian,
    student_t,
    uniform_ball,
)
from hullfacets.geometry.errors import DomainError, InvalidParameter, NonMonotoneSurvival
from test.geometry.helper import builtin_cases, support_grid


@pytest.mark.parametrize("model", builtin_cases(), ids=lambda m: m.model_id)
def test_builtin_survival_is_monotone_and_bounded(model):
    values = model.survival(support_grid(model, 1000))
    assert model.survival(0.0) == 1.0
    assert np.all((values >= 0.0) & (values <= 1.0))
    assert np.all(np.diff(values) <= 1e-15)


@pytest.mark.parametrize("model", builtin_cases(), ids=lambda m: m.model_id)
def test_builtin_survival_vanishes_at_support_end(model):
    end = model.support_upper if math.isfinite(model.support_upper) else 1e8 * model.scale
    assert model.survival(end) == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("model", builtin_cases(), ids=lambda m: m.model_id)
def test_sample_radius_inverts_survival(model):
    xs = support_grid(model, 50, start=0.1)[1:]
    assert_allclose(model.sample_radius(model.survival(xs)), xs, rtol=1e-10)


@pytest.mark.parametrize("model", builtin_cases(), ids=lambda m: m.model_id)
def test_sampled_radii_pass_kolmogorov_smirnov(model):
    rng = np.random.default_rng(12345)
    radii = np.linalg.norm(model.sample_points(rng, 100_000), axis=1)
    result = stats.kstest(radii, lambda x: 1.0 - model.survival(x))
    assert result.statistic < 1.63 / math.sqrt(100_000) * 1.5


def test_gaussian_plane_survival_is_rayleigh():
    xs = np.linspace(0.0, 6.0, 25)
    assert_allclose(gaussian(2).survival(xs), np.exp(-np.square(xs) / 2.0), rtol=1e-13, atol=1e-300)


def test_uniform_ball_survival_is_volume_ratio():
    assert uniform_ball(5).survival(0.5) == pytest.approx(0.96875, rel=1e-15)


@pytest.mark.parametrize(
    "model, u, expected",
    [
        (gaussian(2), 1.0, 0.0),
        (uniform_ball(2), 0.75, 0.5),
    ],
)
def test_sample_radius_examples(model, u, expected):
    assert model.sample_radius(u) == pytest.approx(expected, abs=1e-12)


def test_t_model_radius_at_one_percent_level():
    model = student_t(3.0, 2)
    assert model.survival(model.sample_radius(0.01)) == pytest.approx(0.01, rel=1e-10)


@pytest.mark.parametrize("u", [0.0, -0.1, 1.5])
def test_sample_radius_rejects_levels_outside_unit_interval(u):
    with pytest.raises(DomainError):
        gaussian(3).sample_radius(u)


def test_t_model_tail_constant_and_decay():
    model = student_t(1.0, 2)
    assert model.tail.variant == TailVariant.POLYNOMIAL
    assert model.tail.L(1e6) == pytest.approx(1.0, rel=1e-12)
    assert model.survival(100.0) * 100.0 == pytest.approx(1.0, rel=0.02)


@pytest.mark.parametrize("k, d", [(3.0, 2), (1.0, 4), (5.0, 3)])
def test_t_model_survival_matches_tabulated_radial_density(k, d):
    log_norm = math.log(2.0) - (d / 2.0) * math.log(k) - special.betaln(d / 2.0, k / 2.0)

    def radial_density(r):
        r = np.asarray(r, dtype=float)
        return np.exp(log_norm + (d - 1) * np.log(r) - ((k + d) / 2.0) * np.log1p(np.square(r) / k))

    model = student_t(k, d)
    tabulated = RadialModel.from_radial_density(radial_density, d, model.tail, scale=model.scale)
    xs = np.linspace(0.2, 3.0, 15) * model.scale
    assert_allclose(tabulated.survival(xs), model.survival(xs), rtol=1e-3)


def test_from_radial_density_rejects_unnormalized_density():
    with pytest.raises(InvalidParameter):
        RadialModel.from_radial_density(
            lambda r: 2.0 * np.asarray(r),
            2,
            TailFamily(TailVariant.TRUNCATED, SlowlyVaryingFn.constant(2.0), k=1.0),
            support_upper=2.0,
        )


def test_sample_point_mean_is_zero():
    rng = np.random.default_rng(7)
    points = gaussian(3).sample_points(rng, 100_000)
    se = points.std(axis=0, ddof=1) / math.sqrt(len(points))
    assert np.all(np.abs(points.mean(axis=0)) < 4.0 * se)


def test_uniform_ball_inner_ball_fraction():
    rng = np.random.default_rng(11)
    n = 100_000
    inside = np.linalg.norm(uniform_ball(3).sample_points(rng, n), axis=1) <= 0.5
    se = math.sqrt(0.125 * 0.875 / n)
    assert abs(inside.mean() - 0.125) < 4.0 * se


def test_gaussian_first_coordinate_tail():
    rng = np.random.default_rng(3)
    n = 1_000_000
    expected = 0.5 * special.erfc(1.0 / math.sqrt(2.0))
    observed = float(np.mean(gaussian(2).sample_points(rng, n)[:, 0] >= 1.0))
    assert abs(observed - expected) < 4.0 * math.sqrt(expected * (1.0 - expected) / n)


def test_sample_point_is_reproducible_per_stream():
    model = beta_type(1.0, 4)
    first = model.sample_point(np.random.default_rng(99))
    second = model.sample_point(np.random.default_rng(99))
    assert first.shape == (4,)
    assert np.array_equal(first, second)
    assert np.linalg.norm(first) < 1.0


@pytest.mark.parametrize(
    "factory, args",
    [
        (gaussian, (1,)),
        (uniform_ball, (0,)),
        (student_t, (0.0, 2)),
        (student_t, (-1.0, 3)),
        (beta_type, (-1.0, 2)),
        (beta_type, (0.5, 1)),
    ],
)
def test_builtin_models_reject_bad_parameters(factory, args):
    with pytest.raises(InvalidParameter):
        factory(*args)


def test_builtin_models_catalog():
    catalog = builtin_models()
    assert set(catalog) == {"gaussian", "t", "uniform_ball", "beta_type", "custom"}
    assert catalog["t"](2.0, 3).model_id == "t(d=3, k=2.0)"


def test_custom_model_without_quantile_is_inverted_numerically():
    model = custom_model(
        survival=lambda x: np.exp(-np.asarray(x)),
        tail=TailFamily(TailVariant.EXPONENTIAL, SlowlyVaryingFn.log_power(1.0)),
        d=3,
    )
    assert model.sample_radius(0.2) == pytest.approx(-math.log(0.2), rel=1e-12)
    assert model.density(1.0) == pytest.approx(math.exp(-1.0), rel=1e-6)


def test_custom_model_detects_increasing_survival():
    model = custom_model(
        survival=lambda x: np.minimum(1.0, 0.5 + 0.1 * np.asarray(x)),
        tail=TailFamily(TailVariant.EXPONENTIAL, SlowlyVaryingFn.sqrt_log()),
        d=2,
    )
    with pytest.raises(NonMonotoneSurvival):
        model.sample_radius(0.3)


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_scaled_model(c):
    model = gaussian(3)
    scaled = model.scaled(c)
    assert scaled.survival(1.3 * c) == pytest.approx(model.survival(1.3), rel=1e-14)
    assert scaled.sample_radius(0.3) == pytest.approx(c * model.sample_radius(0.3), rel=1e-12)
    assert scaled.density(c) == pytest.approx(model.density(1.0) / c, rel=1e-12)


def test_scaled_rejects_non_positive_factor():
    with pytest.raises(InvalidParameter):
        gaussian(2).scaled(0.0)


@settings(max_examples=50, deadline=None)
@given(u=st.floats(min_value=1e-12, max_value=1.0), d=st.integers(min_value=2, max_value=8))
def test_uniform_ball_radius_round_trip(u, d):
    model = uniform_ball(d)
    assert model.survival(model.sample_radius(u)) == pytest.approx(u, abs=1e-12)


@pytest.mark.parametrize("L", [SlowlyVaryingFn.sqrt_log(), SlowlyVaryingFn.log_power(2.0)], ids=lambda L: L.name)
@pytest.mark.parametrize("scale", [0.5, 2.0, 10.0])
def test_slow_variation(L, scale):
    gaps = [abs(L(scale * s) / L(s) - 1.0) for s in np.geomspace(1e2, 1e12, 11)]
    assert np.all(np.diff(gaps) < 0)


def test_log_derivative_defaults_to_finite_differences():
    L = SlowlyVaryingFn(lambda s: math.sqrt(2.0 * math.log(s)))
    s = 1e3
    assert L.log_derivative(s) == pytest.approx(1.0 / (2.0 * s * math.log(s)), rel=1e-6)
    assert L.epsilon(s) == pytest.approx(SlowlyVaryingFn.sqrt_log().epsilon(s), rel=1e-6)


def test_log_space_evaluation():
    L = SlowlyVaryingFn.sqrt_log()
    assert L.at_log(math.log(1e5)) == pytest.approx(L(1e5), rel=1e-12)
    assert L.at_log(5000.0) == pytest.approx(100.0)
    with pytest.raises(DomainError):
        SlowlyVaryingFn(lambda s: math.log(s)).at_log(5000.0)


@pytest.mark.parametrize(
    "variant, k",
    [
        (TailVariant.TRUNCATED, 0.0),
        (TailVariant.TRUNCATED, None),
        (TailVariant.POLYNOMIAL, -1.0),
    ],
)
def test_tail_family_rejects_bad_exponent(variant, k):
    with pytest.raises(InvalidParameter):
        TailFamily(variant, SlowlyVaryingFn.constant(1.0), k=k)


def test_exponential_tail_has_no_exponent():
    with pytest.raises(InvalidParameter):
        _ = TailFamily(TailVariant.EXPONENTIAL, SlowlyVaryingFn.sqrt_log()).k


def test_slowly_varying_constant_must_be_positive():
    with pytest.raises(InvalidParameter):
        SlowlyVaryingFn.constant(0.0)
