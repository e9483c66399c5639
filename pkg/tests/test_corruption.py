import math

import numpy as np
import pytest

from robustpinn.corruption import (
    CorruptionSpec,
    corrupt,
    parse_corruption,
    scale_factor,
)
from robustpinn.problems import ObservationSet


def make_obs(n=1000, m=1, seed=0):
    rng = np.random.default_rng(seed)
    points = rng.uniform(-1, 1, size=(n, 1))
    values = rng.normal(0.0, 1.0, size=(n, m))
    return ObservationSet(points, values)


def test_scale_factor_two_values():
    assert scale_factor(np.array([0.0, 2.0])) == pytest.approx(math.sqrt(2.0))


def test_scale_factor_constant_warns():
    with pytest.warns(UserWarning, match="constant"):
        assert scale_factor(np.full(10, 3.3)) == 0.0


def test_scale_factor_sine_reference():
    x = np.linspace(-math.pi, math.pi, 20001)
    u = np.sin(4.0 * x) + 1.0
    assert scale_factor(u) == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-3)


def test_spec_validation():
    with pytest.raises(ValueError):
        CorruptionSpec("gaussian", alpha=0.0)
    with pytest.raises(ValueError):
        CorruptionSpec("gaussian", alpha=1.0)
    with pytest.raises(ValueError):
        CorruptionSpec("salt")
    with pytest.raises(ValueError):
        CorruptionSpec("outlier", alpha=0.2, spurious_value=math.inf)
    CorruptionSpec("clean")  # alpha not required


def test_parse_corruption():
    spec = parse_corruption("outlier:0.2", spurious_value=30.0, seed=5)
    assert spec.kind == "outlier" and spec.alpha == 0.2
    assert spec.spurious_value == 30.0 and spec.seed == 5
    assert parse_corruption("clean").kind == "clean"


def test_deterministic_given_seed():
    obs = make_obs()
    spec = CorruptionSpec("mixed", alpha=0.2, seed=42)
    a = corrupt(obs, spec)
    b = corrupt(obs, spec)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.corrupted_mask, b.corrupted_mask)
    c = corrupt(obs, CorruptionSpec("mixed", alpha=0.2, seed=43))
    assert not np.array_equal(a.values, c.values)


def test_clean_is_identity():
    obs = make_obs()
    out = corrupt(obs, CorruptionSpec("clean"))
    assert np.array_equal(out.values, obs.values)
    assert not out.corrupted_mask.any()


def test_gaussian_noise_scale():
    n = 100_000
    obs = make_obs(n=n, seed=1)
    sigma = scale_factor(obs.values[:, 0])
    out = corrupt(obs, CorruptionSpec("gaussian", alpha=0.2, seed=2))
    noise = out.values[:, 0] - obs.values[:, 0]
    assert np.std(noise) == pytest.approx(0.2 * sigma, rel=0.01)
    assert out.corrupted_mask.all()


def test_contaminated_mixture_scale():
    # mixture std = sqrt(0.8 + 0.2 * 100) * alpha * sigma = sqrt(20.8) alpha sigma
    n = 100_000
    obs = make_obs(n=n, seed=3)
    sigma = scale_factor(obs.values[:, 0])
    alpha = 0.2
    out = corrupt(obs, CorruptionSpec("contaminated", alpha=alpha, seed=4))
    noise = out.values[:, 0] - obs.values[:, 0]
    want = math.sqrt(0.8 + 0.2 * 100.0) * alpha * sigma
    assert np.std(noise) == pytest.approx(want, rel=0.03)
    assert out.corrupted_mask.all()


def test_contaminated_fixed_ratio():
    from robustpinn.corruption import contaminated_assignment

    for n in (10, 999, 10_000):
        wide = contaminated_assignment(n, np.random.default_rng(n))
        assert wide.sum() == n - int(0.8 * n)


def test_cauchy_median_scale():
    n = 100_000
    obs = make_obs(n=n, seed=7)
    sigma = scale_factor(obs.values[:, 0])
    alpha = 0.15
    out = corrupt(obs, CorruptionSpec("cauchy", alpha=alpha, seed=8))
    noise = out.values[:, 0] - obs.values[:, 0]
    # the Cauchy scale equals the median of |noise|
    assert np.median(np.abs(noise)) / (alpha * sigma) == pytest.approx(1.0, rel=0.05)


def test_outlier_exact_replacement():
    n = 100
    obs = make_obs(n=n, seed=9)
    out = corrupt(obs, CorruptionSpec("outlier", alpha=0.05, spurious_value=10.0, seed=10))
    assert out.corrupted_mask.sum() == 5
    assert np.all(out.values[out.corrupted_mask, 0] == 10.0)
    assert np.array_equal(out.values[~out.corrupted_mask], obs.values[~out.corrupted_mask])


def test_mixed_replaces_and_perturbs():
    n = 200
    obs = make_obs(n=n, seed=11)
    out = corrupt(obs, CorruptionSpec("mixed", alpha=0.2, spurious_value=30.0, seed=12))
    spurious = out.corrupted_mask
    assert spurious.sum() == 40
    assert np.all(out.values[spurious, 0] == 30.0)
    rest = out.values[~spurious, 0] - obs.values[~spurious, 0]
    assert np.all(rest != 0.0)  # everyone else got Gaussian noise


def test_spurious_fraction_below_one_row_warns():
    obs = make_obs(n=10)
    with pytest.warns(UserWarning, match="no rows replaced"):
        out = corrupt(obs, CorruptionSpec("outlier", alpha=0.05, seed=13))
    assert not out.corrupted_mask.any()
    assert np.array_equal(out.values, obs.values)


def test_vector_measurements_independent_components():
    n = 50_000
    obs = make_obs(n=n, m=2, seed=14)
    out = corrupt(obs, CorruptionSpec("gaussian", alpha=0.3, seed=15))
    noise = out.values - obs.values
    corr = np.corrcoef(noise[:, 0], noise[:, 1])[0, 1]
    assert abs(corr) < 0.02


def test_vector_spurious_sets_all_components():
    obs = make_obs(n=100, m=2, seed=16)
    out = corrupt(obs, CorruptionSpec("mixed", alpha=0.1, spurious_value=10.0, seed=17))
    rows = out.corrupted_mask
    assert np.all(out.values[rows] == 10.0)


def test_per_component_scales():
    # second component has 5x the spread; its noise must scale accordingly
    n = 100_000
    rng = np.random.default_rng(18)
    values = np.column_stack([rng.normal(0, 1, n), rng.normal(0, 5, n)])
    obs = ObservationSet(rng.uniform(-1, 1, (n, 1)), values)
    out = corrupt(obs, CorruptionSpec("gaussian", alpha=0.1, seed=19))
    noise = out.values - obs.values
    ratio = np.std(noise[:, 1]) / np.std(noise[:, 0])
    assert ratio == pytest.approx(5.0, rel=0.03)
