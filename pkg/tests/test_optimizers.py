import numpy as np
import pytest

from robustpinn.autodiff import NonFiniteLossError
from robustpinn.optimizers import (
    AdamConfig,
    LbfgsConfig,
    adam_run,
    lbfgs_run,
)


def quadratic(x):
    return float(np.sum(x**2)), 2.0 * x


def test_adam_single_step_hand_executed():
    # f = x^2 from x=1 with lr=0.1: mhat=2, vhat=4, step = 0.1 * 2/2 = 0.1
    cfg = AdamConfig(lr=0.1, iterations=1)
    res = adam_run(np.array([1.0]), quadratic, cfg)
    assert res.x[0] == pytest.approx(0.9, abs=1e-7)


def test_adam_zero_gradient_leaves_params():
    cfg = AdamConfig(iterations=100)

    def flat(x):
        return 1.0, np.zeros_like(x)

    res = adam_run(np.array([3.0, -2.0]), flat, cfg)
    assert np.array_equal(res.x, [3.0, -2.0])


def test_adam_converges_on_quadratic_bowl():
    cfg = AdamConfig(lr=1e-2, iterations=15000, record_every=1000)
    res = adam_run(np.array([1.0, -2.0, 0.5]), quadratic, cfg)
    assert res.loss <= 1e-6
    assert res.termination == "max_iterations"


def test_adam_first_step_scale_invariant():
    # per-coordinate normalization: first step is lr-sized regardless of c
    steps = []
    for c in (1.0, 100.0):
        def f(x, _c=c):
            return float(_c * np.sum(x**2)), 2.0 * _c * x

        res = adam_run(np.array([1.0]), f, AdamConfig(lr=0.05, iterations=1))
        steps.append(1.0 - res.x[0])
    assert steps[0] == pytest.approx(steps[1], rel=1e-6)


def test_adam_aborts_on_nonfinite_with_best_so_far():
    calls = {"n": 0}

    def exploding(x):
        calls["n"] += 1
        if calls["n"] > 5:
            raise NonFiniteLossError("data_loss")
        return quadratic(x)

    res = adam_run(np.array([1.0]), exploding, AdamConfig(iterations=100))
    assert res.error is not None
    assert "data_loss" in res.error
    assert np.all(np.isfinite(res.x))


def test_adam_history_recording():
    cfg = AdamConfig(iterations=10, record_every=3)
    res = adam_run(np.array([1.0]), quadratic, cfg)
    its = [i for i, _ in res.history]
    assert its == [0, 3, 6, 9, 10]


def test_adam_config_validation():
    with pytest.raises(ValueError):
        AdamConfig(lr=0.0)
    with pytest.raises(ValueError):
        AdamConfig(beta1=1.0)
    with pytest.raises(ValueError):
        AdamConfig(iterations=-1)


def test_lbfgs_quadratic_ten_dims():
    rng = np.random.default_rng(0)
    diag = rng.uniform(0.5, 10.0, size=10)

    def f(x):
        return float(np.sum(diag * x**2)), 2.0 * diag * x

    res = lbfgs_run(rng.normal(size=10), f, LbfgsConfig(gradient_tolerance=1e-10))
    assert res.iterations <= 30
    assert np.max(np.abs(2.0 * diag * res.x)) <= 1e-10


def test_lbfgs_rosenbrock():
    def rosen(z):
        x, y = z
        f = (1 - x) ** 2 + 100.0 * (y - x * x) ** 2
        g = np.array([
            -2 * (1 - x) - 400.0 * x * (y - x * x),
            200.0 * (y - x * x),
        ])
        return float(f), g

    res = lbfgs_run(np.array([-1.2, 1.0]), rosen, LbfgsConfig(gradient_tolerance=1e-12))
    assert res.loss <= 1e-8


def test_lbfgs_zero_iterations_at_optimum():
    res = lbfgs_run(np.zeros(4), quadratic, LbfgsConfig())
    assert res.iterations == 0
    assert res.termination == "gradient_tolerance"


def test_lbfgs_finite_termination_full_memory_quadratic():
    # memory = dim on a quadratic: near-exact line searches give CG-like
    # finite termination; allow the 2x slack for inexactness
    rng = np.random.default_rng(1)
    dim = 8
    A = rng.normal(size=(dim, dim))
    H = A @ A.T + dim * np.eye(dim)
    center = rng.normal(size=dim)

    def f(x):
        d = x - center
        return float(0.5 * d @ H @ d), H @ d

    # c2 = 0.1 keeps line searches near-exact, which the CG-like finite
    # termination argument assumes
    res = lbfgs_run(rng.normal(size=dim), f,
                    LbfgsConfig(memory=dim, gradient_tolerance=1e-9, c2=0.1))
    assert res.termination == "gradient_tolerance"
    assert res.iterations <= 2 * dim


def test_lbfgs_armijo_recorded_every_accepted_step():
    rng = np.random.default_rng(2)

    def f(x):
        return float(np.sum(x**4) + np.sum(x**2)), 4.0 * x**3 + 2.0 * x

    res = lbfgs_run(rng.normal(size=5), f, LbfgsConfig())
    assert len(res.armijo_flags) == res.iterations
    assert all(res.armijo_flags)


def test_lbfgs_kink_failure_returns_best():
    # |x| has a kink at the optimum; line-search failure is normal termination
    def f(x):
        return float(np.sum(np.abs(x))), np.sign(x)

    res = lbfgs_run(np.array([0.3, -0.2]), f, LbfgsConfig(max_iterations=100))
    assert res.error is None
    assert res.loss <= 0.5  # not worse than the start


def test_lbfgs_config_validation():
    with pytest.raises(ValueError):
        LbfgsConfig(memory=0)
    with pytest.raises(ValueError):
        LbfgsConfig(c1=0.5, c2=0.4)
