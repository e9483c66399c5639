import numpy as np
import pytest

from robustpinn import autodiff as ad
from robustpinn.jets import jet_space
from robustpinn.network import LayerSpec, init_params, trace_network


def quadratic_build(p):
    return ad.mul(0.5, ad.total(ad.square(p)))


def test_quadratic_gradient_is_theta():
    theta = np.array([1.0, -2.0, 0.5, 3.0])
    value, grad = ad.loss_gradient(theta, quadratic_build)
    assert value == pytest.approx(0.5 * np.sum(theta**2))
    assert np.allclose(grad, theta, atol=1e-14)


def test_check_gradient_quadratic_tight():
    theta = np.linspace(-1, 1, 7)
    assert ad.check_gradient(theta, quadratic_build, probes=20, step=1e-6) <= 1e-8


def test_unused_coordinate_has_exact_zero_gradient():
    def build(p):
        return ad.square(ad.pindex(p, 0))

    _, grad = ad.loss_gradient(np.array([2.0, 5.0, -3.0]), build)
    assert grad[0] == pytest.approx(4.0)
    assert grad[1] == 0.0 and grad[2] == 0.0


def test_gradient_linearity():
    rng = np.random.default_rng(0)
    theta = rng.normal(size=10)

    def f(p):
        return ad.total(ad.square(p))

    def g(p):
        return ad.mean(ad.mul(p, 3.0))

    def fg(p):
        return ad.add(f(p), g(p))

    _, gf = ad.loss_gradient(theta, f)
    _, gg = ad.loss_gradient(theta, g)
    _, gfg = ad.loss_gradient(theta, fg)
    assert np.allclose(gfg, gf + gg, atol=1e-14)


def test_abs_subgradient_zero_at_kink():
    def build(p):
        return ad.total(ad.absolute(p))

    _, grad = ad.loss_gradient(np.array([0.0, -2.0, 3.0]), build)
    assert np.array_equal(grad, [0.0, -1.0, 1.0])


def test_nonfinite_loss_raises():
    def build(p):
        out = ad.mul(p, np.inf)
        return ad.total(out)

    with pytest.raises(ad.NonFiniteLossError):
        ad.loss_gradient(np.array([1.0]), build)


def test_abs_data_term_gradient_matches_fd():
    # |u(x0) - u0| through a small traced net
    spec = LayerSpec((1, 6, 1))
    params = init_params(spec, seed=1)
    space = jet_space(1, 0)
    X = np.array([[0.7]])

    def build(p):
        out = trace_network(p, spec, X, space)
        pred = ad.derivative(out, 0, (0,), space)
        return ad.mean(ad.absolute(pred - 0.9))

    err = ad.check_gradient(params.theta, build, probes=40, step=1e-6,
                            rng=np.random.default_rng(2))
    assert err <= 1e-6


@pytest.mark.parametrize("nvars,order", [(1, 0), (1, 2), (2, 2), (3, 3)])
def test_traced_derivative_losses_match_fd(nvars, order):
    # exercises affine + jtanh backward across jet orders
    spec = LayerSpec((nvars, 5, 4, 2))
    params = init_params(spec, seed=nvars * 10 + order)
    space = jet_space(nvars, order)
    rng = np.random.default_rng(5)
    X = rng.uniform(-1, 1, size=(7, nvars))

    def build(p):
        out = trace_network(p, spec, X, space)
        terms = None
        for field in range(2):
            for pos in range(space.size):
                alpha = space.monomials[pos]
                term = ad.mean(ad.square(ad.derivative(out, field, alpha, space)))
                terms = term if terms is None else ad.add(terms, term)
        return terms

    err = ad.check_gradient(params.theta, build, probes=60, step=1e-6,
                            rng=np.random.default_rng(6))
    assert err <= 2e-5, (nvars, order, err)


def test_traced_value_matches_untraced():
    from robustpinn.network import forward_coeffs

    spec = LayerSpec((2, 6, 5, 3))
    params = init_params(spec, seed=8)
    space = jet_space(2, 2)
    X = np.random.default_rng(9).normal(size=(11, 2))
    traced = trace_network(ad.Var(params.theta, requires=False), spec, X, space)
    untraced = forward_coeffs(params.theta, spec, X, space)
    assert np.array_equal(traced.value.transpose(1, 2, 0), untraced)


def test_pde_style_loss_gradient_matches_fd():
    # Poisson-style objective: mean (u_xx + 16 sin 4x)^2 on a tiny net
    spec = LayerSpec((1, 5, 5, 1))
    space = jet_space(1, 2)
    rng = np.random.default_rng(12)
    X = rng.uniform(-np.pi, np.pi, size=(20, 1))
    src = 16.0 * np.sin(4.0 * X[:, 0])

    def build(p):
        out = trace_network(p, spec, X, space)
        resid = ad.derivative(out, 0, (2,), space) + src
        return ad.mean(ad.square(resid))

    for trial in range(20):
        params = init_params(spec, seed=100 + trial)
        err = ad.check_gradient(params.theta, build, probes=10, step=1e-5,
                                rng=np.random.default_rng(trial))
        assert err <= 1e-4, (trial, err)


def test_probe_gradient_reports_coordinates():
    theta = np.array([1.0, 2.0, 3.0])
    bad = np.array([1.0, 2.0, 999.0])
    probes = list(ad.probe_gradient(theta, quadratic_build, probes=30, step=1e-6,
                                    rng=np.random.default_rng(0), grad_override=bad))
    bad_coords = {c for err, c in probes if err > 0.1}
    assert bad_coords == {2}


def test_mean_and_total_backward():
    def build(p):
        return ad.add(ad.mean(p), ad.mul(ad.total(p), 2.0))

    _, grad = ad.loss_gradient(np.ones(4), build)
    assert np.allclose(grad, 0.25 + 2.0)


def test_sqrt_backward_safe_at_zero():
    def build(p):
        return ad.total(ad.sqrt(ad.square(p)))

    _, grad = ad.loss_gradient(np.array([0.0, 4.0]), build)
    assert grad[0] == 0.0
    assert grad[1] == pytest.approx(1.0)
