import math

import numpy as np
import pytest

from robustpinn.jets import (
    Jet,
    JetError,
    constant_jet,
    jet_cos,
    jet_exp,
    jet_extract,
    jet_mul,
    jet_seed,
    jet_sin,
    jet_space,
    jet_tanh,
)

from oracles import chain_rule_derivs, fd_derivative, rel_err


def test_seed_single_variable_order_two():
    (x,) = jet_seed([2.0], nvars=1, order=2)
    assert np.allclose(x.coeffs, [2.0, 1.0, 0.0])


def test_seed_two_variables_identity_directions():
    xs = jet_seed([0.0, 0.0], nvars=2, order=1)
    assert len(xs) == 2
    assert np.allclose(xs[0].coeffs, [0.0, 1.0, 0.0])
    assert np.allclose(xs[1].coeffs, [0.0, 0.0, 1.0])


def test_cube_derivatives_at_half():
    # frozen from d^k(x^3) at 0.5: value 0.125, 3x^2=0.75, 6x=3.0, 6
    (x,) = jet_seed([0.5], nvars=1, order=3)
    f = x * x * x
    assert jet_extract(f, (0,)) == pytest.approx(0.125)
    assert jet_extract(f, (1,)) == pytest.approx(0.75)
    assert jet_extract(f, (2,)) == pytest.approx(3.0)
    assert jet_extract(f, (3,)) == pytest.approx(6.0)


def test_seed_rejects_bad_signature():
    with pytest.raises(JetError):
        jet_seed([0.0], nvars=0, order=2)
    with pytest.raises(JetError):
        jet_seed([0.0], nvars=1, order=4)
    with pytest.raises(JetError):
        jet_seed([0.0, 1.0], nvars=1, order=2)


def test_mul_square_at_three():
    (x,) = jet_seed([3.0], nvars=1, order=1)
    sq = jet_mul(x, x)
    assert sq.value == pytest.approx(9.0)
    assert jet_extract(sq, (1,)) == pytest.approx(6.0)


def test_mul_identity():
    (x,) = jet_seed([1.7], nvars=1, order=3)
    b = jet_tanh(x)
    one = constant_jet(1.0, 1, 3)
    assert np.allclose(jet_mul(one, b).coeffs, b.coeffs)


def test_mul_bilinear_two_vars():
    x, y = jet_seed([2.0, 5.0], nvars=2, order=2)
    f = x * y
    assert f.value == pytest.approx(10.0)
    assert jet_extract(f, (1, 0)) == pytest.approx(5.0)
    assert jet_extract(f, (0, 1)) == pytest.approx(2.0)
    assert jet_extract(f, (1, 1)) == pytest.approx(1.0)
    assert jet_extract(f, (2, 0)) == pytest.approx(0.0)
    assert jet_extract(f, (0, 2)) == pytest.approx(0.0)


def test_mul_signature_mismatch():
    (a,) = jet_seed([1.0], nvars=1, order=2)
    (b,) = jet_seed([1.0], nvars=1, order=3)
    with pytest.raises(JetError):
        jet_mul(a, b)
    c = jet_seed([1.0, 2.0], nvars=2, order=2)[0]
    with pytest.raises(JetError):
        jet_mul(a, c)


def test_tanh_at_zero_is_odd():
    (x,) = jet_seed([0.0], nvars=1, order=2)
    t = jet_tanh(x)
    assert t.value == pytest.approx(0.0)
    assert jet_extract(t, (1,)) == pytest.approx(1.0)
    assert jet_extract(t, (2,)) == pytest.approx(0.0)  # tanh'' odd, zero at 0


def test_tanh_closed_form_at_one():
    (x,) = jet_seed([1.0], nvars=1, order=2)
    t = jet_tanh(x)
    assert t.value == pytest.approx(math.tanh(1.0), rel=1e-12)
    assert jet_extract(t, (1,)) == pytest.approx(1.0 - math.tanh(1.0) ** 2, rel=1e-12)


def test_tanh_order_three_matches_fd():
    (x,) = jet_seed([0.3], nvars=1, order=3)
    t = jet_tanh(x)
    for order in range(4):
        want = fd_derivative(math.tanh, 0.3, order)
        got = jet_extract(t, (order,))
        assert rel_err(got, want) < 1e-6


def test_extract_value_slot():
    (x,) = jet_seed([0.42], nvars=1, order=3)
    f = jet_exp(x) * jet_sin(x)
    assert jet_extract(f, (0,)) == pytest.approx(f.value)


def test_extract_poisson_curvature():
    # u = sin(4x) + 1 has u_xx = -16 sin(4x)
    for x0, want in [(0.0, 0.0), (math.pi / 8, -16.0)]:
        (x,) = jet_seed([x0], nvars=1, order=2)
        u = jet_sin(x * 4.0) + 1.0
        assert jet_extract(u, (2,)) == pytest.approx(want, abs=1e-10)


def test_extract_mixed_third_order():
    x, y = jet_seed([1.0, 1.0], nvars=2, order=3)
    f = x * x * y
    assert jet_extract(f, (2, 1)) == pytest.approx(2.0)


def test_extract_out_of_range():
    (x,) = jet_seed([1.0], nvars=1, order=2)
    with pytest.raises(JetError):
        jet_extract(x, (3,))
    with pytest.raises(JetError):
        jet_extract(x, (1, 0))


def test_division_by_zero_value_jet():
    (x,) = jet_seed([0.0], nvars=1, order=2)
    one = constant_jet(1.0, 1, 2)
    with pytest.raises(JetError):
        _ = one / x


# ---------------------------------------------------------------------------
# property suites
# ---------------------------------------------------------------------------

# each elementary op as a univariate scalar function together with the same
# computation routed through jets; g(x) = 0.4 sin x + 1.3 keeps tanh/exp tame
# and 1/x away from the pole
def _g_scalar(x):
    return 0.4 * math.sin(x) + 1.3


def _g_jet(x):
    return jet_sin(x) * 0.4 + 1.3


_ELEMENTARY = {
    "add": (lambda x: _g_scalar(x) + x, lambda j: _g_jet(j) + j),
    "neg": (lambda x: -_g_scalar(x), lambda j: -_g_jet(j)),
    "scalar-mul": (lambda x: 2.5 * _g_scalar(x), lambda j: 2.5 * _g_jet(j)),
    "mul": (lambda x: _g_scalar(x) * math.cos(x), lambda j: _g_jet(j) * jet_cos(j)),
    "div": (lambda x: math.cos(x) / _g_scalar(x), lambda j: jet_cos(j) / _g_jet(j)),
    "sin": (lambda x: math.sin(_g_scalar(x)), lambda j: jet_sin(_g_jet(j))),
    "cos": (lambda x: math.cos(_g_scalar(x)), lambda j: jet_cos(_g_jet(j))),
    "tanh": (lambda x: math.tanh(_g_scalar(x)), lambda j: jet_tanh(_g_jet(j))),
    "exp": (lambda x: math.exp(_g_scalar(x)), lambda j: jet_exp(_g_jet(j))),
}


@pytest.mark.parametrize("name", sorted(_ELEMENTARY))
def test_elementary_ops_match_finite_differences(name):
    scalar_f, jet_f = _ELEMENTARY[name]
    rng = np.random.default_rng(7)
    for x0 in rng.uniform(-1.5, 1.5, size=100):
        (x,) = jet_seed([x0], nvars=1, order=3)
        got = jet_f(x)
        for order in range(4):
            want = fd_derivative(scalar_f, float(x0), order)
            assert rel_err(jet_extract(got, (order,)), want) < 1e-5, (name, x0, order)


def test_mul_commutative_and_associative():
    rng = np.random.default_rng(11)
    space = jet_space(2, 3)
    for _ in range(50):
        a = Jet(space, rng.normal(size=space.size))
        b = Jet(space, rng.normal(size=space.size))
        c = Jet(space, rng.normal(size=space.size))
        assert np.allclose((a * b).coeffs, (b * a).coeffs, rtol=1e-14, atol=1e-14)
        assert np.allclose(
            ((a * b) * c).coeffs, (a * (b * c)).coeffs, rtol=1e-12, atol=1e-12
        )


# (outer derivative stack, inner derivative stack, jet outer, jet inner) pairs;
# stacks return [f, f', f'', f'''] at their argument
def _stack_sin(v):
    return [math.sin(v), math.cos(v), -math.sin(v), -math.cos(v)]


def _stack_cos(v):
    return [math.cos(v), -math.sin(v), -math.cos(v), math.sin(v)]


def _stack_exp(v):
    e = math.exp(v)
    return [e, e, e, e]


def _stack_tanh(v):
    t = math.tanh(v)
    f1 = 1 - t * t
    return [t, f1, -2 * t * f1, f1 * (6 * t * t - 2)]


def _stack_poly(v):
    # v^3 - 2v
    return [v**3 - 2 * v, 3 * v**2 - 2, 6 * v, 6.0]


def _stack_affine(v):
    return [0.7 * v + 0.2, 0.7, 0.0, 0.0]


_STACKS = {
    "sin": (_stack_sin, jet_sin),
    "cos": (_stack_cos, jet_cos),
    "exp": (_stack_exp, jet_exp),
    "tanh": (_stack_tanh, jet_tanh),
    "poly": (_stack_poly, lambda j: j * j * j - j * 2.0),
    "affine": (_stack_affine, lambda j: j * 0.7 + 0.2),
}

_COMPOSITES = [
    ("sin", "poly"),
    ("cos", "tanh"),
    ("exp", "sin"),
    ("tanh", "affine"),
    ("poly", "cos"),
    ("sin", "exp"),
    ("tanh", "poly"),
    ("exp", "affine"),
    ("cos", "poly"),
    ("poly", "tanh"),
]


@pytest.mark.parametrize("outer,inner", _COMPOSITES)
def test_composition_matches_symbolic_chain_rule(outer, inner):
    outer_stack, outer_jet = _STACKS[outer]
    inner_stack, inner_jet = _STACKS[inner]
    for x0 in (-0.8, 0.05, 0.6):
        g = inner_stack(x0)
        want = chain_rule_derivs(outer_stack(g[0]), g)
        (x,) = jet_seed([x0], nvars=1, order=3)
        got = outer_jet(inner_jet(x))
        for order in range(4):
            assert rel_err(jet_extract(got, (order,)), want[order]) < 1e-11
