"""Reverse-mode gradients of scalar losses through jet-valued computations.

The primal values flowing through a traced computation are batches of jet
coefficient arrays (points x outputs x coefficients), so the adjoint of every
node carries one entry per jet coefficient.  That makes parameter gradients
of losses that read input-derivatives of the network (the PDE residual terms)
exact, not nested-finite-difference approximations.

Reduction order is fixed everywhere (plain left-to-right numpy sums), so a
run with a single worker is bit-reproducible for a given seed.
"""

from __future__ import annotations

import numpy as np

from .jets import JetSpace, tanh_derivs


class NonFiniteLossError(RuntimeError):
    """A loss term evaluated to a non-finite value.

    Carries the identity of the offending term so the optimizer can report
    which part of the objective blew up instead of propagating NaN.
    """

    def __init__(self, term: str):
        super().__init__(f"non-finite value in loss term '{term}'")
        self.term = term


class Var:
    """One node of the tape: a numpy value plus its adjoint plumbing."""

    __slots__ = ("value", "grad", "_parents", "_backward", "requires")

    def __init__(self, value, parents=(), backward=None, requires=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self._parents = parents
        if requires is None:
            requires = any(p.requires for p in parents)
        self.requires = requires
        self._backward = backward if requires else None

    # arithmetic sugar; every operand is auto-lifted to a constant node
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires={self.requires})"


class Param(Var):
    """Leaf holding the flat trainable vector (network weights then lambdas)."""

    def __init__(self, packed: np.ndarray):
        super().__init__(np.asarray(packed, dtype=float), requires=True)


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x, requires=False)


def _accum(node: Var, g) -> None:
    if node.grad is None:
        node.grad = np.array(g, dtype=float)
    elif node.grad.shape == ():
        node.grad = node.grad + g
    else:
        node.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g


def add(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value + b.value, (a, b))

    def back(g):
        if a.requires:
            _accum(a, _unbroadcast(g, a.value.shape))
        if b.requires:
            _accum(b, _unbroadcast(g, b.value.shape))

    out._backward = back if out.requires else None
    return out


def sub(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value - b.value, (a, b))

    def back(g):
        if a.requires:
            _accum(a, _unbroadcast(g, a.value.shape))
        if b.requires:
            _accum(b, _unbroadcast(-g, b.value.shape))

    out._backward = back if out.requires else None
    return out


def mul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value * b.value, (a, b))

    def back(g):
        if a.requires:
            _accum(a, _unbroadcast(g * b.value, a.value.shape))
        if b.requires:
            _accum(b, _unbroadcast(g * a.value, b.value.shape))

    out._backward = back if out.requires else None
    return out


def neg(a) -> Var:
    a = _as_var(a)
    out = Var(-a.value, (a,))

    def back(g):
        _accum(a, -g)

    out._backward = back if out.requires else None
    return out


def square(a) -> Var:
    a = _as_var(a)
    out = Var(a.value * a.value, (a,))

    def back(g):
        _accum(a, 2.0 * a.value * g)

    out._backward = back if out.requires else None
    return out


def absolute(a) -> Var:
    """|x| with the subgradient at a kink defined as 0."""
    a = _as_var(a)
    out = Var(np.abs(a.value), (a,))

    def back(g):
        _accum(a, np.sign(a.value) * g)

    out._backward = back if out.requires else None
    return out


def sqrt(a) -> Var:
    """sqrt with the subgradient at 0 defined as 0."""
    a = _as_var(a)
    root = np.sqrt(a.value)
    out = Var(root, (a,))

    def back(g):
        safe = np.where(root > 0.0, root, 1.0)
        _accum(a, np.where(root > 0.0, 0.5 / safe, 0.0) * g)

    out._backward = back if out.requires else None
    return out


def total(a) -> Var:
    a = _as_var(a)
    out = Var(a.value.sum(), (a,))

    def back(g):
        _accum(a, np.broadcast_to(g, a.value.shape))

    out._backward = back if out.requires else None
    return out


def mean(a) -> Var:
    a = _as_var(a)
    n = a.value.size
    out = Var(a.value.mean(), (a,))

    def back(g):
        _accum(a, np.broadcast_to(g / n, a.value.shape))

    out._backward = back if out.requires else None
    return out


def pindex(p: Param, idx: int) -> Var:
    """Scalar view of one packed-parameter entry (used for PDE lambdas)."""
    out = Var(p.value[idx], (p,))

    def back(g):
        p.grad[idx] += float(np.sum(g))

    out._backward = back if out.requires else None
    return out


def affine(a: Var, p: Param, w_ofs: int, w_in: int, w_out: int, b_ofs: int) -> Var:
    """Dense layer over jet batches: (K, N, w_in) -> (K, N, w_out).

    With the coefficient axis leading, the weight contraction is one plain
    gemm on a reshaped view and every coefficient slice stays contiguous.
    Weights multiply every coefficient; the bias, being constant, only
    shifts the value slot.
    """
    W = p.value[w_ofs : w_ofs + w_in * w_out].reshape(w_in, w_out)
    b = p.value[b_ofs : b_ofs + w_out]
    k, n, _ = a.value.shape
    val = (a.value.reshape(-1, w_in) @ W).reshape(k, n, w_out)
    val[0] += b
    out = Var(val, (a, p))

    def back(g):
        gflat = g.reshape(-1, w_out)
        p.grad[w_ofs : w_ofs + w_in * w_out] += (a.value.reshape(-1, w_in).T @ gflat).ravel()
        p.grad[b_ofs : b_ofs + w_out] += g[0].sum(axis=0)
        if a.requires:
            _accum(a, (gflat @ W.T).reshape(k, n, w_in))

    out._backward = back if out.requires else None
    return out


def jtanh(a: Var, space: JetSpace) -> Var:
    """tanh composed through every jet in a (K, N, width) batch, with exact
    adjoints.

    Forward is the truncated composition out = sum_k f^(k)(v)/k! * abar^k;
    backward propagates both the perturbation chain (jet-product adjoints)
    and the value chain (the composition coefficients depend on the value
    slot, shifting the derivative stack up by one).
    """
    order = space.order
    av = a.value
    v = av[0]
    d = tanh_derivs(v, order + 1)
    abar = p2 = p3 = None
    if order >= 1:
        abar = av.copy()
        abar[0] = 0.0
        out_val = d[1][None] * abar  # slot 0 of abar is 0; patched below
        out_val[0] = d[0]
        if order >= 2:
            p2 = space.mul0(abar, abar, (1, 1))
            out_val += (d[2] / 2.0)[None] * p2
        if order >= 3:
            p3 = space.mul0(p2, abar, (2, 1))
            out_val += (d[3] / 6.0)[None] * p3
    else:
        out_val = d[0][None].copy()
    out = Var(out_val, (a,))

    def back(g):
        gv = d[1] * g[0]
        if order >= 1:
            gv += d[2] * np.einsum("knw,knw->nw", g, abar)
            ga = d[1][None] * g
        else:
            ga = np.zeros_like(av)
        if order >= 2:
            gv += (d[3] / 2.0) * np.einsum("knw,knw->nw", g, p2)
            gp2 = (d[2] / 2.0)[None] * g
        if order >= 3:
            gv += (d[4] / 6.0) * np.einsum("knw,knw->nw", g, p3)
            gp3 = (d[3] / 6.0)[None] * g
            gp2 += space.mul0_vjp_a(gp3, abar, (2, 1))
            ga += space.mul0_vjp_b(gp3, p2, (2, 1))
        if order >= 2:
            ga += space.mul0_vjp_a(gp2, abar, (1, 1))
            ga += space.mul0_vjp_b(gp2, abar, (1, 1))
        ga[0] = gv
        _accum(a, ga)

    out._backward = back if out.requires else None
    return out


def derivative(a: Var, field: int, alpha, space: JetSpace) -> Var:
    """Extract the plain partial d^alpha of one output field: -> (N,)."""
    alpha = tuple(alpha)
    pos = space.position[alpha]
    fact = space.factorials[pos]
    out = Var(a.value[pos, :, field] * fact, (a,))

    def back(g):
        # write straight into the parent adjoint; residual builders extract
        # many slots and a dense temporary per extraction would dominate
        if a.grad is None:
            a.grad = np.zeros_like(a.value)
        a.grad[pos, :, field] += g * fact

    out._backward = back if out.requires else None
    return out


def backward(root: Var) -> None:
    """Reverse sweep from a scalar root in topological order."""
    if root.value.shape != ():
        raise ValueError("backward() expects a scalar root")
    topo: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires and id(parent) not in seen:
                stack.append((parent, False))
    root.grad = np.ones(())
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if node is not root:
                node.grad = None  # free interior adjoints early


def loss_value(packed: np.ndarray, build) -> float:
    """Evaluate a loss functional without building adjoint closures."""
    frozen = Var(packed, requires=False)
    return float(build(frozen).value)


def loss_gradient(packed: np.ndarray, build) -> tuple[float, np.ndarray]:
    """Loss value and d(loss)/d(packed parameters).

    ``build`` maps a parameter node to a scalar Var; it is expected to raise
    NonFiniteLossError with the offending term's identity if a term blows up.
    """
    p = Param(packed)
    p.grad = np.zeros_like(p.value)
    root = build(p)
    value = float(root.value)
    if not np.isfinite(value):
        raise NonFiniteLossError("total")
    backward(root)
    return value, p.grad


def check_gradient(packed, build, probes: int = 50, step: float = 1e-5, rng=None) -> float:
    """Worst relative mismatch between analytic and central-FD directional
    derivatives along random coordinate directions."""
    worst = 0.0
    for err, _ in probe_gradient(packed, build, probes, step, rng):
        worst = max(worst, err)
    return worst


def probe_gradient(packed, build, probes: int = 50, step: float = 1e-5, rng=None,
                   grad_override=None, force_coords=()):
    """Yield (relative error, coordinate) per probe; powers check_gradient."""
    if probes < 1:
        raise ValueError("probes must be >= 1")
    if step <= 0:
        raise ValueError("step must be > 0")
    rng = np.random.default_rng(0) if rng is None else rng
    packed = np.asarray(packed, dtype=float)
    _, grad = loss_gradient(packed, build)
    if grad_override is not None:
        grad = grad_override
    dim = packed.size
    coords = list(force_coords) + list(rng.integers(0, dim, size=probes))
    for i in coords:
        shifted = packed.copy()
        shifted[i] += step
        hi = loss_value(shifted, build)
        shifted[i] -= 2 * step
        lo = loss_value(shifted, build)
        fd = (hi - lo) / (2 * step)
        scale = max(abs(fd), abs(grad[i]))
        err = 0.0 if scale < 1e-10 else abs(fd - grad[i]) / scale
        yield err, int(i)
