"""Truncated multivariate Taylor (jet) arithmetic.

A jet carries a function value together with its partial derivatives up to a
fixed total order (at most 3) in up to 3 independent variables.  Coefficients
are stored Taylor-normalized (derivative / alpha!) in a dense
graded-lexicographic layout, so the product rule is a plain convolution over
multi-indices and extraction multiplies alpha! back in.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import NamedTuple

import numpy as np

MAX_VARS = 3
MAX_ORDER = 3


class MulTable(NamedTuple):
    """Sparse product table: pair t multiplies slots I[t], J[t] into slot O[t].

    S scatters pair products onto the output coefficient; SI and SJ scatter
    pair adjoints back onto the operand slots, so both the product and its
    adjoints are a gather, an elementwise multiply, and one matmul.
    """

    I: np.ndarray
    J: np.ndarray
    O: np.ndarray
    S: np.ndarray
    SI: np.ndarray
    SJ: np.ndarray


class JetError(ValueError):
    """Invalid jet signature, argument, or unsupported operation."""


def _monomials(nvars: int, order: int) -> tuple[tuple[int, ...], ...]:
    """Multi-indices with |alpha| <= order: graded, lexicographic in a grade.

    Within a grade the leading variable dominates, e.g. for two variables the
    grade-1 block is (1,0), (0,1) so column i+1 is the first derivative in
    variable i.
    """
    out: list[tuple[int, ...]] = []

    def fill(prefix: tuple[int, ...], remaining: int, slots: int) -> None:
        if slots == 1:
            out.append(prefix + (remaining,))
            return
        for head in range(remaining, -1, -1):
            fill(prefix + (head,), remaining - head, slots - 1)

    for total in range(order + 1):
        fill((), total, nvars)
    return tuple(out)


class JetSpace:
    """Index tables for a fixed (nvars, order) signature.

    Holds the monomial layout, the factorial normalization vector, and sparse
    multiplication tables in gather/matmul form: a product is
    ``(a[..., I] * b[..., J]) @ S`` with S scattering each pair onto the
    coefficient of the summed multi-index.
    """

    def __init__(self, nvars: int, order: int):
        if not 1 <= nvars <= MAX_VARS:
            raise JetError(f"nvars must be in 1..{MAX_VARS}, got {nvars}")
        if not 0 <= order <= MAX_ORDER:
            raise JetError(f"order must be in 0..{MAX_ORDER}, got {order}")
        self.nvars = nvars
        self.order = order
        self.monomials = _monomials(nvars, order)
        self.size = len(self.monomials)
        self.position = {m: i for i, m in enumerate(self.monomials)}
        self.grades = np.array([sum(m) for m in self.monomials])
        self.factorials = np.array(
            [float(math.prod(math.factorial(k) for k in m)) for m in self.monomials]
        )
        self._tables: dict[tuple[int, int], MulTable] = {}

    def table(self, min_grade_a: int = 0, min_grade_b: int = 0) -> MulTable:
        """Multiplication table restricted to operand grades >= the minima.

        The restricted tables skip structurally-zero slots when multiplying
        value-free perturbation parts inside function composition.
        """
        key = (min_grade_a, min_grade_b)
        if key not in self._tables:
            I, J, K = [], [], []
            for i, mi in enumerate(self.monomials):
                if sum(mi) < min_grade_a:
                    continue
                for j, mj in enumerate(self.monomials):
                    if sum(mj) < min_grade_b:
                        continue
                    s = tuple(a + b for a, b in zip(mi, mj))
                    if sum(s) <= self.order:
                        I.append(i)
                        J.append(j)
                        K.append(self.position[s])
            npairs = len(K)
            S = np.zeros((npairs, self.size))
            S[np.arange(npairs), K] = 1.0
            SI = np.zeros((npairs, self.size))
            SI[np.arange(npairs), I] = 1.0
            SJ = np.zeros((npairs, self.size))
            SJ[np.arange(npairs), J] = 1.0
            self._tables[key] = MulTable(
                np.array(I), np.array(J), np.array(K), S, SI, SJ
            )
        return self._tables[key]

    @staticmethod
    def _flat_matmul(x: np.ndarray, m: np.ndarray) -> np.ndarray:
        # collapse leading axes so the contraction is one 2-D gemm instead of
        # a python-level loop over thousands of tiny stacked matmuls
        lead = x.shape[:-1]
        return (x.reshape(-1, x.shape[-1]) @ m).reshape(lead + (m.shape[1],))

    def mul(self, a: np.ndarray, b: np.ndarray, table: MulTable | None = None) -> np.ndarray:
        """Truncated Taylor product of coefficient arrays shaped (..., size)."""
        t = table if table is not None else self.table()
        return self._flat_matmul(a[..., t.I] * b[..., t.J], t.S)

    def mul_vjp_a(self, g: np.ndarray, b: np.ndarray, table: MulTable | None = None) -> np.ndarray:
        """Adjoint of ``mul`` with respect to its first argument."""
        t = table if table is not None else self.table()
        return self._flat_matmul(self._flat_matmul(g, t.S.T) * b[..., t.J], t.SI)

    def mul_vjp_b(self, g: np.ndarray, a: np.ndarray, table: MulTable | None = None) -> np.ndarray:
        """Adjoint of ``mul`` with respect to its second argument."""
        t = table if table is not None else self.table()
        return self._flat_matmul(self._flat_matmul(g, t.S.T) * a[..., t.I], t.SJ)

    # coefficient-first variants for the traced (coeffs, points, width) batch
    # layout: every slot is a contiguous (points, width) block, so the pair
    # loop runs on contiguous memory with no gathers or transposes

    def mul0(self, a: np.ndarray, b: np.ndarray, key=(0, 0)) -> np.ndarray:
        t = self.table(*key)
        out = np.zeros_like(a)
        for i, j, o in zip(t.I, t.J, t.O):
            out[o] += a[i] * b[j]
        return out

    def mul0_vjp_a(self, g: np.ndarray, b: np.ndarray, key=(0, 0)) -> np.ndarray:
        t = self.table(*key)
        out = np.zeros_like(g)
        for i, j, o in zip(t.I, t.J, t.O):
            out[i] += g[o] * b[j]
        return out

    def mul0_vjp_b(self, g: np.ndarray, a: np.ndarray, key=(0, 0)) -> np.ndarray:
        t = self.table(*key)
        out = np.zeros_like(g)
        for i, j, o in zip(t.I, t.J, t.O):
            out[j] += g[o] * a[i]
        return out


@lru_cache(maxsize=None)
def jet_space(nvars: int, order: int) -> JetSpace:
    return JetSpace(nvars, order)


def seed_coeffs(space: JetSpace, points: np.ndarray) -> np.ndarray:
    """Seed jets for a batch of input points: (..., nvars) -> (..., nvars, size)."""
    points = np.asarray(points, dtype=float)
    out = np.zeros(points.shape + (space.size,))
    out[..., 0] = points
    if space.order >= 1:
        for i in range(space.nvars):
            out[..., i, 1 + i] = 1.0
    return out


def compose_coeffs(space: JetSpace, derivs, a: np.ndarray) -> np.ndarray:
    """Compose a scalar function through a jet.

    ``derivs[k]`` must equal f^(k) evaluated at the value slot ``a[..., 0]``.
    Exact for the truncation because the perturbation part has no value
    coefficient, so its k-th power vanishes below grade k.
    """
    out = np.zeros_like(a)
    out[..., 0] = derivs[0]
    if space.order >= 1:
        abar = a.copy()
        abar[..., 0] = 0.0
        out += np.asarray(derivs[1])[..., None] * abar
        if space.order >= 2:
            p2 = space.mul(abar, abar, space.table(1, 1))
            out += (np.asarray(derivs[2]) / 2.0)[..., None] * p2
            if space.order >= 3:
                p3 = space.mul(p2, abar, space.table(2, 1))
                out += (np.asarray(derivs[3]) / 6.0)[..., None] * p3
    return out


def tanh_derivs(v: np.ndarray, n: int):
    """tanh and its first n derivatives via tanh' = 1 - tanh^2."""
    t = np.tanh(v)
    d = [t]
    if n >= 1:
        t2 = t * t
        f1 = 1.0 - t2
        d.append(f1)
    if n >= 2:
        d.append(-2.0 * t * f1)
    if n >= 3:
        d.append(f1 * (6.0 * t2 - 2.0))
    if n >= 4:
        d.append(f1 * t * (16.0 - 24.0 * t2))
    return d


def _sin_derivs(v, n):
    s, c = np.sin(v), np.cos(v)
    return [s, c, -s, -c][: n + 1]


def _cos_derivs(v, n):
    s, c = np.sin(v), np.cos(v)
    return [c, -s, -c, s][: n + 1]


def _exp_derivs(v, n):
    e = np.exp(v)
    return [e] * (n + 1)


def _recip_derivs(v, n):
    r = 1.0 / v
    return [r, -r * r, 2.0 * r**3, -6.0 * r**4][: n + 1]


def tanh_coeffs(space, a):
    return compose_coeffs(space, tanh_derivs(a[..., 0], space.order), a)


def sin_coeffs(space, a):
    return compose_coeffs(space, _sin_derivs(a[..., 0], space.order), a)


def cos_coeffs(space, a):
    return compose_coeffs(space, _cos_derivs(a[..., 0], space.order), a)


def exp_coeffs(space, a):
    return compose_coeffs(space, _exp_derivs(a[..., 0], space.order), a)


def recip_coeffs(space, a):
    if np.any(a[..., 0] == 0.0):
        raise JetError("division by a jet with zero value coefficient")
    return compose_coeffs(space, _recip_derivs(a[..., 0], space.order), a)


class Jet:
    """One truncated Taylor expansion at a point.

    Arithmetic is closed under a fixed (nvars, order) signature; combining
    jets from different signatures raises JetError.  Pure value semantics:
    every operation returns a fresh jet.
    """

    __slots__ = ("space", "coeffs")

    def __init__(self, space: JetSpace, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.size,):
            raise JetError(
                f"coefficient vector must have length {space.size}, got {coeffs.shape}"
            )
        self.space = space
        self.coeffs = coeffs

    @property
    def nvars(self) -> int:
        return self.space.nvars

    @property
    def order(self) -> int:
        return self.space.order

    @property
    def value(self) -> float:
        return float(self.coeffs[0])

    def _match(self, other) -> "Jet":
        if isinstance(other, Jet):
            if other.space is not self.space:
                raise JetError(
                    f"signature mismatch: ({self.nvars},{self.order}) vs "
                    f"({other.nvars},{other.order})"
                )
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return constant_jet(float(other), self.nvars, self.order)
        return NotImplemented

    def __add__(self, other):
        other = self._match(other)
        if other is NotImplemented:
            return NotImplemented
        return Jet(self.space, self.coeffs + other.coeffs)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._match(other)
        if other is NotImplemented:
            return NotImplemented
        return Jet(self.space, self.coeffs - other.coeffs)

    def __rsub__(self, other):
        other = self._match(other)
        if other is NotImplemented:
            return NotImplemented
        return Jet(self.space, other.coeffs - self.coeffs)

    def __neg__(self):
        return Jet(self.space, -self.coeffs)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Jet(self.space, self.coeffs * float(other))
        other = self._match(other)
        if other is NotImplemented:
            return NotImplemented
        return Jet(self.space, self.space.mul(self.coeffs, other.coeffs))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Jet(self.space, self.coeffs / float(other))
        other = self._match(other)
        if other is NotImplemented:
            return NotImplemented
        return Jet(self.space, self.space.mul(self.coeffs, recip_coeffs(self.space, other.coeffs)))

    def __rtruediv__(self, other):
        other = self._match(other)
        if other is NotImplemented:
            return NotImplemented
        return other / self

    def __repr__(self):
        return f"Jet(nvars={self.nvars}, order={self.order}, coeffs={self.coeffs!r})"


def constant_jet(value: float, nvars: int, order: int) -> Jet:
    space = jet_space(nvars, order)
    coeffs = np.zeros(space.size)
    coeffs[0] = value
    return Jet(space, coeffs)


def jet_seed(values, nvars: int, order: int) -> list[Jet]:
    """Seed one jet per input variable.

    Variable i carries value ``values[i]`` and a unit first-order coefficient
    in its own direction.
    """
    if not 1 <= nvars <= MAX_VARS:
        raise JetError(f"nvars must be in 1..{MAX_VARS}, got {nvars}")
    if not 1 <= order <= MAX_ORDER:
        raise JetError(f"order must be in 1..{MAX_ORDER}, got {order}")
    values = np.asarray(values, dtype=float)
    if values.shape != (nvars,):
        raise JetError(f"need exactly {nvars} seed values, got shape {values.shape}")
    space = jet_space(nvars, order)
    seeds = seed_coeffs(space, values)
    return [Jet(space, seeds[i]) for i in range(nvars)]


def jet_mul(a: Jet, b: Jet) -> Jet:
    return a * b


def jet_tanh(a: Jet) -> Jet:
    return Jet(a.space, tanh_coeffs(a.space, a.coeffs))


def jet_sin(a: Jet) -> Jet:
    return Jet(a.space, sin_coeffs(a.space, a.coeffs))


def jet_cos(a: Jet) -> Jet:
    return Jet(a.space, cos_coeffs(a.space, a.coeffs))


def jet_exp(a: Jet) -> Jet:
    return Jet(a.space, exp_coeffs(a.space, a.coeffs))


def jet_extract(a: Jet, alpha) -> float:
    """Plain partial derivative d^alpha f, i.e. stored coefficient times alpha!."""
    alpha = tuple(int(k) for k in alpha)
    if len(alpha) != a.nvars or any(k < 0 for k in alpha):
        raise JetError(f"multi-index {alpha} does not match nvars={a.nvars}")
    if sum(alpha) > a.order:
        raise JetError(f"|alpha|={sum(alpha)} exceeds jet order {a.order}")
    pos = a.space.position[alpha]
    return float(a.coeffs[pos] * a.space.factorials[pos])
