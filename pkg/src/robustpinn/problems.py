"""Benchmark PDE problems: residual definitions, analytic references,
collocation samplers, and unknown-parameter slots.

Each problem bundles a residual builder usable both traced (for training
gradients) and untraced (to certify that the analytic reference zeroes the
residual, which validates the jet machinery end to end).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Var, derivative
from .jets import (
    JetSpace,
    cos_coeffs,
    exp_coeffs,
    jet_space,
    seed_coeffs,
    sin_coeffs,
)

TWO_PI = 2.0 * math.pi

# profile constants of the paper-scale cylinder case, retained for runs that
# ingest the external CFD dataset through the CSV path
CYLINDER_VISCOSITY = 2e-2
CYLINDER_PEAK_VELOCITY = 1.0
CYLINDER_CHANNEL_HEIGHT = 0.41


class CsvFormatError(ValueError):
    """Malformed observation CSV; message carries line and column."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned domain box."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"invalid box: lo={self.lo} hi={self.hi}")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        lo = np.asarray(self.lo) - tol
        hi = np.asarray(self.hi) + tol
        return np.all((points >= lo) & (points <= hi), axis=1)


@dataclass
class ObservationSet:
    """Measurement rows with benchmark-only corruption provenance.

    ``corrupted_mask`` is ground truth for scoring filters and is None when
    data comes from outside the synthetic benchmark path.
    """

    points: np.ndarray
    values: np.ndarray
    corrupted_mask: np.ndarray | None = None
    hidden_fields: tuple[str, ...] = ()

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.points.shape[0] != self.values.shape[0]:
            raise ValueError("points and values must have the same number of rows")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("observation values must be finite")
        if self.corrupted_mask is not None:
            self.corrupted_mask = np.asarray(self.corrupted_mask, dtype=bool)
            if self.corrupted_mask.shape != (self.points.shape[0],):
                raise ValueError("corrupted_mask must have one entry per row")

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, idx) -> "ObservationSet":
        mask = None if self.corrupted_mask is None else self.corrupted_mask[idx]
        return ObservationSet(self.points[idx], self.values[idx], mask, self.hidden_fields)


# one named field = sum of coef * d^alpha(output j); this single description
# drives traced measurement predictions, untraced field evaluation, and CSV
# column mapping
FieldDef = tuple[tuple[float, int, tuple[int, ...]], ...]


@dataclass
class PdeProblem:
    name: str
    input_names: tuple[str, ...]
    output_names: tuple[str, ...]
    jet_order_required: int
    measurement_names: tuple[str, ...]
    hidden_fields: tuple[str, ...]
    lambda_names: tuple[str, ...]
    lambda_true: tuple[float, ...]
    lambda_init: tuple[float, ...]
    domain: Box
    observation_box: Box
    collocation_default: int
    table1_widths: tuple[int, ...]
    table1_adam_iterations: int
    field_defs: dict[str, FieldDef]
    residual: Callable
    reference: Callable[[np.ndarray], dict[str, np.ndarray]]
    reference_jets: Callable[[np.ndarray, JetSpace], np.ndarray]
    pressure_snapshot_time: float | None = None

    @property
    def input_dim(self) -> int:
        return len(self.input_names)

    @property
    def observe_order(self) -> int:
        return max(
            sum(alpha)
            for name in self.measurement_names
            for _, _, alpha in self.field_defs[name]
        )

    def sample_collocation(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.domain.sample(n, rng)

    def sample_observations(self, n: int, rng: np.random.Generator) -> ObservationSet:
        points = self.observation_box.sample(n, rng)
        ref = self.reference(points)
        values = np.column_stack([ref[m] for m in self.measurement_names])
        return ObservationSet(points, values, np.zeros(n, dtype=bool), self.hidden_fields)

    def eval_grid(self) -> np.ndarray:
        """Dense scoring grid: 1001 (1-D), 101x101 (2-D), 21x51x51 (3-D)."""
        counts = {1: (1001,), 2: (101, 101), 3: (21, 51, 51)}[self.input_dim]
        axes = [
            np.linspace(self.domain.lo[i], self.domain.hi[i], counts[i])
            for i in range(self.input_dim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def pressure_grid(self) -> np.ndarray:
        """Grid for hidden-pressure scoring; a time snapshot when unsteady."""
        if self.pressure_snapshot_time is None:
            return self.eval_grid()
        axes = [
            np.linspace(self.domain.lo[i], self.domain.hi[i], 51)
            for i in range(1, self.input_dim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        spatial = np.column_stack([m.ravel() for m in mesh])
        t = np.full((spatial.shape[0], 1), self.pressure_snapshot_time)
        return np.hstack([t, spatial])

    def trace_fields(self, outs: Var, names, space: JetSpace) -> list[Var]:
        """Traced named-field predictions from network output jets."""
        preds = []
        for name in names:
            term = None
            for coef, j, alpha in self.field_defs[name]:
                piece = derivative(outs, j, alpha, space)
                piece = piece if coef == 1.0 else coef * piece
                term = piece if term is None else term + piece
            preds.append(term)
        return preds

    def extract_fields(self, coeffs: np.ndarray, names, space: JetSpace) -> dict[str, np.ndarray]:
        """Untraced named fields from a (N, out, K) coefficient batch."""
        out = {}
        for name in names:
            acc = 0.0
            for coef, j, alpha in self.field_defs[name]:
                pos = space.position[alpha]
                acc = acc + coef * coeffs[:, j, pos] * space.factorials[pos]
            out[name] = acc
        return out

    def reference_residual(self, points: np.ndarray) -> np.ndarray:
        """Residual component matrix of the analytic reference at true lambda."""
        space = jet_space(self.input_dim, self.jet_order_required)
        jets = self.reference_jets(points, space)  # (N, out, K) public layout
        outs = Var(np.ascontiguousarray(jets.transpose(2, 0, 1)), requires=False)
        lam = {
            name: Var(np.asarray(val))
            for name, val in zip(self.lambda_names, self.lambda_true)
        }
        comps = self.residual(outs, lam, points, space)
        return np.column_stack([c.value for c in comps])


def predict_fields(problem: PdeProblem, params, points: np.ndarray, names=None,
                   chunk: int = 8192) -> dict[str, np.ndarray]:
    """Evaluate named fields of a trained network on arbitrary points."""
    from .network import forward_coeffs

    names = tuple(names) if names is not None else tuple(problem.field_defs)
    order = max(sum(a) for n in names for _, _, a in problem.field_defs[n])
    space = jet_space(problem.input_dim, order)
    points = np.asarray(points, dtype=float)
    parts: list[dict[str, np.ndarray]] = []
    for start in range(0, points.shape[0], chunk):
        block = points[start : start + chunk]
        coeffs = forward_coeffs(params.theta, params.spec, block, space)
        parts.append(problem.extract_fields(coeffs, names, space))
    return {n: np.concatenate([p[n] for p in parts]) for n in names}


# ---------------------------------------------------------------------------
# Poisson: u_xx = -16 sin(4x), truth u = sin(4x) + 1
# ---------------------------------------------------------------------------


def poisson_problem() -> PdeProblem:
    def residual(outs, lam, points, space):
        u_xx = derivative(outs, 0, (2,), space)
        return [u_xx + 16.0 * np.sin(4.0 * points[:, 0])]

    def reference(points):
        x = points[:, 0]
        return {"u": np.sin(4.0 * x) + 1.0}

    def reference_jets(points, space):
        x = seed_coeffs(space, points)[:, 0]
        u = sin_coeffs(space, 4.0 * x)
        u[..., 0] += 1.0
        return u[:, None, :]

    return PdeProblem(
        name="poisson",
        input_names=("x",),
        output_names=("u",),
        jet_order_required=2,
        measurement_names=("u",),
        hidden_fields=(),
        lambda_names=(),
        lambda_true=(),
        lambda_init=(),
        domain=Box((-math.pi,), (math.pi,)),
        observation_box=Box((-math.pi,), (-math.pi / 2.0,)),
        collocation_default=2000,
        table1_widths=(1, 50, 50, 50, 50, 1),
        table1_adam_iterations=15000,
        field_defs={"u": ((1.0, 0, (0,)),)},
        residual=residual,
        reference=reference,
        reference_jets=reference_jets,
    )


# ---------------------------------------------------------------------------
# Wave: u_tt = c u_xx on [0,2pi]x[0,pi], truth sin(x)(sin t + cos t), c unknown
# ---------------------------------------------------------------------------


def wave_problem() -> PdeProblem:
    def residual(outs, lam, points, space):
        u_tt = derivative(outs, 0, (2, 0), space)
        u_xx = derivative(outs, 0, (0, 2), space)
        return [u_tt - lam["c"] * u_xx]

    def reference(points):
        t, x = points[:, 0], points[:, 1]
        return {"u": np.sin(x) * (np.sin(t) + np.cos(t))}

    def reference_jets(points, space):
        s = seed_coeffs(space, points)
        t, x = s[:, 0], s[:, 1]
        u = space.mul(sin_coeffs(space, x), sin_coeffs(space, t) + cos_coeffs(space, t))
        return u[:, None, :]

    return PdeProblem(
        name="wave",
        input_names=("t", "x"),
        output_names=("u",),
        jet_order_required=2,
        measurement_names=("u",),
        hidden_fields=(),
        lambda_names=("c",),
        lambda_true=(1.0,),
        lambda_init=(0.0,),
        domain=Box((0.0, 0.0), (TWO_PI, math.pi)),
        observation_box=Box((0.0, 0.0), (TWO_PI, math.pi)),
        collocation_default=2000,
        table1_widths=(2, 40, 40, 40, 40, 1),
        table1_adam_iterations=10000,
        field_defs={"u": ((1.0, 0, (0, 0)),)},
        residual=residual,
        reference=reference,
        reference_jets=reference_jets,
    )


# ---------------------------------------------------------------------------
# Steady N-S in Cauchy-stress form; analytic Kovasznay reference
# ---------------------------------------------------------------------------


def kovasznay_wavenumber(reynolds: float) -> float:
    return reynolds / 2.0 - math.sqrt(reynolds**2 / 4.0 + 4.0 * math.pi**2)


def steady_ns_problem(mu: float = CYLINDER_VISCOSITY) -> PdeProblem:
    """Stress-form steady N-S with six network outputs (u, v, p, s11, s12, s22).

    The reference is the Kovasznay flow at Reynolds number 1/mu (unit density
    and unit scales), the self-contained stand-in for the cylinder dataset;
    external data still enters through the CSV path.
    """
    if mu <= 0:
        raise ValueError("viscosity mu must be positive")
    re = 1.0 / mu
    lam_k = kovasznay_wavenumber(re)
    U, V, P, S11, S12, S22 = range(6)

    def residual(outs, lam, points, space):
        def d(f, a):
            return derivative(outs, f, a, space)

        u, v, p = d(U, (0, 0)), d(V, (0, 0)), d(P, (0, 0))
        s11, s12, s22 = d(S11, (0, 0)), d(S12, (0, 0)), d(S22, (0, 0))
        u_x, u_y = d(U, (1, 0)), d(U, (0, 1))
        v_x, v_y = d(V, (1, 0)), d(V, (0, 1))
        return [
            s11 + p - 2.0 * mu * u_x,
            s22 + p - 2.0 * mu * v_y,
            s12 - mu * (u_y + v_x),
            p + 0.5 * (s11 + s22),
            u * u_x + v * u_y - (d(S11, (1, 0)) + d(S12, (0, 1))),
            u * v_x + v * v_y - (d(S12, (1, 0)) + d(S22, (0, 1))),
            u_x + v_y,
        ]

    def reference(points):
        x, y = points[:, 0], points[:, 1]
        E = np.exp(lam_k * x)
        c2, s2 = np.cos(TWO_PI * y), np.sin(TWO_PI * y)
        u = 1.0 - E * c2
        v = (lam_k / TWO_PI) * E * s2
        p = 0.5 * (1.0 - np.exp(2.0 * lam_k * x))
        s11 = -p - 2.0 * mu * lam_k * E * c2
        s22 = -p + 2.0 * mu * lam_k * E * c2
        s12 = mu * (TWO_PI + lam_k**2 / TWO_PI) * E * s2
        return {"u": u, "v": v, "p": p, "s11": s11, "s12": s12, "s22": s22}

    def reference_jets(points, space):
        s = seed_coeffs(space, points)
        x, y = s[:, 0], s[:, 1]
        E = exp_coeffs(space, lam_k * x)
        c2 = cos_coeffs(space, TWO_PI * y)
        s2 = sin_coeffs(space, TWO_PI * y)
        Ec = space.mul(E, c2)
        u = -Ec.copy()
        u[..., 0] += 1.0
        v = (lam_k / TWO_PI) * space.mul(E, s2)
        p = -0.5 * exp_coeffs(space, 2.0 * lam_k * x)
        p[..., 0] += 0.5
        s11 = -p - 2.0 * mu * lam_k * Ec
        s22 = -p + 2.0 * mu * lam_k * Ec
        s12 = mu * (TWO_PI + lam_k**2 / TWO_PI) * space.mul(E, s2)
        return np.stack([u, v, p, s11, s12, s22], axis=1)

    zero = (0, 0)
    return PdeProblem(
        name="steady_ns",
        input_names=("x", "y"),
        output_names=("u", "v", "p", "s11", "s12", "s22"),
        jet_order_required=1,
        measurement_names=("u", "v"),
        hidden_fields=("p",),
        lambda_names=(),
        lambda_true=(),
        lambda_init=(),
        domain=Box((-0.5, -0.5), (1.0, 1.5)),
        observation_box=Box((-0.5, -0.5), (1.0, 1.5)),
        collocation_default=2000,
        table1_widths=(2, 40, 40, 40, 40, 40, 40, 40, 40, 6),
        table1_adam_iterations=10000,
        field_defs={
            "u": ((1.0, U, zero),),
            "v": ((1.0, V, zero),),
            "p": ((1.0, P, zero),),
            "s11": ((1.0, S11, zero),),
            "s12": ((1.0, S12, zero),),
            "s22": ((1.0, S22, zero),),
        },
        residual=residual,
        reference=reference,
        reference_jets=reference_jets,
    )


# ---------------------------------------------------------------------------
# Unsteady N-S via stream function; traveling Taylor-Green reference
# ---------------------------------------------------------------------------


def unsteady_ns_problem(boost: float = 0.5, viscosity: float = 0.01) -> PdeProblem:
    """Stream-function unsteady N-S with unknown lambda1, lambda2.

    The reference is the Taylor-Green vortex observed from a frame translating
    at ``boost`` along x (still an exact solution).  With zero boost the
    vortex's convective term is a pure pressure gradient, leaving lambda1 with
    an exact flat direction when pressure is hidden, so a nonzero boost is the
    default.
    """
    nu = viscosity
    PSI, P = 0, 1

    def residual(outs, lam, points, space):
        def d(f, a):
            return derivative(outs, f, a, space)

        u = d(PSI, (0, 0, 1))
        v = -d(PSI, (0, 1, 0))
        u_t, u_x, u_y = d(PSI, (1, 0, 1)), d(PSI, (0, 1, 1)), d(PSI, (0, 0, 2))
        u_xx, u_yy = d(PSI, (0, 2, 1)), d(PSI, (0, 0, 3))
        v_t, v_x, v_y = -d(PSI, (1, 1, 0)), -d(PSI, (0, 2, 0)), -d(PSI, (0, 1, 1))
        v_xx, v_yy = -d(PSI, (0, 3, 0)), -d(PSI, (0, 1, 2))
        p_x, p_y = d(P, (0, 1, 0)), d(P, (0, 0, 1))
        l1, l2 = lam["lambda1"], lam["lambda2"]
        return [
            u_t + l1 * (u * u_x + v * u_y) + p_x - l2 * (u_xx + u_yy),
            v_t + l1 * (u * v_x + v * v_y) + p_y - l2 * (v_xx + v_yy),
        ]

    def reference(points):
        t, x, y = points[:, 0], points[:, 1], points[:, 2]
        xi = x - boost * t
        F = np.exp(-2.0 * nu * t)
        u = boost - np.cos(xi) * np.sin(y) * F
        v = np.sin(xi) * np.cos(y) * F
        p = -0.25 * (np.cos(2.0 * xi) + np.cos(2.0 * y)) * F**2
        psi = boost * y + np.cos(xi) * np.cos(y) * F
        return {"u": u, "v": v, "p": p, "psi": psi}

    def reference_jets(points, space):
        s = seed_coeffs(space, points)
        t, x, y = s[:, 0], s[:, 1], s[:, 2]
        xi = x - boost * t
        F = exp_coeffs(space, -2.0 * nu * t)
        psi = space.mul(space.mul(cos_coeffs(space, xi), cos_coeffs(space, y)), F)
        psi += boost * y
        p = -0.25 * space.mul(
            cos_coeffs(space, 2.0 * xi) + cos_coeffs(space, 2.0 * y),
            space.mul(F, F),
        )
        return np.stack([psi, p], axis=1)

    return PdeProblem(
        name="unsteady_ns",
        input_names=("t", "x", "y"),
        output_names=("psi", "p"),
        jet_order_required=3,
        measurement_names=("u", "v"),
        hidden_fields=("p",),
        lambda_names=("lambda1", "lambda2"),
        lambda_true=(1.0, nu),
        lambda_init=(0.0, 0.0),
        domain=Box((0.0, 0.0, 0.0), (2.0, TWO_PI, TWO_PI)),
        observation_box=Box((0.0, 0.0, 0.0), (2.0, TWO_PI, TWO_PI)),
        collocation_default=5000,
        table1_widths=(3, 20, 20, 20, 20, 20, 20, 20, 20, 2),
        table1_adam_iterations=10000,
        field_defs={
            "u": ((1.0, PSI, (0, 0, 1)),),
            "v": ((-1.0, PSI, (0, 1, 0)),),
            "p": ((1.0, P, (0, 0, 0)),),
        },
        residual=residual,
        reference=reference,
        reference_jets=reference_jets,
        pressure_snapshot_time=1.0,
    )


PROBLEMS: dict[str, Callable[[], PdeProblem]] = {
    "poisson": poisson_problem,
    "wave": wave_problem,
    "steady_ns": steady_ns_problem,
    "unsteady_ns": unsteady_ns_problem,
}


def get_problem(name: str, **kwargs) -> PdeProblem:
    if name not in PROBLEMS:
        raise ValueError(f"unknown problem '{name}'; choices: {sorted(PROBLEMS)}")
    return PROBLEMS[name](**kwargs)


# ---------------------------------------------------------------------------
# observation CSV interface
# ---------------------------------------------------------------------------

_INPUT_COLUMNS = ("t", "x", "y")
_MEASUREMENT_COLUMNS = ("u", "v")


def save_observations_csv(path, points: np.ndarray, input_names, values: np.ndarray,
                          measurement_names, ref: dict[str, np.ndarray] | None = None) -> None:
    """Write the schema this package reads back: inputs, measurements, ref_*.

    Floats are written as shortest round-trip reprs so a save/load cycle is
    bit-exact.
    """
    values = np.atleast_2d(values)
    ref = ref or {}
    header = list(input_names) + list(measurement_names) + [f"ref_{k}" for k in ref]
    cols = [points[:, i] for i in range(points.shape[1])]
    cols += [values[:, j] for j in range(values.shape[1])]
    cols += [np.asarray(ref[k]) for k in ref]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_reference_csv(path, domain: Box | None = None):
    """Load an observation CSV, returning (ObservationSet, reference columns).

    Header must name inputs from (t, x, y) in that order with x mandatory,
    then one or two measurement columns (u or u,v), then optional hidden
    reference columns prefixed ``ref_``.  '#' lines are comments.
    """
    with open(path, encoding="utf-8") as fh:
        raw = fh.readlines()
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(raw)]
    rows = [(n, ln) for n, ln in lines if ln and not ln.startswith("#")]
    if not rows:
        raise CsvFormatError(f"{path}: empty file")
    header_line, header = rows[0]
    names = [c.strip() for c in header.split(",")]
    # walk the header: inputs (subset of t,x,y in order), then measurements,
    # then ref_ columns
    idx = 0
    input_names = []
    allowed = list(_INPUT_COLUMNS)
    while idx < len(names) and names[idx] in allowed:
        pos = allowed.index(names[idx])
        input_names.append(names[idx])
        allowed = allowed[pos + 1 :]
        idx += 1
    if "x" not in input_names:
        raise CsvFormatError(f"{path}: line {header_line}: missing required column 'x'")
    measurement_names = []
    while idx < len(names) and names[idx] in _MEASUREMENT_COLUMNS:
        measurement_names.append(names[idx])
        idx += 1
    if not measurement_names:
        raise CsvFormatError(
            f"{path}: line {header_line}: missing measurement column ('u' or 'u,v')"
        )
    ref_names = []
    for c in names[idx:]:
        if not c.startswith("ref_"):
            raise CsvFormatError(
                f"{path}: line {header_line}: unexpected column '{c}' (want ref_*)"
            )
        ref_names.append(c)

    width = len(names)
    data = np.empty((len(rows) - 1, width))
    for out_row, (line_no, ln) in enumerate(rows[1:]):
        cells = [c.strip() for c in ln.split(",")]
        if len(cells) != width:
            raise CsvFormatError(
                f"{path}: line {line_no}: expected {width} cells, found {len(cells)}"
            )
        for j, cell in enumerate(cells):
            try:
                data[out_row, j] = float(cell)
            except ValueError:
                raise CsvFormatError(
                    f"{path}: line {line_no}: column '{names[j]}': "
                    f"could not parse {cell!r} as a number"
                ) from None

    points = data[:, : len(input_names)]
    values = data[:, len(input_names) : len(input_names) + len(measurement_names)]
    if domain is not None:
        inside = domain.contains(points)
        if not np.all(inside):
            bad = int(np.argmin(inside))
            raise CsvFormatError(
                f"{path}: data row {bad + 1}: point {points[bad].tolist()} "
                f"outside domain [{domain.lo}, {domain.hi}]"
            )
    ref = {
        name[len("ref_"):]: data[:, len(input_names) + len(measurement_names) + k]
        for k, name in enumerate(ref_names)
    }
    obs = ObservationSet(points, values, None, tuple(ref))
    return obs, ref
