"""Fully connected tanh network evaluable on plain reals and on jets.

Parameters live in one flat vector (all weights layer-major, then all
biases), optionally followed by named trainable PDE parameters, so a single
optimizer pass updates the network and the physics unknowns together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Param, Var, affine, jtanh
from .jets import Jet, JetError, JetSpace, jet_space, seed_coeffs


@dataclass(frozen=True)
class LayerSpec:
    """Widths of every layer, input and output included."""

    widths: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("a network needs at least an input and an output layer")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"layer widths must be positive, got {self.widths}")
        if self.widths[0] not in (1, 2, 3):
            raise ValueError(f"input width must be 1, 2 or 3, got {self.widths[0]}")

    @property
    def input_width(self) -> int:
        return self.widths[0]

    @property
    def output_width(self) -> int:
        return self.widths[-1]

    @property
    def layer_shapes(self) -> tuple[tuple[int, int], ...]:
        return tuple(zip(self.widths[:-1], self.widths[1:]))

    @property
    def param_count(self) -> int:
        return sum(wi * wo + wo for wi, wo in self.layer_shapes)

    def offsets(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Start offsets of each layer's weight block and bias block."""
        w_ofs, pos = [], 0
        for wi, wo in self.layer_shapes:
            w_ofs.append(pos)
            pos += wi * wo
        b_ofs = []
        for _, wo in self.layer_shapes:
            b_ofs.append(pos)
            pos += wo
        return tuple(w_ofs), tuple(b_ofs)


@dataclass
class NetworkParams:
    """Flat trainable state: network weights plus optional PDE parameters."""

    spec: LayerSpec
    theta: np.ndarray
    lambda_names: tuple[str, ...] = ()
    lambda_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.lambda_values = np.asarray(self.lambda_values, dtype=float)
        if self.theta.shape != (self.spec.param_count,):
            raise ValueError(
                f"theta must have length {self.spec.param_count}, got {self.theta.shape}"
            )
        if len(set(self.lambda_names)) != len(self.lambda_names):
            raise ValueError("lambda names must be unique")
        if self.lambda_values.shape != (len(self.lambda_names),):
            raise ValueError("one lambda value per lambda name required")
        if self.lambda_values.size and not np.all(np.isfinite(self.lambda_values)):
            raise ValueError("lambda values must be finite")

    def packed(self) -> np.ndarray:
        return np.concatenate([self.theta, self.lambda_values])

    def with_packed(self, packed: np.ndarray) -> "NetworkParams":
        n = self.spec.param_count
        return NetworkParams(
            self.spec, packed[:n].copy(), self.lambda_names, packed[n:].copy()
        )

    def lambda_index(self, name: str) -> int:
        """Index of a lambda inside the packed vector."""
        return self.spec.param_count + self.lambda_names.index(name)

    def get_lambda(self, name: str) -> float:
        return float(self.lambda_values[self.lambda_names.index(name)])


def init_params(
    spec: LayerSpec,
    seed: int,
    lambda_names: tuple[str, ...] = (),
    lambda_init=None,
) -> NetworkParams:
    """Glorot-uniform weights, zero biases, deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    weights = []
    for wi, wo in spec.layer_shapes:
        limit = np.sqrt(6.0 / (wi + wo))
        weights.append(rng.uniform(-limit, limit, size=wi * wo))
    theta = np.concatenate(weights + [np.zeros(sum(spec.widths[1:]))])
    if lambda_init is None:
        lam = np.zeros(len(lambda_names))
    else:
        lam = np.asarray(lambda_init, dtype=float)
    return NetworkParams(spec, theta, tuple(lambda_names), lam)


def _trace_from_seeds(p: Param | Var, spec: LayerSpec, seeds: np.ndarray,
                      space: JetSpace) -> Var:
    """Affine/tanh alternation over a (K, N, width) seed batch."""
    w_ofs, b_ofs = spec.offsets()
    a = Var(seeds, requires=False)
    last = len(spec.layer_shapes) - 1
    for li, (wi, wo) in enumerate(spec.layer_shapes):
        a = affine(a, p, w_ofs[li], wi, wo, b_ofs[li])
        if li != last:
            a = jtanh(a, space)
    return a


def forward_coeffs(theta: np.ndarray, spec: LayerSpec, X: np.ndarray, space: JetSpace) -> np.ndarray:
    """Jet-coefficient batch evaluation: (N, d) points -> (N, out, K).

    Runs the same traced computation the gradient engine uses (minus the
    adjoint closures), so traced and untraced values agree bit for bit.
    """
    seeds = np.ascontiguousarray(seed_coeffs(space, np.asarray(X, dtype=float)).transpose(2, 0, 1))
    out = _trace_from_seeds(Var(theta, requires=False), spec, seeds, space)
    return np.ascontiguousarray(out.value.transpose(1, 2, 0))


def forward_batch(params: NetworkParams, X: np.ndarray) -> np.ndarray:
    """Plain evaluation on a batch of points: (N, d) -> (N, out)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.spec.input_width:
        raise ValueError(f"expected (N, {params.spec.input_width}) inputs, got {X.shape}")
    space = jet_space(params.spec.input_width, 0)
    return np.ascontiguousarray(forward_coeffs(params.theta, params.spec, X, space)[:, :, 0])


def forward(params: NetworkParams, x) -> np.ndarray:
    """Evaluate the network on a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.spec.input_width,):
        raise ValueError(f"expected {params.spec.input_width} inputs, got {x.shape}")
    return forward_batch(params, x[None, :])[0]


def forward_jet(params: NetworkParams, inputs: list[Jet]) -> list[Jet]:
    """Evaluate the network on seeded jets; outputs carry input-derivatives."""
    if len(inputs) != params.spec.input_width:
        raise JetError(
            f"expected {params.spec.input_width} input jets, got {len(inputs)}"
        )
    space = inputs[0].space
    if any(j.space is not space for j in inputs):
        raise JetError("input jets must share one (nvars, order) signature")
    if space.nvars != params.spec.input_width:
        raise JetError(
            f"jet nvars {space.nvars} does not match input width {params.spec.input_width}"
        )
    stacked = np.stack([j.coeffs for j in inputs])[None, :, :]  # (1, d, K)
    seeds = np.ascontiguousarray(stacked.transpose(2, 0, 1))
    a = _trace_from_seeds(Var(params.theta, requires=False), params.spec, seeds, space)
    out = a.value.transpose(1, 2, 0)
    return [Jet(space, out[0, o].copy()) for o in range(params.spec.output_width)]


def trace_network(p: Param | Var, spec: LayerSpec, X: np.ndarray, space: JetSpace) -> Var:
    """Traced network evaluation on a point batch: value is (K, N, out)."""
    seeds = np.ascontiguousarray(
        seed_coeffs(space, np.asarray(X, dtype=float)).transpose(2, 0, 1)
    )
    return _trace_from_seeds(p, spec, seeds, space)


# ---------------------------------------------------------------------------
# checkpoints (used to warm-start stage two)
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = "# robustpinn checkpoint v1"


def save_checkpoint(params: NetworkParams, path) -> None:
    """Write widths, lambda names and the packed vector as repr-exact text."""
    lines = [CHECKPOINT_MAGIC]
    lines.append("widths: " + " ".join(str(w) for w in params.spec.widths))
    lines.append("lambda: " + " ".join(params.lambda_names))
    lines.extend(repr(float(v)) for v in params.packed())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> NetworkParams:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a robustpinn checkpoint")
    if not lines[1].startswith("widths: ") or not lines[2].startswith("lambda: "):
        raise ValueError(f"{path}: malformed checkpoint header")
    spec = LayerSpec(tuple(int(w) for w in lines[1][len("widths: "):].split()))
    names = tuple(lines[2][len("lambda: "):].split())
    values = np.array([float(v) for v in lines[3:] if v])
    expected = spec.param_count + len(names)
    if values.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {values.size}")
    return NetworkParams(spec, values[: spec.param_count], names, values[spec.param_count:])
