"""Data-loss and PDE-loss terms and their weighted combination.

OLS-PINN and LAD-PINN differ only in the data term; the PDE term is always
the mean squared residual over collocation points.  Builders produce traced
scalars for the gradient engine; thin wrappers evaluate them as plain floats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteLossError, Param, Var
from .jets import jet_space
from .network import NetworkParams, trace_network
from .problems import ObservationSet, PdeProblem

DATA_LOSSES = ("ols", "lad")
VECTOR_REDUCTIONS = ("sum_abs", "sum_norm2")


@dataclass(frozen=True)
class LossConfig:
    data_loss: str = "lad"
    omega: float = 1.0
    vector_reduction: str = "sum_abs"

    def __post_init__(self):
        if self.data_loss not in DATA_LOSSES:
            raise ValueError(f"data_loss must be one of {DATA_LOSSES}, got {self.data_loss!r}")
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.vector_reduction not in VECTOR_REDUCTIONS:
            raise ValueError(
                f"vector_reduction must be one of {VECTOR_REDUCTIONS}, "
                f"got {self.vector_reduction!r}"
            )


def _lambda_vars(p: Param | Var, template: NetworkParams) -> dict[str, Var]:
    base = template.spec.param_count
    return {name: ad.pindex(p, base + i) for i, name in enumerate(template.lambda_names)}


def build_pde_loss(p, template: NetworkParams, problem: PdeProblem,
                   collocation: np.ndarray, chunk: int = 2048) -> Var:
    """Mean of squared residual-vector 2-norms over collocation points.

    Large collocation sets are processed in fixed-order chunks so memory stays
    bounded and the reduction is reproducible.
    """
    collocation = np.asarray(collocation, dtype=float)
    n = collocation.shape[0]
    if n == 0:
        raise ValueError("empty collocation set")
    space = jet_space(problem.input_dim, problem.jet_order_required)
    lam = _lambda_vars(p, template)
    acc = None
    for start in range(0, n, chunk):
        block = collocation[start : start + chunk]
        outs = trace_network(p, template.spec, block, space)
        comps = problem.residual(outs, lam, block, space)
        sq = None
        for comp in comps:
            term = ad.square(comp)
            sq = term if sq is None else sq + term
        piece = ad.total(sq)
        acc = piece if acc is None else acc + piece
    loss = (1.0 / n) * acc
    if not np.isfinite(loss.value):
        raise NonFiniteLossError("pde_loss")
    return loss


def build_data_loss(p, template: NetworkParams, problem: PdeProblem,
                    observations: ObservationSet, config: LossConfig) -> Var:
    """Mean squared error (OLS) or mean absolute deviation (LAD) over rows.

    Vector measurements reduce per row with the configured norm before the
    mean; sum_abs matches the 1-norm training loss the filters assume.
    """
    if len(observations) == 0:
        raise ValueError("empty observation set")
    space = jet_space(problem.input_dim, problem.observe_order)
    outs = trace_network(p, template.spec, observations.points, space)
    preds = problem.trace_fields(outs, problem.measurement_names, space)
    row = None
    for j, pred in enumerate(preds):
        err = pred - observations.values[:, j]
        if config.data_loss == "ols":
            term = ad.square(err)
        elif config.vector_reduction == "sum_abs":
            term = ad.absolute(err)
        else:
            term = ad.square(err)
        row = term if row is None else row + term
    if config.data_loss == "lad" and config.vector_reduction == "sum_norm2":
        row = ad.sqrt(row)
    loss = ad.mean(row)
    if not np.isfinite(loss.value):
        raise NonFiniteLossError("data_loss")
    return loss


def build_total_loss(p, template: NetworkParams, problem: PdeProblem,
                     observations: ObservationSet, collocation: np.ndarray,
                     config: LossConfig, parts: dict | None = None) -> Var:
    """omega * pde_loss + data_loss; optionally records the term values."""
    pde = build_pde_loss(p, template, problem, collocation)
    data = build_data_loss(p, template, problem, observations, config)
    if parts is not None:
        parts["pde"] = float(pde.value)
        parts["data"] = float(data.value)
    return config.omega * pde + data


def pde_loss(params: NetworkParams, problem: PdeProblem, collocation: np.ndarray) -> float:
    frozen = Var(params.packed(), requires=False)
    return float(build_pde_loss(frozen, params, problem, collocation).value)


def data_loss(params: NetworkParams, problem: PdeProblem,
              observations: ObservationSet, config: LossConfig) -> float:
    frozen = Var(params.packed(), requires=False)
    return float(build_data_loss(frozen, params, problem, observations, config).value)


def total_loss(params: NetworkParams, problem: PdeProblem, observations: ObservationSet,
               collocation: np.ndarray, config: LossConfig) -> float:
    frozen = Var(params.packed(), requires=False)
    return float(
        build_total_loss(frozen, params, problem, observations, collocation, config).value
    )
