"""Synthetic data corruption: Gaussian, contaminated-Gaussian, Cauchy,
spurious-value replacement, and the mixed variant.

All noise scales derive from the clean measurement scale std(u); the level
alpha sets both noise magnitudes and replacement fractions.  Generators are
pure functions of (observations, spec): one seeded stream, fixed draw order,
bit-reproducible output.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .problems import ObservationSet

KINDS = ("clean", "gaussian", "contaminated", "cauchy", "outlier", "mixed")

# contaminated mixture: this fraction of rows gets the small-variance noise,
# the rest the 10x-scale component; the ratio is fixed, not Bernoulli-sampled
CONTAMINATED_SMALL_FRACTION = 0.8
CONTAMINATED_WIDE_FACTOR = 10.0


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    alpha: float = 0.0
    spurious_value: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind != "clean" and not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not math.isfinite(self.spurious_value):
            raise ValueError("spurious_value must be finite")


def parse_corruption(text: str, spurious_value: float = 10.0, seed: int = 0) -> CorruptionSpec:
    """Parse 'kind' or 'kind:alpha' strings used on the command line."""
    parts = text.split(":")
    kind = parts[0].lower()
    alpha = float(parts[1]) if len(parts) > 1 else 0.0
    return CorruptionSpec(kind, alpha, spurious_value, seed)


def scale_factor(values: np.ndarray) -> float:
    """Sample standard deviation of the clean values driving the noise scale."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 2:
        raise ValueError("scale_factor needs at least two values")
    sigma = float(np.std(values, ddof=1))
    if sigma == 0.0:
        warnings.warn("constant measurements: scale factor is 0, noise degenerates")
    return sigma


def contaminated_assignment(n: int, rng: np.random.Generator) -> np.ndarray:
    """Row partition for the contaminated mixture: True marks wide-noise rows.

    Exactly n - floor(0.8 n) rows are wide; the ratio is fixed per draw rather
    than Bernoulli-sampled, so the two components never drift in proportion.
    """
    n_small = int(CONTAMINATED_SMALL_FRACTION * n)
    wide = np.ones(n, dtype=bool)
    wide[rng.permutation(n)[:n_small]] = False
    return wide


def corrupt(observations: ObservationSet, spec: CorruptionSpec) -> ObservationSet:
    """Apply one corruption class; returns a new set with its corruption mask.

    Mask semantics: the additive-noise classes perturb (and mark) every row;
    the spurious classes mark exactly the replaced rows.
    """
    rng = np.random.default_rng(spec.seed)
    values = observations.values.copy()
    n, m = values.shape
    mask = np.zeros(n, dtype=bool)
    if spec.kind == "clean":
        return ObservationSet(
            observations.points.copy(), values, mask, observations.hidden_fields
        )

    sigmas = [scale_factor(values[:, j]) for j in range(m)]
    alpha = spec.alpha

    if spec.kind == "gaussian":
        for j in range(m):
            values[:, j] += rng.normal(0.0, alpha * sigmas[j], size=n)
        mask[:] = True
    elif spec.kind == "contaminated":
        wide = contaminated_assignment(n, rng)
        row_scale = np.where(wide, CONTAMINATED_WIDE_FACTOR, 1.0)
        for j in range(m):
            values[:, j] += rng.normal(0.0, 1.0, size=n) * row_scale * alpha * sigmas[j]
        mask[:] = True
    elif spec.kind == "cauchy":
        for j in range(m):
            u = rng.random(n)
            values[:, j] += alpha * sigmas[j] * np.tan(math.pi * (u - 0.5))
        mask[:] = True
    elif spec.kind in ("outlier", "mixed"):
        k = int(alpha * n)
        if k == 0:
            warnings.warn(
                f"alpha*n = {alpha * n:.3f} < 1: no rows replaced by spurious values"
            )
        rows = rng.choice(n, size=k, replace=False)
        if spec.kind == "mixed":
            keep = np.ones(n, dtype=bool)
            keep[rows] = False
            for j in range(m):
                noise = rng.normal(0.0, alpha * sigmas[j], size=n)
                values[keep, j] += noise[keep]
        values[rows, :] = spec.spurious_value
        mask[rows] = True
    else:  # pragma: no cover - guarded by CorruptionSpec
        raise ValueError(spec.kind)

    return ObservationSet(
        observations.points.copy(), values, mask, observations.hidden_fields
    )
