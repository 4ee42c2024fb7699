"""Differentiable pieces of the counterfactual search objective.

The objective over K candidates c_1..c_K for an instance x is

    (1/K) sum_k hinge(c_k)  +  (w_prox/K) sum_k d(c_k, x)  -  w_div * det(KM)

where d is a per-feature difficulty-weighted distance, KM is the kernel
matrix KM_ij = 1 / (1 + d(c_i, c_j)) (plus a small ridge), and the hinge
pushes the unscaled logit past margin 1 for the desired class.

During optimization the nominal one-hot blocks are relaxed to the [0, 1] box
and their overlap distance is replaced by a surrogate (half the L1 distance
over the block) that agrees with the overlap distance at one-hot vertices.
The exact overlap distance is used for all reported, post-projection values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .model import LinearModel
from .schema import DatasetStats, EncodedLayout

__all__ = [
    "ContinuousMetric",
    "PerturbationWeights",
    "ProximityConfig",
    "ObjectiveError",
    "DEFAULT_RIDGE",
    "distance_continuous",
    "distance_categorical",
    "distance_categorical_relaxed",
    "combined_distance",
    "hinge_loss",
    "diversity",
    "objective_and_gradient",
]

DEFAULT_RIDGE = 1e-6


class ObjectiveError(RuntimeError):
    pass


class ContinuousMetric(str, Enum):
    MAD_MANHATTAN = "mad_manhattan"
    MAHALANOBIS_SQ = "mahalanobis_sq"


@dataclass(frozen=True)
class PerturbationWeights:
    """Per-feature perturbation difficulty values.

    Larger values make a feature more expensive to change; features absent
    from the map default to 1. All values must be strictly positive (the
    elicitation UI further restricts them to [1, 5]).
    """

    gamma: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        bad = {k: v for k, v in self.gamma.items() if not v > 0.0}
        if bad:
            raise ValueError(f"perturbation difficulties must be positive, got {bad}")

    def value_for(self, name: str) -> float:
        return float(self.gamma.get(name, 1.0))

    def directed_vector(self, layout: EncodedLayout) -> np.ndarray:
        return np.asarray([self.value_for(n) for n in layout.directed_names])

    def nominal_vector(self, layout: EncodedLayout) -> np.ndarray:
        return np.asarray([self.value_for(n) for n in layout.nominal_names])

    @classmethod
    def unit(cls) -> "PerturbationWeights":
        return cls(gamma={})

    @property
    def is_unit(self) -> bool:
        return all(v == 1.0 for v in self.gamma.values())


@dataclass(frozen=True)
class ProximityConfig:
    """Choice of continuous metric plus its per-feature normalizers.

    Normalizers are keyed by directed feature name and must be strictly
    positive: the MAD for the normalized Manhattan metric, the standard
    deviation (or 1) for the squared weighted metric.
    """

    continuous_metric: ContinuousMetric = ContinuousMetric.MAD_MANHATTAN
    normalizer: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        bad = {k: v for k, v in self.normalizer.items() if not v > 0.0}
        if bad:
            raise ValueError(f"normalizers must be strictly positive, got {bad}")

    def normalizer_vector(self, layout: EncodedLayout) -> np.ndarray:
        return np.asarray([float(self.normalizer.get(n, 1.0)) for n in layout.directed_names])

    @classmethod
    def from_stats(
        cls,
        stats: DatasetStats,
        metric: ContinuousMetric = ContinuousMetric.MAD_MANHATTAN,
    ) -> "ProximityConfig":
        if metric is ContinuousMetric.MAD_MANHATTAN:
            norm = dict(stats.mad)
        else:
            norm = {name: (v if v > 0.0 else 1.0) for name, v in stats.std.items()}
        return cls(continuous_metric=metric, normalizer=norm)

    @classmethod
    def unit(
        cls, metric: ContinuousMetric = ContinuousMetric.MAD_MANHATTAN
    ) -> "ProximityConfig":
        return cls(continuous_metric=metric, normalizer={})


def distance_continuous(
    c: np.ndarray,
    x: np.ndarray,
    weights: PerturbationWeights,
    config: ProximityConfig,
    layout: EncodedLayout,
) -> float:
    """Difficulty-weighted distance over the continuous + ordinal coordinates.

    mad_manhattan: sum_j gamma_j |c_j - x_j| / norm_j
    mahalanobis_sq: sum_j gamma_j (c_j - x_j)^2 / norm_j
    """
    delta = c[layout.directed_indices] - x[layout.directed_indices]
    gamma = weights.directed_vector(layout)
    norm = config.normalizer_vector(layout)
    if config.continuous_metric is ContinuousMetric.MAD_MANHATTAN:
        return float(np.sum(gamma * np.abs(delta) / norm))
    return float(np.sum(gamma * delta * delta / norm))


def distance_categorical(
    c: np.ndarray,
    x: np.ndarray,
    weights: PerturbationWeights,
    layout: EncodedLayout,
) -> float:
    """Weighted overlap distance: gamma_j per nominal feature whose decoded
    level (argmax over the one-hot block) differs."""
    total = 0.0
    for name in layout.nominal_names:
        start, stop = layout.nominal_blocks[name]
        if int(np.argmax(c[start:stop])) != int(np.argmax(x[start:stop])):
            total += weights.value_for(name)
    return total


def distance_categorical_relaxed(
    c: np.ndarray,
    x: np.ndarray,
    weights: PerturbationWeights,
    layout: EncodedLayout,
) -> float:
    """Differentiable surrogate for the overlap distance on relaxed one-hot
    blocks: gamma_j * (sum of per-entry absolute differences) / 2. Equals the
    overlap distance exactly when both blocks are one-hot vertices."""
    total = 0.0
    for name in layout.nominal_names:
        start, stop = layout.nominal_blocks[name]
        total += weights.value_for(name) * 0.5 * float(np.sum(np.abs(c[start:stop] - x[start:stop])))
    return total


def combined_distance(
    c: np.ndarray,
    x: np.ndarray,
    weights: PerturbationWeights,
    config: ProximityConfig,
    layout: EncodedLayout,
    relaxed: bool = False,
) -> float:
    cat = distance_categorical_relaxed if relaxed else distance_categorical
    return distance_continuous(c, x, weights, config, layout) + cat(c, x, weights, layout)


def _distance_gradient(
    c: np.ndarray,
    ref: np.ndarray,
    weights: PerturbationWeights,
    config: ProximityConfig,
    layout: EncodedLayout,
) -> np.ndarray:
    """Gradient of the relaxed combined distance d(c, ref) w.r.t. c.

    Subgradients at the absolute-value kinks are taken as 0.
    """
    grad = np.zeros_like(c)
    idx = layout.directed_indices
    delta = c[idx] - ref[idx]
    gamma = weights.directed_vector(layout)
    norm = config.normalizer_vector(layout)
    if config.continuous_metric is ContinuousMetric.MAD_MANHATTAN:
        grad[idx] = gamma * np.sign(delta) / norm
    else:
        grad[idx] = 2.0 * gamma * delta / norm
    for name in layout.nominal_names:
        start, stop = layout.nominal_blocks[name]
        grad[start:stop] = weights.value_for(name) * 0.5 * np.sign(c[start:stop] - ref[start:stop])
    return grad


def hinge_loss(logit_value: float, desired_class: int) -> float:
    """max(0, 1 - z * logit) with z = +1 for desired class 1 and -1 for 0."""
    z = 1.0 if desired_class == 1 else -1.0
    return max(0.0, 1.0 - z * logit_value)


def _kernel_matrix(
    cfs: np.ndarray,
    weights: PerturbationWeights,
    config: ProximityConfig,
    layout: EncodedLayout,
    ridge: float,
) -> np.ndarray:
    k = cfs.shape[0]
    km = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            d = combined_distance(cfs[i], cfs[j], weights, config, layout, relaxed=True)
            km[i, j] = km[j, i] = 1.0 / (1.0 + d)
    return km + ridge * np.eye(k)


def diversity(
    cf_set: np.ndarray,
    weights: PerturbationWeights,
    config: ProximityConfig,
    layout: EncodedLayout,
    ridge: float = DEFAULT_RIDGE,
) -> float:
    """Determinant of the pairwise inverse-distance kernel over the CF set."""
    cfs = np.atleast_2d(np.asarray(cf_set, dtype=float))
    return float(np.linalg.det(_kernel_matrix(cfs, weights, config, layout, ridge)))


def objective_and_gradient(
    cf_set: np.ndarray,
    x: np.ndarray,
    model: LinearModel,
    weights: PerturbationWeights,
    config: ProximityConfig,
    layout: EncodedLayout,
    proximity_weight: float = 1.0,
    diversity_weight: float = 1.0,
    desired_class: int | None = None,
    ridge: float = DEFAULT_RIDGE,
) -> tuple[float, np.ndarray]:
    """Objective value and its analytic gradient for each candidate.

    Returns ``(value, gradients)`` with ``gradients`` shaped like ``cf_set``
    (one row per candidate). Gradients cover every differentiable term: the
    hinge (subgradient 0 at the kink), the relaxed distance, and the kernel
    determinant via det(KM) * KM^-1 chained through the pairwise distances.

    Raises:
        ObjectiveError: the ridged kernel matrix is singular or non-finite.
    """
    cfs = np.atleast_2d(np.asarray(cf_set, dtype=float))
    k = cfs.shape[0]
    if desired_class is None:
        desired_class = 1 - model.predict(x)
    z = 1.0 if desired_class == 1 else -1.0

    grads = np.zeros_like(cfs)
    hinge_total = 0.0
    prox_total = 0.0
    for i in range(k):
        logit = model.logit(cfs[i])
        margin = 1.0 - z * logit
        if margin > 0.0:
            hinge_total += margin
            grads[i] += (-z / k) * model.input_gradient(cfs[i])
        prox_total += combined_distance(cfs[i], x, weights, config, layout, relaxed=True)
        grads[i] += (proximity_weight / k) * _distance_gradient(cfs[i], x, weights, config, layout)

    km = _kernel_matrix(cfs, weights, config, layout, ridge)
    det = float(np.linalg.det(km))
    if not np.isfinite(det):
        raise ObjectiveError("diversity term ill-conditioned")
    if diversity_weight != 0.0 and k > 1:
        try:
            km_inv = np.linalg.inv(km)
        except np.linalg.LinAlgError:
            raise ObjectiveError("diversity term ill-conditioned") from None
        if not np.all(np.isfinite(km_inv)):
            raise ObjectiveError("diversity term ill-conditioned")
        adj = det * km_inv
        for i in range(k):
            acc = np.zeros(cfs.shape[1])
            for j in range(k):
                if j == i:
                    continue
                kern = km[i, j]  # off-diagonal entries carry no ridge
                dd = _distance_gradient(cfs[i], cfs[j], weights, config, layout)
                acc += -2.0 * adj[i, j] * kern * kern * dd
            grads[i] -= diversity_weight * acc

    value = hinge_total / k + proximity_weight * prox_total / k - diversity_weight * det
    return value, grads
