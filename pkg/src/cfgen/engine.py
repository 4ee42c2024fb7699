"""Counterfactual search: masked gradient descent over K diverse candidates.

Each candidate starts near the query instance and follows the analytic
gradient of the search objective. Before every step the gradient is screened
against the compiled causal constraints (gradient-step rejection), then the
candidate is clamped to the encoded box and re-projected so that unary
increase/decrease guarantees hold exactly. After the loop, candidates are
projected to valid encodings (ordinals rounded, nominals argmaxed) and
validity is evaluated on the projected vectors.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .constraints import CompiledConstraints, StepAudit, mask_gradient
from .model import LinearModel
from .objective import (
    ContinuousMetric,
    PerturbationWeights,
    ProximityConfig,
    combined_distance,
    diversity,
    objective_and_gradient,
)
from .schema import DatasetSchema, DatasetStats, FeatureKind, Instance, decode, make_instance

__all__ = [
    "Condition",
    "EngineConfig",
    "CFResult",
    "StepRecord",
    "BatchItem",
    "EngineError",
    "generate",
    "generate_batch",
    "derive_seed",
    "result_to_json_dict",
    "result_rows",
]

INIT_NOISE = 0.01


class EngineError(RuntimeError):
    pass


class Condition(str, Enum):
    """Feasibility regime: unconstrained baseline, global constraints only,
    or global constraints plus end-user difficulty weights."""

    C1_UNCONSTRAINED = "c1"
    C2_GLOBAL = "c2"
    C3_GLOBAL_AND_LOCAL = "c3"


@dataclass(frozen=True)
class EngineConfig:
    k: int = 5
    proximity_weight: float = 1.0
    diversity_weight: float = 1.0
    step_size: float = 0.05
    max_iterations: int = 5000
    convergence_tol: float = 1e-4
    convergence_window: int = 10
    seed: int = 0
    condition: Condition = Condition.C2_GLOBAL
    continuous_metric: ContinuousMetric = ContinuousMetric.MAD_MANHATTAN
    undesirable_class: int = 0
    record_steps: bool = False

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.step_size <= 0.0:
            raise ValueError("step_size must be positive")
        if self.proximity_weight < 0.0 or self.diversity_weight < 0.0:
            raise ValueError("objective weights must be non-negative")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if self.undesirable_class not in (0, 1):
            raise ValueError("undesirable_class must be 0 or 1")


@dataclass(slots=True)
class StepRecord:
    """Pre/post-mask gradient over the directed coordinates for one step."""

    iteration: int
    candidate: int
    pre_mask: np.ndarray
    post_mask: np.ndarray


@dataclass
class CFResult:
    original: Instance
    counterfactuals: list[Instance]
    valid: list[bool]
    desired_class: int
    condition: Condition
    objective_trace: list[float]
    proximity: float
    diversity: float
    audits: list[StepAudit]
    iterations_used: int
    step_log: list[StepRecord] = field(default_factory=list)


@dataclass
class BatchItem:
    index: int
    result: CFResult | None = None
    error: str | None = None


def derive_seed(seed: int, index: int) -> int:
    """Stable per-item seed for batch and session use."""
    digest = hashlib.blake2b(f"{seed}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") % (2**31)


def _validate_condition(
    config: EngineConfig,
    weights: PerturbationWeights,
    compiled: CompiledConstraints,
) -> None:
    if config.condition is Condition.C1_UNCONSTRAINED:
        if compiled.has_constraints:
            raise EngineError("condition c1 does not accept causal constraints")
        if not weights.is_unit:
            raise EngineError("condition c1 does not accept perturbation difficulties")
    elif config.condition is Condition.C2_GLOBAL and not weights.is_unit:
        raise EngineError("condition c2 does not accept perturbation difficulties")


def _frozen_coordinates(schema: DatasetSchema) -> np.ndarray:
    """Encoded coordinates of features the user may not modify."""
    frozen: list[int] = []
    pos = 0
    for f in schema.features:
        if not f.user_modifiable:
            frozen.extend(range(pos, pos + f.encoded_width))
        pos += f.encoded_width
    return np.asarray(frozen, dtype=np.intp)


def _project_unary(
    cands: np.ndarray, x_enc: np.ndarray, compiled: CompiledConstraints, directed_idx: np.ndarray
) -> None:
    """Clamp unary-constrained coordinates back to the feasible side of x."""
    for i in compiled.increase_idx:
        col = directed_idx[i]
        cands[:, col] = np.maximum(cands[:, col], x_enc[col])
    for i in compiled.decrease_idx:
        col = directed_idx[i]
        cands[:, col] = np.minimum(cands[:, col], x_enc[col])


def _snap_unary_original(
    decoded: dict[str, float | str],
    original: dict[str, float | str],
    schema: DatasetSchema,
    compiled: CompiledConstraints,
) -> dict[str, float | str]:
    """Enforce unary directions in original units, absorbing decode round-off."""
    out = dict(decoded)
    for idx_set, pick in ((compiled.increase_idx, max), (compiled.decrease_idx, min)):
        for i in idx_set:
            name = compiled.feature_names[i]
            feat = schema.feature(name)
            if feat.kind is FeatureKind.CONTINUOUS:
                out[name] = pick(float(out[name]), float(original[name]))
            else:
                lvl = pick(
                    feat.level_index(str(out[name])), feat.level_index(str(original[name]))
                )
                out[name] = feat.levels[lvl]
    return out


def generate(
    x: Instance,
    model: LinearModel,
    schema: DatasetSchema,
    stats: DatasetStats,
    weights: PerturbationWeights,
    compiled: CompiledConstraints,
    config: EngineConfig,
) -> CFResult:
    """Generate K counterfactual candidates for an undesirably-classified x.

    The loop per iteration: compute the analytic objective gradient for every
    candidate, zero entries for non-modifiable features, screen the directed
    coordinates against the causal constraints (skipped under condition c1),
    step by ``-step_size * gradient``, clamp to [0, 1], and re-project
    unary-constrained coordinates. The loop stops once every candidate
    predicts the desired class and the objective has moved less than
    ``convergence_tol`` for ``convergence_window`` consecutive iterations, or
    at ``max_iterations``.

    Deterministic for a fixed seed.

    Raises:
        EngineError: x is not in the undesirable class, the condition
            invariants are violated, or the objective becomes non-finite.
    """
    _validate_condition(config, weights, compiled)
    layout = schema.layout()
    x_enc = x.encoded
    if model.predict(x_enc) != config.undesirable_class:
        raise EngineError("nothing to explain: instance already has the desired class")
    desired = 1 - config.undesirable_class

    prox_config = ProximityConfig.from_stats(stats, config.continuous_metric)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    noise = rng.uniform(-INIT_NOISE, INIT_NOISE, size=(config.k, layout.width))
    frozen = _frozen_coordinates(schema)
    if frozen.size:
        noise[:, frozen] = 0.0
    cands = np.clip(x_enc + noise, 0.0, 1.0)
    _project_unary(cands, x_enc, compiled, layout.directed_indices)

    apply_mask = config.condition is not Condition.C1_UNCONSTRAINED and compiled.has_constraints
    directed_idx = layout.directed_indices

    trace: list[float] = []
    audits: list[StepAudit] = []
    step_log: list[StepRecord] = []
    small_deltas = 0
    steps = 0
    for iteration in range(config.max_iterations):
        value, grads = objective_and_gradient(
            cands,
            x_enc,
            model,
            weights,
            prox_config,
            layout,
            proximity_weight=config.proximity_weight,
            diversity_weight=config.diversity_weight,
            desired_class=desired,
        )
        if not np.isfinite(value):
            raise EngineError(f"objective became non-finite at iteration {iteration}")
        trace.append(value)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < config.convergence_tol:
            small_deltas += 1
        else:
            small_deltas = 0
        if small_deltas >= config.convergence_window:
            labels = (cands @ model.weights + model.bias >= 0.0).astype(int)
            if np.all(labels == desired):
                break

        if frozen.size:
            grads[:, frozen] = 0.0
        if apply_mask:
            for k in range(config.k):
                directed_grad = grads[k, directed_idx]
                masked, audit = mask_gradient(compiled, directed_grad, iteration, k)
                if config.record_steps:
                    step_log.append(StepRecord(iteration, k, directed_grad.copy(), masked.copy()))
                if not audit.is_empty:
                    audits.append(audit)
                grads[k, directed_idx] = masked
        elif config.record_steps:
            for k in range(config.k):
                directed_grad = grads[k, directed_idx].copy()
                step_log.append(StepRecord(iteration, k, directed_grad, directed_grad.copy()))

        cands -= config.step_size * grads
        np.clip(cands, 0.0, 1.0, out=cands)
        _project_unary(cands, x_enc, compiled, directed_idx)
        steps = iteration + 1

    counterfactuals: list[Instance] = []
    valid: list[bool] = []
    for k in range(config.k):
        decoded = decode(cands[k], schema)
        decoded = _snap_unary_original(decoded, x.original, schema, compiled)
        inst = make_instance(decoded, schema)
        counterfactuals.append(inst)
        valid.append(model.predict(inst.encoded) == desired)

    final = np.stack([inst.encoded for inst in counterfactuals])
    distances = [
        combined_distance(final[k], x_enc, weights, prox_config, layout, relaxed=False)
        for k in range(config.k)
    ]
    # projected vectors sit at one-hot vertices, where the relaxed surrogate
    # inside the kernel equals the exact overlap distance
    div = diversity(final, weights, prox_config, layout, ridge=0.0)

    return CFResult(
        original=x,
        counterfactuals=counterfactuals,
        valid=valid,
        desired_class=desired,
        condition=config.condition,
        objective_trace=trace,
        proximity=-float(np.mean(distances)),
        diversity=div,
        audits=audits,
        iterations_used=steps,
        step_log=step_log,
    )


def generate_batch(
    instances: list[Instance],
    model: LinearModel,
    schema: DatasetSchema,
    stats: DatasetStats,
    weights: PerturbationWeights,
    compiled: CompiledConstraints,
    config: EngineConfig,
) -> list[BatchItem]:
    """Elementwise ``generate`` with per-instance seeds derived from
    (seed, index); failures are collected instead of aborting the batch."""
    items: list[BatchItem] = []
    for index, inst in enumerate(instances):
        per_item = replace(config, seed=derive_seed(config.seed, index))
        try:
            items.append(BatchItem(index=index, result=generate(
                inst, model, schema, stats, weights, compiled, per_item
            )))
        except (EngineError, ValueError) as exc:
            items.append(BatchItem(index=index, error=str(exc)))
    return items


def _audit_summary(result: CFResult) -> dict:
    per_feature: dict[str, int] = {}
    per_cause: dict[str, int] = {}
    for audit in result.audits:
        for idx in audit.masked_features:
            per_cause_key = audit.causes[idx].value
            per_cause[per_cause_key] = per_cause.get(per_cause_key, 0) + 1
            per_feature[str(idx)] = per_feature.get(str(idx), 0) + 1
    return {
        "masked_steps": len(result.audits),
        "masked_entries_by_feature": per_feature,
        "masked_entries_by_cause": per_cause,
    }


def result_to_json_dict(result: CFResult) -> dict:
    return {
        "original": result.original.original,
        "counterfactuals": [cf.original for cf in result.counterfactuals],
        "valid": result.valid,
        "desired_class": result.desired_class,
        "condition": result.condition.value,
        "proximity": result.proximity,
        "diversity": result.diversity,
        "iterations_used": result.iterations_used,
        "objective_trace": result.objective_trace,
        "audit_summary": _audit_summary(result),
    }


def save_result_json(result: CFResult, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(result_to_json_dict(result), indent=2) + "\n", encoding="utf-8"
    )


def result_rows(result: CFResult, schema: DatasetSchema) -> list[dict]:
    """Flat spreadsheet rows: the original followed by one row per CF."""
    names = schema.feature_names
    rows = [{"row": "original", "valid": "", **{n: result.original.original[n] for n in names}}]
    for idx, (cf, ok) in enumerate(zip(result.counterfactuals, result.valid)):
        rows.append({"row": f"cf_{idx}", "valid": str(ok).lower(), **{n: cf.original[n] for n in names}})
    return rows


def save_result_csv(result: CFResult, schema: DatasetSchema, path: str | Path) -> None:
    rows = result_rows(result, schema)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
