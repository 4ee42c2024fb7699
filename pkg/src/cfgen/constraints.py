"""Monotonic causal feasibility constraints enforced by gradient-step rejection.

Two constraint kinds are supported, both supplied by a domain expert:

* binary edges ``upstream -> downstream``: any change of the upstream feature
  must be accompanied by a same-direction change of the downstream feature;
* unary declarations: a feature may only increase, or only decrease.

Constraints compile to sign-coupling vectors over the directed-change
coordinates (continuous + ordinal features; nominal one-hot blocks have no
direction of change and are rejected at compile time). At every optimizer
iteration the candidate gradient is screened: entries whose implied step
would violate a constraint are zeroed, everything else passes through
untouched. Because the optimizer steps along ``-step_size * gradient``, a
feature increases iff its gradient entry is negative; the unary marks use -1
for constrained features so that a positive (descent = decrease) gradient on
an increase-only feature reads as a violation.

Masking is single-pass: every violation vector is computed from the same
pre-mask gradient and all masks are applied simultaneously. Re-masking a
masked gradient can therefore zero additional upstream entries when a shared
downstream entry was zeroed in the first pass; the single-pass output is the
authoritative per-iteration decision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .schema import DatasetSchema

__all__ = [
    "ConstraintError",
    "MaskCause",
    "CausalConstraintSet",
    "CompiledConstraints",
    "StepAudit",
    "compile_constraints",
    "violation_vector",
    "mask_gradient",
    "is_sound_step",
    "load_constraints",
]


class ConstraintError(ValueError):
    pass


class MaskCause(str, Enum):
    BINARY_SIGN_CONFLICT = "binary_sign_conflict"
    BINARY_DOWNSTREAM_FROZEN = "binary_downstream_frozen"
    UNARY_VIOLATION = "unary_violation"


@dataclass(frozen=True)
class CausalConstraintSet:
    """Expert-declared constraints by feature name, prior to compilation."""

    binary_edges: tuple[tuple[str, str], ...] = ()
    unary_increase: frozenset[str] = frozenset()
    unary_decrease: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        seen = set()
        for up, down in self.binary_edges:
            if up == down:
                raise ConstraintError(f"self-edge {up!r} -> {down!r} is not allowed")
            if (up, down) in seen:
                raise ConstraintError(f"duplicate edge {up!r} -> {down!r}")
            seen.add((up, down))
        both = self.unary_increase & self.unary_decrease
        if both:
            raise ConstraintError(
                f"features cannot be both increase-only and decrease-only: {sorted(both)}"
            )

    @classmethod
    def empty(cls) -> "CausalConstraintSet":
        return cls()

    @property
    def is_empty(self) -> bool:
        return not (self.binary_edges or self.unary_increase or self.unary_decrease)

    def to_json_dict(self) -> dict:
        return {
            "binary": [{"up": up, "down": down} for up, down in self.binary_edges],
            "unary_increase": sorted(self.unary_increase),
            "unary_decrease": sorted(self.unary_decrease),
        }

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "CausalConstraintSet":
        return cls(
            binary_edges=tuple((e["up"], e["down"]) for e in doc.get("binary", ())),
            unary_increase=frozenset(doc.get("unary_increase", ())),
            unary_decrease=frozenset(doc.get("unary_decrease", ())),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n", encoding="utf-8")


def load_constraints(path: str | Path) -> CausalConstraintSet:
    return CausalConstraintSet.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class CompiledConstraints:
    """Constraints resolved to directed-coordinate indices.

    ``coupling`` is a (p, p) matrix in {-1, 0}: row ``i`` marks feature ``i``
    itself and every feature downstream of ``i`` with -1. ``increase_marks``
    and ``decrease_marks`` are {-1, 0} vectors marking unary-constrained
    features. ``p`` counts the directed-change coordinates only.
    """

    feature_names: tuple[str, ...]
    coupling: np.ndarray
    increase_marks: np.ndarray
    decrease_marks: np.ndarray
    edges: tuple[tuple[int, int], ...]
    increase_idx: tuple[int, ...]
    decrease_idx: tuple[int, ...]

    @property
    def p(self) -> int:
        return len(self.feature_names)

    @property
    def has_constraints(self) -> bool:
        return bool(self.edges or self.increase_idx or self.decrease_idx)

    @classmethod
    def empty(cls, feature_names: Iterable[str] = ()) -> "CompiledConstraints":
        names = tuple(feature_names)
        p = len(names)
        return cls(
            feature_names=names,
            coupling=-np.eye(p),
            increase_marks=np.zeros(p),
            decrease_marks=np.zeros(p),
            edges=(),
            increase_idx=(),
            decrease_idx=(),
        )


def compile_constraints(
    constraints: CausalConstraintSet, schema: DatasetSchema
) -> CompiledConstraints:
    """Resolve named constraints against a schema's directed coordinates.

    Raises:
        ConstraintError: unknown feature names, or constraints on nominal
            features (which have no direction of change).
    """
    layout = schema.layout()
    index = {name: i for i, name in enumerate(layout.directed_names)}

    def resolve(name: str) -> int:
        if name not in {f.name for f in schema.features}:
            raise ConstraintError(f"constraint references unknown feature {name!r}")
        if name not in index:
            raise ConstraintError(
                f"constraint on nominal feature {name!r}: only continuous and "
                "ordinal features have a direction of change"
            )
        return index[name]

    p = len(layout.directed_names)
    coupling = -np.eye(p)
    edges = []
    for up, down in constraints.binary_edges:
        i, j = resolve(up), resolve(down)
        coupling[i, j] = -1.0
        edges.append((i, j))
    increase_idx = tuple(sorted(resolve(n) for n in constraints.unary_increase))
    decrease_idx = tuple(sorted(resolve(n) for n in constraints.unary_decrease))
    increase_marks = np.zeros(p)
    decrease_marks = np.zeros(p)
    for i in increase_idx:
        increase_marks[i] = -1.0
    for i in decrease_idx:
        decrease_marks[i] = -1.0
    return CompiledConstraints(
        feature_names=layout.directed_names,
        coupling=coupling,
        increase_marks=increase_marks,
        decrease_marks=decrease_marks,
        edges=tuple(edges),
        increase_idx=increase_idx,
        decrease_idx=decrease_idx,
    )


@dataclass(slots=True)
class StepAudit:
    """Masking decisions for one candidate gradient at one iteration."""

    iteration: int
    candidate: int
    masked_features: tuple[int, ...]
    causes: dict[int, MaskCause]

    @property
    def is_empty(self) -> bool:
        return not self.masked_features


def violation_vector(compiled: CompiledConstraints, i: int, grad: np.ndarray) -> np.ndarray:
    """Sign-consistency vector for feature ``i`` against a gradient.

    Computed as ``coupling_row_i * sign(grad) + sign(grad_i)``; entries take
    values in {0, +-1, +-2}. The entry for ``i`` itself is always 0 (the
    diagonal -1 cancels its own sign). For a downstream partner ``j``, +-2
    flags opposite gradient signs and +-1 with a zero downstream gradient
    flags an upstream moving while its downstream stays frozen.
    """
    signs = np.sign(grad)
    return compiled.coupling[i] * signs + signs[i]


def mask_gradient(
    compiled: CompiledConstraints,
    grad: np.ndarray,
    iteration: int = 0,
    candidate: int = 0,
) -> tuple[np.ndarray, StepAudit]:
    """Zero the gradient entries whose implied step would violate a constraint.

    Single pass: all violation tests read the incoming gradient, all masks
    apply simultaneously. Surviving entries keep their sign and magnitude.
    For each binary edge the upstream entry is zeroed on an opposite-sign
    pair or on a frozen (zero-gradient) downstream; a unary-constrained entry
    is zeroed when its descent step would move the feature against its
    declared direction.
    """
    values = grad.tolist()
    signs = [(v > 0.0) - (v < 0.0) for v in values]
    causes: dict[int, MaskCause] = {}
    for i, j in compiled.edges:
        si = signs[i]
        if si == 0:
            continue
        # violation_vector entry at j is si - sj; |2| = sign conflict,
        # |1| with zero downstream = upstream moving alone
        sj = signs[j]
        if sj == -si:
            causes[i] = MaskCause.BINARY_SIGN_CONFLICT
        elif sj == 0 and i not in causes:
            causes[i] = MaskCause.BINARY_DOWNSTREAM_FROZEN
    # unary marks: v+ = marks * sign(grad); -1 violates for increase-only,
    # +1 violates for decrease-only (descent semantics)
    for j in compiled.increase_idx:
        if signs[j] > 0:
            causes.setdefault(j, MaskCause.UNARY_VIOLATION)
    for j in compiled.decrease_idx:
        if signs[j] < 0:
            causes.setdefault(j, MaskCause.UNARY_VIOLATION)
    masked = grad.copy()
    if not causes:
        return masked, StepAudit(iteration, candidate, (), {})
    masked_features = tuple(sorted(causes))
    for idx in masked_features:
        masked[idx] = 0.0
    return masked, StepAudit(iteration, candidate, masked_features, causes)


def is_sound_step(
    compiled: CompiledConstraints, pre_mask: np.ndarray, masked: np.ndarray
) -> bool:
    """Soundness predicate for an accepted (post-mask) step.

    Holds when the masked gradient contains no constrained pair with both
    entries nonzero and opposite signs, no upstream entry surviving while the
    pre-mask downstream gradient was zero, and no unary-constrained entry
    stepping against its declared direction.
    """
    for i, j in compiled.edges:
        mi, mj = masked[i], masked[j]
        if mi != 0.0 and mj != 0.0 and np.sign(mi) != np.sign(mj):
            return False
        if mi != 0.0 and pre_mask[j] == 0.0:
            return False
    for j in compiled.increase_idx:
        if masked[j] > 0.0:
            return False
    for j in compiled.decrease_idx:
        if masked[j] < 0.0:
            return False
    return True
