"""Automated run metrics and a summarizer for externally collected rankings.

Desirability is a human judgement and is out of scope for automation;
``evaluate_run`` reports validity plus mechanical feasibility metrics, and
``summarize_ranks`` turns raw human ranks (collected elsewhere, e.g. through
the session service) into per-method top-k ratio tables.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constraints import CompiledConstraints
from .engine import CFResult
from .schema import DatasetSchema, FeatureKind

__all__ = [
    "RunReport",
    "TopKTable",
    "EvaluationError",
    "evaluate_run",
    "summarize_ranks",
    "ENCODED_CHANGE_TOLERANCE",
]

# encoded-unit threshold below which an upstream feature counts as unchanged
ENCODED_CHANGE_TOLERANCE = 1e-6


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class RunReport:
    n_results: int
    n_counterfactuals: int
    validity_rate: float
    mean_proximity: float
    mean_diversity: float
    unary_violation_count: int
    binary_mismatch_rate: float
    mean_masked_steps: float

    def to_json_dict(self) -> dict:
        return {
            "n_results": self.n_results,
            "n_counterfactuals": self.n_counterfactuals,
            "validity_rate": self.validity_rate,
            "mean_proximity": self.mean_proximity,
            "mean_diversity": self.mean_diversity,
            "unary_violation_count": self.unary_violation_count,
            "binary_mismatch_rate": self.binary_mismatch_rate,
            "mean_masked_steps": self.mean_masked_steps,
        }

    def format_table(self) -> str:
        rows = [
            ("results", f"{self.n_results}"),
            ("counterfactuals", f"{self.n_counterfactuals}"),
            ("validity rate", f"{self.validity_rate:.3f}"),
            ("mean proximity", f"{self.mean_proximity:.4f}"),
            ("mean diversity", f"{self.mean_diversity:.4f}"),
            ("unary violations (final)", f"{self.unary_violation_count}"),
            ("binary direction mismatch rate", f"{self.binary_mismatch_rate:.3f}"),
            ("mean masked steps per run", f"{self.mean_masked_steps:.2f}"),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def _count_unary_violations(
    result: CFResult, compiled: CompiledConstraints, schema: DatasetSchema
) -> int:
    count = 0
    for cf in result.counterfactuals:
        for idx_set, bad in ((compiled.increase_idx, -1), (compiled.decrease_idx, 1)):
            for i in idx_set:
                name = compiled.feature_names[i]
                feat = schema.feature(name)
                if feat.kind is FeatureKind.CONTINUOUS:
                    delta = float(cf.original[name]) - float(result.original.original[name])
                else:
                    delta = feat.level_index(str(cf.original[name])) - feat.level_index(
                        str(result.original.original[name])
                    )
                if (bad < 0 and delta < 0) or (bad > 0 and delta > 0):
                    count += 1
    return count


def _binary_mismatches(
    result: CFResult, compiled: CompiledConstraints, schema: DatasetSchema
) -> tuple[int, int]:
    """(mismatches, checked) over final CFs for every binary edge.

    An edge mismatches when the upstream moved by more than the encoded
    tolerance while the downstream did not move in the same direction.
    Box clamping can legitimately produce these end-to-end residuals even
    though every accepted step was sign-consistent.
    """
    if not compiled.edges:
        return 0, 0
    layout = schema.layout()
    x_enc = result.original.encoded
    mism = 0
    checked = 0
    for cf in result.counterfactuals:
        delta = cf.encoded[layout.directed_indices] - x_enc[layout.directed_indices]
        for i, j in compiled.edges:
            checked += 1
            if abs(delta[i]) > ENCODED_CHANGE_TOLERANCE and np.sign(delta[j]) != np.sign(delta[i]):
                mism += 1
    return mism, checked


def evaluate_run(
    results: list[CFResult],
    compiled: CompiledConstraints,
    schema: DatasetSchema,
) -> RunReport:
    """Aggregate validity and mechanical feasibility over results from a
    single condition/configuration."""
    if not results:
        raise EvaluationError("no results to evaluate")
    total_cfs = sum(len(r.counterfactuals) for r in results)
    valid = sum(sum(r.valid) for r in results)
    mism_total = 0
    checked_total = 0
    unary_total = 0
    for r in results:
        unary_total += _count_unary_violations(r, compiled, schema)
        m, c = _binary_mismatches(r, compiled, schema)
        mism_total += m
        checked_total += c
    return RunReport(
        n_results=len(results),
        n_counterfactuals=total_cfs,
        validity_rate=valid / total_cfs,
        mean_proximity=float(np.mean([r.proximity for r in results])),
        mean_diversity=float(np.mean([r.diversity for r in results])),
        unary_violation_count=unary_total,
        binary_mismatch_rate=(mism_total / checked_total) if checked_total else 0.0,
        mean_masked_steps=float(np.mean([len(r.audits) for r in results])),
    )


@dataclass(frozen=True)
class TopKTable:
    """Per-method ratios (%) of top-k ranked CFs, averaged over users."""

    methods: tuple[str, ...]
    ratios: dict[str, tuple[float, float, float]]
    n_users: int
    ks: tuple[int, ...] = (1, 2, 3)

    def format_table(self) -> str:
        header = "method".ljust(12) + "".join(f"top-{k}".rjust(8) for k in self.ks)
        lines = [header]
        for method in self.methods:
            vals = self.ratios[method]
            lines.append(method.ljust(12) + "".join(f"{v:8.1f}" for v in vals))
        return "\n".join(lines)


RANK_COLUMNS = ("user", "sample", "cf_id", "method", "rank")


def summarize_ranks(rank_file: str | Path | io.TextIOBase, ks: tuple[int, ...] = (1, 2, 3)) -> TopKTable:
    """Summarize a rank CSV into per-method top-k ratios.

    The file needs columns (user, sample, cf_id, method, rank) and may carry
    an optional ``cf_digest`` column identifying CF content. Within one
    (user, sample) group, ranks must be integers in [1, group size]; two rows
    may share a rank only when their digests declare them identical. The
    per-method ratio for k is the number of that method's CFs ranked <= k
    divided by k, averaged over samples and then over users; with ties a
    column can sum over 100%.

    Raises:
        EvaluationError: missing columns, malformed ranks, or duplicate ranks
            on rows not declared identical.
    """
    if isinstance(rank_file, (str, Path)):
        handle: io.TextIOBase = open(rank_file, "r", encoding="utf-8", newline="")
        close = True
    else:
        handle, close = rank_file, False
    groups: dict[tuple[str, str], list[dict]] = {}
    try:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise EvaluationError("empty rank file")
        missing = [c for c in RANK_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise EvaluationError(f"rank file missing columns: {missing}")
        for line, row in enumerate(reader):
            try:
                rank = int(row["rank"])
            except ValueError:
                raise EvaluationError(
                    f"row {line}: rank {row['rank']!r} is not an integer"
                ) from None
            groups.setdefault((row["user"], row["sample"]), []).append(
                {
                    "cf_id": row["cf_id"],
                    "method": row["method"],
                    "rank": rank,
                    "digest": row.get("cf_digest", "") or f"__row_{line}",
                }
            )
    finally:
        if close:
            handle.close()

    if not groups:
        raise EvaluationError("rank file has no data rows")

    methods = sorted({r["method"] for rows in groups.values() for r in rows})
    per_user: dict[str, dict[str, list[list[float]]]] = {}
    for (user, sample), rows in groups.items():
        n = len(rows)
        by_rank: dict[int, set[str]] = {}
        for r in rows:
            if not 1 <= r["rank"] <= n:
                raise EvaluationError(
                    f"user {user!r} sample {sample!r}: rank {r['rank']} outside 1..{n}"
                )
            by_rank.setdefault(r["rank"], set()).add(r["digest"])
        for rank, digests in by_rank.items():
            if len(digests) > 1:
                raise EvaluationError(
                    f"user {user!r} sample {sample!r}: rank {rank} assigned to "
                    "non-identical counterfactuals"
                )
        user_slot = per_user.setdefault(user, {m: [[] for _ in ks] for m in methods})
        for ki, k in enumerate(ks):
            for m in methods:
                count = sum(1 for r in rows if r["method"] == m and r["rank"] <= k)
                user_slot[m][ki].append(count / k)

    ratios: dict[str, tuple[float, float, float]] = {}
    for m in methods:
        vals = []
        for ki in range(len(ks)):
            user_means = [float(np.mean(slot[m][ki])) for slot in per_user.values()]
            vals.append(100.0 * float(np.mean(user_means)))
        ratios[m] = tuple(vals)  # type: ignore[assignment]
    return TopKTable(methods=tuple(methods), ratios=ratios, n_users=len(per_user), ks=ks)
