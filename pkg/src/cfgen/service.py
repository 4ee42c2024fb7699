"""HTTP/JSON session service for interactive explanation loops.

A session wraps one instance with an undesirable prediction. The end-user
can set per-feature perturbation difficulties (gamma in [1, 5]), request
counterfactuals under condition c1/c2/c3, inspect the results, and submit
rankings which are appended to a CSV for later summarization.

Sessions live in memory; the expert constraint set is fixed at startup.
"""

from __future__ import annotations

import csv
import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .constraints import CausalConstraintSet, CompiledConstraints, compile_constraints
from .engine import CFResult, Condition, EngineConfig, EngineError, generate
from .model import LinearModel
from .objective import PerturbationWeights
from .schema import (
    DatasetSchema,
    DatasetStats,
    FeatureKind,
    Instance,
    InstanceSet,
    SchemaError,
    make_instance,
)

__all__ = ["create_app", "ServiceError", "GAMMA_MIN", "GAMMA_MAX"]

GAMMA_MIN = 1.0
GAMMA_MAX = 5.0
DISPLAY_DECIMALS = 3


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str, details: Any = None) -> None:
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.details = details


@dataclass
class GenerationRecord:
    index: int
    condition: Condition
    k: int
    seed: int
    timestamp: float
    cf_ids: list[str]
    counterfactuals: list[Instance]
    valid: list[bool]


@dataclass
class Session:
    id: str
    instance_ref: str
    instance: Instance
    gamma: dict[str, float] = field(default_factory=dict)
    condition: Condition = Condition.C2_GLOBAL
    history: list[GenerationRecord] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class CreateSessionBody(BaseModel):
    instance_index: int | None = None
    instance: dict[str, float | str] | None = None


class GammaBody(BaseModel):
    gamma: dict[str, float]


class GenerateBody(BaseModel):
    k: int = 5
    condition: str | None = None


class RankEntry(BaseModel):
    cf_id: str
    rank: int


class RanksBody(BaseModel):
    ranks: list[RankEntry]


def _session_seed(session_id: str, history_length: int) -> int:
    digest = hashlib.blake2b(
        f"{session_id}:{history_length}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big") % (2**31)


def _cf_digest(instance: Instance) -> str:
    payload = json.dumps(instance.original, sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(payload.encode("utf-8")).hexdigest()[:16]


def _display_value(value: float | str) -> float | str:
    if isinstance(value, float):
        return round(value, DISPLAY_DECIMALS)
    return value


def create_app(
    model: LinearModel,
    schema: DatasetSchema,
    stats: DatasetStats,
    constraints: CausalConstraintSet,
    test_set: InstanceSet | None = None,
    ranks_path: str | Path | None = None,
    cors_origin: str | None = None,
    defaults: EngineConfig = EngineConfig(),
) -> FastAPI:
    app = FastAPI(title="cfgen session service")
    if cors_origin:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=[cors_origin] if cors_origin != "*" else ["*"],
            allow_methods=["*"],
            allow_headers=["*"],
        )

    compiled = compile_constraints(constraints, schema)
    empty = CompiledConstraints.empty(schema.layout().directed_names)
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()
    counter = {"next": 1}
    ranks_file = Path(ranks_path) if ranks_path else None

    @app.exception_handler(ServiceError)
    async def _service_error(_: Request, exc: ServiceError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "details": exc.details},
        )

    def get_session(session_id: str) -> Session:
        with registry_lock:
            session = sessions.get(session_id)
        if session is None:
            raise ServiceError(404, "unknown_session", f"no session {session_id!r}")
        return session

    def resolve_instance(body: CreateSessionBody) -> tuple[str, Instance]:
        if (body.instance_index is None) == (body.instance is None):
            raise ServiceError(
                400, "bad_request", "provide exactly one of instance_index or instance"
            )
        if body.instance_index is not None:
            if test_set is None:
                raise ServiceError(
                    400, "no_dataset", "service started without a dataset; pass inline instance"
                )
            if not 0 <= body.instance_index < len(test_set):
                raise ServiceError(
                    404, "unknown_instance", f"test row {body.instance_index} out of range"
                )
            return f"test_{body.instance_index}", test_set.instances[body.instance_index]
        try:
            return "inline", make_instance(body.instance, schema)
        except (SchemaError, ValueError) as exc:
            raise ServiceError(400, "bad_instance", str(exc)) from None

    def instance_view(inst: Instance) -> dict:
        prob = model.probability(inst.encoded)
        return {
            "values": {k: _display_value(v) for k, v in inst.original.items()},
            "prediction": model.predict(inst.encoded),
            "probability": round(prob, 6),
        }

    def generation_view(session: Session, record: GenerationRecord, result: CFResult | None = None) -> dict:
        cfs = []
        for cf_id, cf, ok in zip(record.cf_ids, record.counterfactuals, record.valid):
            per_feature = {}
            for f in schema.features:
                orig = _display_value(session.instance.original[f.name])
                val = _display_value(cf.original[f.name])
                per_feature[f.name] = {
                    "value": val,
                    "original": orig,
                    "changed": val != orig,
                }
            cfs.append(
                {
                    "cf_id": cf_id,
                    "features": per_feature,
                    "valid": ok,
                    "method": record.condition.value,
                }
            )
        view = {
            "generation": record.index,
            "condition": record.condition.value,
            "k": record.k,
            "counterfactuals": cfs,
        }
        if result is not None:
            view["proximity"] = result.proximity
            view["diversity"] = result.diversity
            view["iterations_used"] = result.iterations_used
        return view

    @app.get("/schema")
    def get_schema() -> dict:
        return {
            "schema": schema.to_json_dict(),
            "conditions": [c.value for c in Condition],
            "gamma_range": [GAMMA_MIN, GAMMA_MAX],
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody) -> dict:
        ref, inst = resolve_instance(body)
        if model.predict(inst.encoded) != defaults.undesirable_class:
            raise ServiceError(
                409, "nothing_to_explain", "instance already has the desired class"
            )
        with registry_lock:
            session_id = f"s{counter['next']:04d}"
            counter["next"] += 1
            sessions[session_id] = Session(id=session_id, instance_ref=ref, instance=inst)
        return session_view(get_session(session_id))

    def session_view(session: Session) -> dict:
        return {
            "id": session.id,
            "instance_ref": session.instance_ref,
            "instance": instance_view(session.instance),
            "gamma": dict(session.gamma),
            "condition": session.condition.value,
            "history": [generation_view(session, record) for record in session.history],
        }

    @app.get("/sessions/{session_id}")
    def get_session_state(session_id: str) -> dict:
        return session_view(get_session(session_id))

    @app.put("/sessions/{session_id}/gamma")
    def set_gamma(session_id: str, body: GammaBody) -> dict:
        session = get_session(session_id)
        known = set(schema.feature_names)
        unknown = sorted(set(body.gamma) - known)
        out_of_range = {
            name: value
            for name, value in body.gamma.items()
            if not GAMMA_MIN <= value <= GAMMA_MAX
        }
        if unknown or out_of_range:
            raise ServiceError(
                422,
                "invalid_gamma",
                "gamma rejected",
                details={"unknown_features": unknown, "out_of_range": out_of_range},
            )
        with session.lock:
            session.gamma.update(body.gamma)
        return session_view(session)

    @app.post("/sessions/{session_id}/cfs")
    def generate_cfs(session_id: str, body: GenerateBody) -> dict:
        session = get_session(session_id)
        if body.k < 1:
            raise ServiceError(422, "invalid_k", "k must be at least 1")
        condition = session.condition
        if body.condition is not None:
            try:
                condition = Condition(body.condition)
            except ValueError:
                raise ServiceError(
                    422, "invalid_condition", f"unknown condition {body.condition!r}"
                ) from None
        with session.lock:
            seed = _session_seed(session.id, len(session.history))
            if condition is Condition.C3_GLOBAL_AND_LOCAL:
                weights = PerturbationWeights(gamma=dict(session.gamma))
            else:
                weights = PerturbationWeights.unit()
            active = empty if condition is Condition.C1_UNCONSTRAINED else compiled
            config = EngineConfig(
                k=body.k,
                proximity_weight=defaults.proximity_weight,
                diversity_weight=defaults.diversity_weight,
                step_size=defaults.step_size,
                max_iterations=defaults.max_iterations,
                convergence_tol=defaults.convergence_tol,
                convergence_window=defaults.convergence_window,
                seed=seed,
                condition=condition,
                continuous_metric=defaults.continuous_metric,
                undesirable_class=defaults.undesirable_class,
            )
            try:
                result = generate(
                    session.instance, model, schema, stats, weights, active, config
                )
            except (EngineError, ValueError) as exc:
                raise ServiceError(
                    422, "generation_failed", str(exc), details={"condition": condition.value}
                ) from None
            record = GenerationRecord(
                index=len(session.history),
                condition=condition,
                k=body.k,
                seed=seed,
                timestamp=time.time(),
                cf_ids=[f"g{len(session.history)}-c{i}" for i in range(body.k)],
                counterfactuals=result.counterfactuals,
                valid=result.valid,
            )
            session.condition = condition
            session.history.append(record)
        return generation_view(session, record, result)

    @app.post("/sessions/{session_id}/ranks")
    def submit_ranks(session_id: str, body: RanksBody) -> dict:
        session = get_session(session_id)
        if not body.ranks:
            raise ServiceError(422, "invalid_ranks", "no ranks submitted")
        with session.lock:
            by_id: dict[str, tuple[GenerationRecord, int]] = {}
            for record in session.history:
                for pos, cf_id in enumerate(record.cf_ids):
                    by_id[cf_id] = (record, pos)
            unknown = sorted({e.cf_id for e in body.ranks} - set(by_id))
            if unknown:
                raise ServiceError(
                    422, "invalid_ranks", "unknown counterfactual ids", details=unknown
                )
            if len({e.cf_id for e in body.ranks}) != len(body.ranks):
                raise ServiceError(422, "invalid_ranks", "duplicate cf_id in submission")
            n = len(body.ranks)
            bad = [e.rank for e in body.ranks if not 1 <= e.rank <= n]
            if bad:
                raise ServiceError(
                    422, "invalid_ranks", f"ranks must lie in 1..{n}", details=bad
                )
            by_rank: dict[int, list[str]] = {}
            digests: dict[str, str] = {}
            for entry in body.ranks:
                record, pos = by_id[entry.cf_id]
                digests[entry.cf_id] = _cf_digest(record.counterfactuals[pos])
                by_rank.setdefault(entry.rank, []).append(entry.cf_id)
            for rank, ids in by_rank.items():
                if len({digests[i] for i in ids}) > 1:
                    raise ServiceError(
                        422,
                        "invalid_ranks",
                        f"rank {rank} assigned to non-identical counterfactuals",
                        details=ids,
                    )
            if ranks_file is not None:
                new_file = not ranks_file.exists()
                with open(ranks_file, "a", encoding="utf-8", newline="") as handle:
                    writer = csv.writer(handle)
                    if new_file:
                        writer.writerow(
                            ["user", "sample", "cf_id", "method", "rank", "cf_digest"]
                        )
                    for entry in body.ranks:
                        record, _ = by_id[entry.cf_id]
                        writer.writerow(
                            [
                                session.id,
                                session.instance_ref,
                                entry.cf_id,
                                record.condition.value,
                                entry.rank,
                                digests[entry.cf_id],
                            ]
                        )
        return {"accepted": len(body.ranks)}

    return app
