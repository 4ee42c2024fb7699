"""Command-line entry points: train, explain, evaluate, serve.

Flags mirror the library defaults one-to-one, so a bare run reproduces the
reference settings (20 epochs at learning rate 0.01 for training; k = 5 with
unit objective weights for generation). Exit codes: 0 success, 1 runtime
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import glob
import json
import sys
from pathlib import Path

from . import __version__
from .constraints import CausalConstraintSet, CompiledConstraints, compile_constraints, load_constraints
from .engine import (
    CFResult,
    Condition,
    EngineConfig,
    EngineError,
    generate,
    save_result_csv,
    save_result_json,
)
from .evaluation import EvaluationError, evaluate_run, summarize_ranks
from .model import LinearModel, TrainingConfig, train
from .objective import ContinuousMetric, PerturbationWeights
from .schema import DatasetStats, load_dataset, load_schema, make_instance


def _load_json_arg(raw: str) -> dict:
    """Accept inline JSON (starts with '{') or a path to a JSON file."""
    if raw.lstrip().startswith("{"):
        return json.loads(raw)
    return json.loads(Path(raw).read_text(encoding="utf-8"))


def cmd_train(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema)
    train_set, test_set, stats = load_dataset(
        args.data, schema, split_fraction=args.split_fraction, seed=args.split_seed
    )
    config = TrainingConfig(
        epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size
    )
    model = train(train_set, config, seed=args.seed)
    model.save(args.out, schema)
    stats.save(args.stats_out)
    train_acc = model.accuracy(train_set)
    print(f"train accuracy: {train_acc:.4f}")
    if len(test_set) > 0:
        print(f"test accuracy:  {model.accuracy(test_set):.4f}")
    print(f"model written to {args.out}; stats written to {args.stats_out}")
    return 0


def cmd_explain(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema)
    model = LinearModel.load(args.model, schema)
    stats = DatasetStats.load(args.stats)
    condition = Condition(args.condition)

    if args.gamma is not None and condition is not Condition.C3_GLOBAL_AND_LOCAL:
        raise EngineError(
            f"perturbation difficulties are not allowed under condition {condition.value}"
        )
    if condition is not Condition.C1_UNCONSTRAINED and args.constraints is None:
        raise EngineError(f"condition {condition.value} requires --constraints")
    if condition is Condition.C1_UNCONSTRAINED and args.constraints is not None:
        raise EngineError("condition c1 does not accept --constraints")

    if args.constraints is not None:
        compiled = compile_constraints(load_constraints(args.constraints), schema)
    else:
        compiled = CompiledConstraints.empty(schema.layout().directed_names)
    weights = (
        PerturbationWeights(gamma=_load_json_arg(args.gamma))
        if args.gamma is not None
        else PerturbationWeights.unit()
    )

    if args.instance.lstrip().startswith("{"):
        instance = make_instance(json.loads(args.instance), schema)
    else:
        if args.data is None:
            raise EngineError("--data is required when --instance is a row index")
        index = int(args.instance)
        train_set, test_set, _ = load_dataset(
            args.data, schema, split_fraction=args.split_fraction, seed=args.split_seed
        )
        pool = test_set if args.from_split == "test" else train_set
        if not 0 <= index < len(pool):
            raise EngineError(f"row index {index} out of range for {args.from_split} split")
        instance = pool.instances[index]

    config = EngineConfig(
        k=args.k,
        proximity_weight=args.proximity_weight,
        diversity_weight=args.diversity_weight,
        step_size=args.step_size,
        max_iterations=args.max_iterations,
        convergence_tol=args.convergence_tol,
        convergence_window=args.convergence_window,
        seed=args.seed,
        condition=condition,
        continuous_metric=ContinuousMetric(args.metric),
        undesirable_class=args.undesirable_class,
    )
    result = generate(instance, model, schema, stats, weights, compiled, config)
    json_path = Path(f"{args.out}.json")
    csv_path = Path(f"{args.out}.csv")
    save_result_json(result, json_path)
    save_result_csv(result, schema, csv_path)
    n_valid = sum(result.valid)
    print(
        f"{n_valid}/{len(result.valid)} valid counterfactuals in "
        f"{result.iterations_used} iterations; wrote {json_path} and {csv_path}"
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    if args.ranks is not None:
        try:
            table = summarize_ranks(args.ranks)
        except EvaluationError as exc:
            # malformed rank input counts as a usage error
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(table.format_table())
        return 0
    if not args.runs:
        raise EngineError("provide --ranks or at least one --runs path")
    if args.schema is None:
        raise EngineError("--schema is required when evaluating --runs")
    paths: list[str] = []
    for pattern in args.runs:
        matched = glob.glob(pattern)
        paths.extend(matched if matched else [pattern])
    docs = [json.loads(Path(p).read_text(encoding="utf-8")) for p in paths]
    schema = load_schema(args.schema)
    if args.constraints is not None:
        compiled = compile_constraints(load_constraints(args.constraints), schema)
    else:
        compiled = CompiledConstraints.empty(schema.layout().directed_names)
    results = [_result_from_json(doc, schema) for doc in docs]
    report = evaluate_run(results, compiled, schema)
    print(report.format_table())
    if args.json_out:
        Path(args.json_out).write_text(
            json.dumps(report.to_json_dict(), indent=2) + "\n", encoding="utf-8"
        )
    return 0


def _result_from_json(doc: dict, schema) -> CFResult:
    """Rehydrate the evaluation-relevant parts of an exported result."""
    original = make_instance(doc["original"], schema)
    cfs = [make_instance(values, schema) for values in doc["counterfactuals"]]
    return CFResult(
        original=original,
        counterfactuals=cfs,
        valid=[bool(v) for v in doc["valid"]],
        desired_class=int(doc.get("desired_class", 1)),
        condition=Condition(doc.get("condition", "c2")),
        objective_trace=list(doc.get("objective_trace", [])),
        proximity=float(doc["proximity"]),
        diversity=float(doc["diversity"]),
        audits=[],
        iterations_used=int(doc.get("iterations_used", 0)),
    )


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    schema = load_schema(args.schema)
    model = LinearModel.load(args.model, schema)
    stats = DatasetStats.load(args.stats)
    constraints = (
        load_constraints(args.constraints)
        if args.constraints is not None
        else CausalConstraintSet.empty()
    )
    test_set = None
    if args.data is not None:
        _, test_set, _ = load_dataset(
            args.data, schema, split_fraction=args.split_fraction, seed=args.split_seed
        )
    defaults = EngineConfig(
        step_size=args.step_size,
        max_iterations=args.max_iterations,
        undesirable_class=args.undesirable_class,
    )
    app = create_app(
        model,
        schema,
        stats,
        constraints,
        test_set=test_set,
        ranks_path=args.ranks_out,
        cors_origin=args.cors_origin,
        defaults=defaults,
    )
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except OSError as exc:
        print(f"error: could not bind {args.host}:{args.port}: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # uvicorn exits itself on startup failures
        code = exc.code if isinstance(exc.code, int) else 1
        if code == 0:
            return 0
        print(f"error: server failed to start on {args.host}:{args.port}", file=sys.stderr)
        return 1
    return 0


def _add_split_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--split-fraction", type=float, default=0.8)
    parser.add_argument("--split-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfgen",
        description="Generate and evaluate feasibility-constrained counterfactual explanations.",
    )
    parser.add_argument("--version", action="version", version=f"cfgen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the classifier on a CSV dataset")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--schema", required=True)
    p_train.add_argument("--epochs", type=int, default=20)
    p_train.add_argument("--lr", type=float, default=0.01)
    p_train.add_argument("--batch-size", type=int, default=32)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--out", default="model.json")
    p_train.add_argument("--stats-out", default="stats.json")
    _add_split_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_explain = sub.add_parser("explain", help="generate counterfactuals for one instance")
    p_explain.add_argument("--model", required=True)
    p_explain.add_argument("--schema", required=True)
    p_explain.add_argument("--stats", required=True)
    p_explain.add_argument(
        "--instance", required=True, help="row index into the split, or inline JSON"
    )
    p_explain.add_argument("--data", help="dataset CSV, required for row-index instances")
    p_explain.add_argument("--from-split", choices=["train", "test"], default="test")
    p_explain.add_argument("--condition", choices=[c.value for c in Condition], default="c2")
    p_explain.add_argument("--constraints", help="constraint JSON, required for c2/c3")
    p_explain.add_argument("--gamma", help="inline JSON or path, c3 only")
    p_explain.add_argument("--k", type=int, default=5)
    p_explain.add_argument("--proximity-weight", type=float, default=1.0)
    p_explain.add_argument("--diversity-weight", type=float, default=1.0)
    p_explain.add_argument("--step-size", type=float, default=0.05)
    p_explain.add_argument("--max-iterations", type=int, default=5000)
    p_explain.add_argument("--convergence-tol", type=float, default=1e-4)
    p_explain.add_argument("--convergence-window", type=int, default=10)
    p_explain.add_argument(
        "--metric",
        choices=[m.value for m in ContinuousMetric],
        default=ContinuousMetric.MAD_MANHATTAN.value,
    )
    p_explain.add_argument("--undesirable-class", type=int, default=0)
    p_explain.add_argument("--seed", type=int, default=0)
    p_explain.add_argument("--out", default="cf_result")
    _add_split_flags(p_explain)
    p_explain.set_defaults(func=cmd_explain)

    p_eval = sub.add_parser("evaluate", help="evaluate exported runs or summarize ranks")
    p_eval.add_argument("--runs", nargs="*", help="result JSON paths or globs")
    p_eval.add_argument("--schema")
    p_eval.add_argument("--constraints")
    p_eval.add_argument("--ranks", help="rank CSV to summarize into a top-k table")
    p_eval.add_argument("--json-out")
    p_eval.set_defaults(func=cmd_evaluate)

    p_serve = sub.add_parser("serve", help="start the interactive session service")
    p_serve.add_argument("--model", required=True)
    p_serve.add_argument("--schema", required=True)
    p_serve.add_argument("--stats", required=True)
    p_serve.add_argument("--constraints")
    p_serve.add_argument("--data", help="dataset CSV enabling test-row session references")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8080)
    p_serve.add_argument("--cors-origin", help="origin allowed to call the API")
    p_serve.add_argument("--ranks-out", default="ranks.csv")
    p_serve.add_argument("--step-size", type=float, default=0.05)
    p_serve.add_argument("--max-iterations", type=int, default=5000)
    p_serve.add_argument("--undesirable-class", type=int, default=0)
    _add_split_flags(p_serve)
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
