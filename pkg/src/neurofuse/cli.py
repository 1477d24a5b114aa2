"""Command-line entry points: gen-data, build-graph, train, eval, explain.

Every subcommand exits 0 on success; failures print one machine-readable
JSON line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .connectome import load_cohort, save_cohort
from .diffcore import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, NumericError, ValidationError
from .hybrid_graph import GraphConfig
from .model import ModelConfig
from .pipeline import (
    RunResult,
    TrainConfig,
    audit_graphs,
    build_graphs,
    explain,
    predict,
    run_cv,
    shifted_seed_config,
)
from .objectives import evaluate
from .synth import SynthConfig, generate_cohort, resolve_signal_edges


def _read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON in {path!r}: {exc}") from exc


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _apply_graph_flags(graph: GraphConfig, args: argparse.Namespace) -> GraphConfig:
    if getattr(args, "fnc_only", False):
        graph = replace(graph, use_sbm=False, use_cmc=False, use_mdc=False)
    if getattr(args, "no_cmc", False):
        graph = replace(graph, use_cmc=False)
    if getattr(args, "no_mdc", False):
        graph = replace(graph, use_mdc=False)
    return graph


def _cmd_gen_data(args: argparse.Namespace) -> int:
    config = SynthConfig.from_dict(_read_json(args.config)) if args.config else SynthConfig()
    records = generate_cohort(config)
    out = save_cohort(records, args.out, extra_manifest={
        "generator_config": config.to_dict(),
        "signal_edges": [list(pair) for pair in resolve_signal_edges(config)],
    })
    _emit({"command": "gen-data", "out": str(out), "subjects": len(records),
           "node_count": records[0].node_count})
    return 0


def _cmd_build_graph(args: argparse.Namespace) -> int:
    records = load_cohort(args.cohort)
    graph_config = GraphConfig.from_dict(_read_json(args.config)) if args.config else GraphConfig()
    graph_config = _apply_graph_flags(graph_config, args)
    graphs = build_graphs(records, graph_config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for rec, graph in zip(records, graphs):
        if graph is None:
            continue
        with open(out / f"{rec.subject_id}.json", "w") as fh:
            json.dump(graph.to_dict(), fh, sort_keys=True)
            fh.write("\n")
        written += 1
    audit = audit_graphs(graphs)
    audit["graph_config"] = graph_config.to_dict()
    audit["skipped_subjects"] = [rec.subject_id for rec, g in zip(records, graphs)
                                 if g is None]
    with open(out / "audit.json", "w") as fh:
        json.dump(audit, fh, sort_keys=True, indent=1)
        fh.write("\n")
    _emit({"command": "build-graph", "out": str(out), "graphs_written": written,
           "edge_counts": audit["edge_counts"]})
    return 0


def _load_train_config(args: argparse.Namespace) -> TrainConfig:
    config = TrainConfig.from_dict(_read_json(args.config)) if args.config else TrainConfig()
    if args.target:
        config = replace(config, target=args.target)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "no_sf_loss", False):
        config = replace(config, use_sf_loss=False)
    graph = _apply_graph_flags(config.graph, args)
    if graph is not config.graph:
        config = replace(config, graph=graph)
    return config


def _write_csvs(out_dir: Path, result: RunResult) -> None:
    with open(out_dir / "loss_curves.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "epoch", "joint", "task", "sf"])
        for fold_payload in result.report.folds:
            curves = fold_payload["loss_curves"]
            for epoch in range(len(curves["joint"])):
                writer.writerow([fold_payload["fold"], epoch,
                                 repr(curves["joint"][epoch]),
                                 repr(curves["task"][epoch]),
                                 repr(curves["sf"][epoch])])
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "model", "mse", "mae", "correlation", "n"])
        for fold_payload in result.report.folds:
            rows = [("full", fold_payload["metrics"])]
            rows += [(name, entry) for name, entry in fold_payload["baselines"].items()]
            for model_name, entry in rows:
                corr = entry["correlation"]
                writer.writerow([fold_payload["fold"], model_name, repr(entry["mse"]),
                                 repr(entry["mae"]),
                                 "" if corr is None else repr(corr), entry["n"]])


def _write_run(out_dir: Path, result: RunResult, config: TrainConfig) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w") as fh:
        fh.write(result.report.to_canonical_json())
    with open(out_dir / "timing.json", "w") as fh:
        json.dump({"wall_clock_seconds": result.report.wall_clock_seconds}, fh)
        fh.write("\n")
    with open(out_dir / "graph_audit.json", "w") as fh:
        json.dump(result.report.graph_audit, fh, sort_keys=True, indent=1)
        fh.write("\n")
    _write_csvs(out_dir, result)
    best = result.fold_results[result.best_fold]
    save_checkpoint(
        out_dir / "model.json", best.params, best.adam,
        config_hash=config.config_hash(),
        meta={
            "target_name": config.target,
            "target_mean": best.target_mean,
            "target_std": best.target_std,
            "best_fold": result.best_fold,
            "seed": config.seed,
            "model_config": config.model.to_dict(),
            "graph_config": config.graph.to_dict(),
            "train_config": config.to_dict(),
        },
    )


def _cmd_train(args: argparse.Namespace) -> int:
    records = load_cohort(args.cohort)
    config = _load_train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = out / "graph_cache"

    run_aggregates = []
    last_result = None
    for rep in range(args.repeats):
        rep_config = shifted_seed_config(config, rep)
        rep_dir = out if args.repeats == 1 else out / f"rep{rep:03d}"
        result = run_cv(records, rep_config, cache_dir=cache_dir)
        _write_run(rep_dir, result, rep_config)
        run_aggregates.append({"seed": rep_config.seed,
                               "aggregate": result.report.aggregate})
        last_result = result

    if args.repeats > 1:
        fold_metrics = {"mse": [], "mae": [], "correlation": []}
        for agg in run_aggregates:
            for key in ("mse", "mae", "correlation"):
                mean = agg["aggregate"][f"{key}_mean"]
                if mean is not None:
                    fold_metrics[key].append(mean)
        overall = {}
        for key, values in fold_metrics.items():
            arr = np.asarray(values)
            overall[f"{key}_mean"] = float(arr.mean()) if arr.size else None
            overall[f"{key}_std"] = float(arr.std()) if arr.size else None
        with open(out / "aggregate.json", "w") as fh:
            json.dump({"runs": run_aggregates, "overall": overall}, fh,
                      sort_keys=True, indent=1)
            fh.write("\n")

    _emit({"command": "train", "out": str(out), "repeats": args.repeats,
           "aggregate": last_result.report.aggregate})
    return 0


def _checkpoint_context(path: str):
    bundle = load_checkpoint(path)
    meta = bundle["meta"]
    for key in ("target_name", "target_mean", "target_std", "model_config",
                "graph_config"):
        if key not in meta:
            raise ValidationError(f"checkpoint missing metadata field {key!r}")
    model_config = ModelConfig.from_dict(meta["model_config"])
    graph_config = GraphConfig.from_dict(meta["graph_config"])
    return bundle["params"], model_config, graph_config, meta


def _cmd_eval(args: argparse.Namespace) -> int:
    params, model_config, graph_config, meta = _checkpoint_context(args.checkpoint)
    records = load_cohort(args.cohort)
    graphs = build_graphs(records, graph_config)
    usable = [(rec, g) for rec, g in zip(records, graphs) if g is not None]
    if not usable:
        raise ValidationError("no usable subjects in cohort")
    preds, _ = predict(params, model_config, [g for _, g in usable],
                       meta["target_mean"], meta["target_std"])
    targets = np.array([rec.targets[meta["target_name"]] for rec, _ in usable])
    entry = evaluate(preds, targets)
    payload = {"command": "eval", "target_name": meta["target_name"],
               **entry.to_dict()}
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.write("\n")
    _emit(payload)
    return 0


def _cmd_explain(args: argparse.Namespace) -> int:
    params, model_config, graph_config, meta = _checkpoint_context(args.checkpoint)
    records = load_cohort(args.cohort)
    payload = explain(params, model_config, records, graph_config,
                      fraction=args.fraction, out_path=args.out)
    _emit({"command": "explain", "out": args.out,
           "total_connections": payload["total_connections"],
           "emitted": payload["emitted"]})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neurofuse",
        description="Hybrid structure-function brain graphs with attention networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic cohort directory")
    p.add_argument("--config", help="synthesis config JSON")
    p.add_argument("--out", required=True, help="cohort output directory")
    p.set_defaults(handler=_cmd_gen_data)

    p = sub.add_parser("build-graph", help="assemble hybrid graphs for a cohort")
    p.add_argument("--cohort", required=True)
    p.add_argument("--config", help="graph config JSON")
    p.add_argument("--out", required=True, help="graph output directory")
    p.add_argument("--no-mdc", action="store_true", help="drop detour edges")
    p.add_argument("--no-cmc", action="store_true", help="drop cross-modal edges")
    p.add_argument("--fnc-only", action="store_true",
                   help="drop the structural modality entirely")
    p.set_defaults(handler=_cmd_build_graph)

    p = sub.add_parser("train", help="cross-validated training run")
    p.add_argument("--cohort", required=True)
    p.add_argument("--config", help="train config JSON")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--target", choices=["fluid", "crystallized", "total"])
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int, default=1,
                   help="repeat the run with shifted seeds and aggregate")
    p.add_argument("--no-mdc", action="store_true")
    p.add_argument("--no-cmc", action="store_true")
    p.add_argument("--no-sf-loss", action="store_true")
    p.add_argument("--fnc-only", action="store_true")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a cohort")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--out", help="optional metrics JSON output path")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("explain", help="rank connections by attention importance")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--fraction", type=float, default=0.03)
    p.add_argument("--out", required=True, help="ranked connections JSON path")
    p.set_defaults(handler=_cmd_explain)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ValidationError, ConfigurationError, NumericError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
