"""End-to-end orchestration: cross-validated training, evaluation,
graph caching, run reports, and attention explanations."""

from __future__ import annotations

import hashlib
import json
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .connectome import TARGET_NAMES, SubjectRecord
from .diffcore import AdamState, ParamStore, Tensor2, adam_step, no_grad
from .errors import ConfigurationError, ValidationError
from .hybrid_graph import EdgeKind, GraphConfig, HybridGraph, assemble_hybrid_graph
from .model import (
    ForwardTrace,
    GraphTensors,
    ModelConfig,
    extract_attention_importance,
    forward,
    init_params,
)
from .objectives import (
    LossWeights,
    MetricsEntry,
    MetricsReport,
    evaluate,
    joint_loss,
    sf_consistency_loss,
    task_loss,
)
from .synth import baseline_predictors


@dataclass(frozen=True)
class TrainConfig:
    """Run settings: graph construction, model, objective, optimization,
    cross-validation, and ablation switches.

    target_scale sets the standard deviation that fold-standardized
    targets are rescaled to before training. Adam moves each parameter
    by at most ~learning_rate per step, so over a short run the readout
    head can only traverse learning_rate * steps; shrinking the target
    scale shrinks the optimal head weights by the same factor and keeps
    them reachable. Predictions are mapped back to the raw target scale
    before any metric is computed.
    """

    graph: GraphConfig = field(default_factory=GraphConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 50
    folds: int = 5
    target: str = "fluid"
    target_scale: float = 0.01
    use_sf_loss: bool = True
    use_fnc: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.folds < 2:
            raise ConfigurationError(f"folds must be >= 2, got {self.folds}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("batch_size and epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.target_scale <= 0:
            raise ConfigurationError("target_scale must be positive")
        if self.target not in TARGET_NAMES:
            raise ConfigurationError(
                f"target must be one of {TARGET_NAMES}, got {self.target!r}"
            )
        if not self.use_fnc:
            raise ConfigurationError(
                "the functional modality cannot be ablated; use_fnc must stay true"
            )

    def effective_weights(self) -> LossWeights:
        if self.use_sf_loss:
            return self.loss
        return LossWeights(lambda_sf=0.0, lambda_task=self.loss.lambda_task)

    def to_dict(self) -> dict:
        return {
            "graph": self.graph.to_dict(),
            "model": self.model.to_dict(),
            "loss": {"lambda_sf": self.loss.lambda_sf,
                     "lambda_task": self.loss.lambda_task},
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "folds": self.folds,
            "target": self.target,
            "target_scale": self.target_scale,
            "use_sf_loss": self.use_sf_loss,
            "use_fnc": self.use_fnc,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        data = dict(payload)
        kwargs = {}
        if "graph" in data:
            graph = dict(data.pop("graph"))
            if "radii" in graph:
                graph["radii"] = tuple(graph["radii"])
            kwargs["graph"] = GraphConfig(**graph)
        if "model" in data:
            kwargs["model"] = ModelConfig.from_dict(data.pop("model"))
        if "loss" in data:
            kwargs["loss"] = LossWeights(**data.pop("loss"))
        kwargs.update(data)
        return cls(**kwargs)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def kfold_split(subject_count: int, folds: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffle, then contiguous partition into near-equal test sets.

    Earlier folds absorb the remainder, so subject_count=11, folds=5
    gives test sizes 3,2,2,2,2. Returned index arrays are sorted.
    """
    if folds < 2:
        raise ConfigurationError(f"folds must be >= 2, got {folds}")
    if subject_count < folds:
        raise ValidationError(
            f"cannot split {subject_count} subjects into {folds} folds"
        )
    order = np.random.default_rng(seed).permutation(subject_count)
    parts = np.array_split(order, folds)
    splits = []
    for f in range(folds):
        test = np.sort(parts[f])
        train = np.sort(np.concatenate([parts[g] for g in range(folds) if g != f]))
        splits.append((train, test))
    return splits


def cohort_hash(records: list[SubjectRecord]) -> str:
    """Content hash of a cohort, for keying the graph cache."""
    digest = hashlib.sha256()
    for rec in records:
        digest.update(rec.subject_id.encode())
        digest.update(rec.sbm.values.tobytes())
        digest.update(rec.fnc.values.tobytes())
        for name in TARGET_NAMES:
            digest.update(repr(rec.targets[name]).encode())
    return digest.hexdigest()


def build_graphs(records: list[SubjectRecord], config: GraphConfig,
                 cache_dir: str | Path | None = None) -> list[HybridGraph | None]:
    """Assemble one hybrid graph per subject, with an optional disk cache.

    Degenerate subjects are skipped with a warning and reported as None;
    more than 10% skipped is an error. The cache key combines the cohort
    content hash and the graph parameters.
    """
    cache_path = None
    if cache_dir is not None:
        key_src = cohort_hash(records) + json.dumps(config.to_dict(), sort_keys=True)
        key = hashlib.sha256(key_src.encode()).hexdigest()[:16]
        cache_path = Path(cache_dir) / f"graphs-{key}.json"
        if cache_path.is_file():
            with open(cache_path) as fh:
                payload = json.load(fh)
            return [None if entry is None else HybridGraph.from_dict(entry)
                    for entry in payload["graphs"]]

    graphs: list[HybridGraph | None] = []
    skipped = 0
    for rec in records:
        try:
            graphs.append(assemble_hybrid_graph(rec, config))
        except ValidationError as exc:
            warnings.warn(f"skipping subject {rec.subject_id!r}: {exc}")
            graphs.append(None)
            skipped += 1
    if skipped > 0.1 * len(records):
        raise ValidationError(
            f"{skipped} of {len(records)} subjects degenerate (> 10% skipped)"
        )

    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "graph_config": config.to_dict(),
            "graphs": [None if g is None else g.to_dict() for g in graphs],
        }
        with open(cache_path, "w") as fh:
            json.dump(payload, fh, sort_keys=True)
    return graphs


def audit_graphs(graphs: list[HybridGraph | None]) -> dict:
    """Total edge counts per kind across the built graphs."""
    counts = {kind.label: 0 for kind in EdgeKind}
    built = 0
    for g in graphs:
        if g is None:
            continue
        built += 1
        for label, value in g.kind_counts().items():
            counts[label] += value
    return {"graphs_built": built, "edge_counts": counts}


@dataclass
class FoldResult:
    params: ParamStore
    adam: AdamState
    curves: dict[str, list[float]]
    target_mean: float
    target_std: float
    skipped_subjects: list[str]


def train_fold(records: list[SubjectRecord], config: TrainConfig,
               graphs: list[HybridGraph | None] | None = None) -> FoldResult:
    """Train one model on one training split.

    Targets are standardized with the split's own mean/std and rescaled
    to config.target_scale (the combined divisor is stored in the result
    so predictions map back to raw units); mini-batches are reshuffled
    every epoch; the recorded per-epoch losses are means over subjects.

    After the optimization loop the raw-unit output scale is recalibrated:
    a least-squares scale and offset is fit between the model's eval-mode
    predictions on this same training split and the raw targets, then
    folded into the stored (target_mean, target_std) pair. Adam moves
    every coordinate at roughly the same speed regardless of gradient
    magnitude, so the head it finds points in a useful direction but at
    an arbitrary output scale; the refit corrects the scale using
    training data only. Deterministic under config.seed.
    """
    if not records:
        raise ValidationError("empty training set")
    if graphs is None:
        graphs = build_graphs(records, config.graph)
    if len(graphs) != len(records):
        raise ValidationError("graphs/records length mismatch")

    usable = [(rec, g) for rec, g in zip(records, graphs) if g is not None]
    skipped = [rec.subject_id for rec, g in zip(records, graphs) if g is None]
    if not usable:
        raise ValidationError("no usable subjects after degeneracy skips")

    tensors = [GraphTensors.from_graph(g) for _, g in usable]
    fnc_values = [rec.fnc.values for rec, _ in usable]
    targets_raw = np.array([rec.targets[config.target] for rec, _ in usable])
    target_mean = float(targets_raw.mean())
    spread = float(targets_raw.std())
    if spread < 1e-12:
        spread = 1.0
    # store the divisor that maps raw targets to the training scale;
    # predict() then inverts standardization and rescaling in one step
    target_std = spread / config.target_scale
    z_targets = (targets_raw - target_mean) / target_std

    params = init_params(config.model, config.seed)
    adam = AdamState.for_params(params, alpha=config.learning_rate)
    weights = config.effective_weights()
    dropout_rng = np.random.default_rng([config.seed, 9001])

    n = len(usable)
    curves: dict[str, list[float]] = {"joint": [], "task": [], "sf": []}
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 10_000 + epoch]).permutation(n)
        sums = {"joint": 0.0, "task": 0.0, "sf": 0.0}
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            params.zero_grads()
            preds = []
            sf_terms = []
            for idx in batch:
                trace = forward(tensors[idx], params, config.model,
                                mode="train", rng=dropout_rng)
                preds.append(trace.pred_tensor)
                if weights.lambda_sf > 0.0:
                    sf_terms.append(sf_consistency_loss(trace.x_final_tensor,
                                                        fnc_values[idx]))
            task = task_loss(Tensor2.concat_cols(preds), z_targets[batch])
            if sf_terms:
                sf = Tensor2.concat_cols(sf_terms).mean()
            else:
                sf = Tensor2([[0.0]])
            loss = joint_loss(task, sf, weights)
            loss.backward()
            adam_step(params, adam)
            b = len(batch)
            sums["joint"] += loss.item() * b
            sums["task"] += task.item() * b
            sums["sf"] += sf.item() * b
        for key in curves:
            curves[key].append(sums[key] / n)

    with no_grad():
        train_z_preds = np.array([
            forward(gt, params, config.model, mode="eval").prediction
            for gt in tensors
        ])
    pred_var = float(train_z_preds.var())
    if pred_var < 1e-24:
        slope, intercept = 0.0, float(z_targets.mean())
    else:
        slope = float(np.cov(train_z_preds, z_targets, bias=True)[0, 1] / pred_var)
        intercept = float(z_targets.mean() - slope * train_z_preds.mean())

    return FoldResult(params=params, adam=adam, curves=curves,
                      target_mean=target_mean + intercept * target_std,
                      target_std=target_std * slope,
                      skipped_subjects=skipped)


def predict(params: ParamStore, model_config: ModelConfig,
            graphs: list[HybridGraph | GraphTensors], target_mean: float = 0.0,
            target_std: float = 1.0) -> tuple[np.ndarray, list[ForwardTrace]]:
    """Eval-mode predictions (de-standardized) plus the full traces."""
    preds = []
    traces = []
    with no_grad():
        for g in graphs:
            trace = forward(g, params, model_config, mode="eval")
            traces.append(trace)
            preds.append(trace.prediction * target_std + target_mean)
    return np.asarray(preds), traces


@dataclass
class RunReport:
    """Everything one cross-validated run reports.

    wall_clock_seconds is informational only and deliberately excluded
    from the canonical serialization, which must be byte-identical for
    identically seeded runs.
    """

    target_name: str
    seed: int
    config: dict
    config_hash: str
    folds: list[dict]
    aggregate: dict
    graph_audit: dict
    wall_clock_seconds: float = 0.0

    def to_canonical_dict(self) -> dict:
        return {
            "target_name": self.target_name,
            "seed": self.seed,
            "config": self.config,
            "config_hash": self.config_hash,
            "folds": self.folds,
            "aggregate": self.aggregate,
            "graph_audit": self.graph_audit,
        }

    def to_canonical_json(self) -> str:
        return json.dumps(self.to_canonical_dict(), sort_keys=True, indent=1) + "\n"


@dataclass
class RunResult:
    report: RunReport
    metrics: MetricsReport
    fold_results: list[FoldResult]
    best_fold: int


def run_cv(records: list[SubjectRecord], config: TrainConfig,
           cache_dir: str | Path | None = None) -> RunResult:
    """Cross-validated training and evaluation of the full pipeline."""
    started = time.perf_counter()
    graphs = build_graphs(records, config.graph, cache_dir=cache_dir)
    splits = kfold_split(len(records), config.folds, config.seed)
    config_hash = config.config_hash()

    metrics = MetricsReport(target_name=config.target, seed=config.seed,
                            config_hash=config_hash)
    fold_payloads = []
    fold_results = []
    for f, (train_idx, test_idx) in enumerate(splits):
        train_eff = [int(i) for i in train_idx if graphs[i] is not None]
        test_eff = [int(i) for i in test_idx if graphs[i] is not None]
        if not train_eff or not test_eff:
            raise ValidationError(f"fold {f}: no usable subjects on one side of the split")
        result = train_fold([records[i] for i in train_eff], config,
                            graphs=[graphs[i] for i in train_eff])
        skipped_ids = [records[i].subject_id for i in np.concatenate([train_idx, test_idx])
                       if graphs[int(i)] is None]
        result.skipped_subjects = skipped_ids

        y_test = np.array([records[i].targets[config.target] for i in test_eff])
        preds, _ = predict(result.params, config.model,
                           [graphs[i] for i in test_eff],
                           result.target_mean, result.target_std)
        entry = evaluate(preds, y_test)
        baselines = baseline_predictors(records, train_eff, test_eff, config.target)

        metrics.entries.append(entry)
        fold_results.append(result)
        fold_payloads.append({
            "fold": f,
            "train_size": len(train_eff),
            "test_size": len(test_eff),
            "test_indices": test_eff,
            "skipped_subjects": skipped_ids,
            "metrics": entry.to_dict(),
            "baselines": {name: e.to_dict() for name, e in baselines.items()},
            "loss_curves": result.curves,
        })

    best_fold = min(range(len(fold_payloads)),
                    key=lambda f: fold_payloads[f]["metrics"]["mse"])
    report = RunReport(
        target_name=config.target,
        seed=config.seed,
        config=config.to_dict(),
        config_hash=config_hash,
        folds=fold_payloads,
        aggregate=metrics.aggregate(),
        graph_audit=audit_graphs(graphs),
        wall_clock_seconds=time.perf_counter() - started,
    )
    return RunResult(report=report, metrics=metrics, fold_results=fold_results,
                     best_fold=best_fold)


def explain(params: ParamStore, model_config: ModelConfig,
            records: list[SubjectRecord], graph_config: GraphConfig,
            fraction: float, out_path: str | Path | None = None,
            graphs: list[HybridGraph | None] | None = None) -> dict:
    """Rank connections by mean local attention and keep the top fraction.

    The cutoff count is ceil(fraction * total ranked connections), so a
    nonempty ranking always emits at least one connection.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"fraction must be in (0, 1], got {fraction}")
    if not records:
        raise ValidationError("explain requires a nonempty cohort subset")
    if graphs is None:
        graphs = build_graphs(records, graph_config)
    usable = [g for g in graphs if g is not None]
    if not usable:
        raise ValidationError("no usable subjects to explain")
    _, traces = predict(params, model_config, usable)
    ranked = extract_attention_importance(traces)
    keep = math.ceil(fraction * len(ranked))
    payload = {
        "fraction": fraction,
        "total_connections": len(ranked),
        "emitted": keep,
        "connections": [
            {"i": c.i, "j": c.j, "kind": c.kind.label, "mean_weight": c.mean_weight}
            for c in ranked[:keep]
        ],
    }
    if out_path is not None:
        with open(out_path, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.write("\n")
    return payload


def shifted_seed_config(config: TrainConfig, repeat_index: int) -> TrainConfig:
    """Config for repeat r: the split/init seed advances by 1000 per repeat."""
    if repeat_index == 0:
        return config
    return replace(config, seed=config.seed + 1000 * repeat_index)
