"""Training objectives (task, structure-function consistency, joint) and
regression evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .connectome import ConnectivityMatrix
from .diffcore import Tensor2
from .errors import ConfigurationError, ValidationError


@dataclass(frozen=True)
class LossWeights:
    lambda_sf: float = 0.3
    lambda_task: float = 0.7

    def __post_init__(self) -> None:
        if self.lambda_sf < 0.0 or self.lambda_task < 0.0:
            raise ConfigurationError("loss weights must be nonnegative")
        if self.lambda_sf == 0.0 and self.lambda_task == 0.0:
            raise ConfigurationError("at least one loss weight must be positive")


def _as_row_tensor(values) -> Tensor2:
    if isinstance(values, Tensor2):
        if values.shape[0] != 1:
            raise ValidationError(f"expected a row tensor, got shape {values.shape}")
        return values
    arr = np.asarray(values, dtype=np.float64).reshape(1, -1)
    return Tensor2(arr)


def task_loss(predictions, targets) -> Tensor2:
    """Mean squared error over a batch of scalar predictions.

    `predictions` may be a Tensor2 row (differentiable) or an array;
    `targets` is an array of the same length.
    """
    preds = _as_row_tensor(predictions)
    targ = np.asarray(targets, dtype=np.float64).reshape(1, -1)
    if preds.shape[1] == 0:
        raise ValidationError("task_loss on an empty batch")
    if targ.shape != preds.shape:
        raise ValidationError(
            f"prediction/target length mismatch: {preds.shape[1]} vs {targ.shape[1]}"
        )
    diff = preds - Tensor2(targ)
    return (diff * diff).mean()


def sf_consistency_loss(x_final, wf) -> Tensor2:
    """Frobenius discrepancy between the embedding Gram matrix and the FNC.

    Reconstructs the functional matrix as X X^T (diagonal included, so
    row norms are pulled toward the zero diagonal) and returns
    ||X X^T - Wf||_F^2 / eta^2.
    """
    x = x_final if isinstance(x_final, Tensor2) else Tensor2(np.asarray(x_final, dtype=np.float64))
    wf_values = wf.values if isinstance(wf, ConnectivityMatrix) else np.asarray(wf, dtype=np.float64)
    eta = x.shape[0]
    if wf_values.shape != (eta, eta):
        raise ValidationError(
            f"FNC shape {wf_values.shape} does not match embeddings with {eta} rows"
        )
    diff = x @ x.transpose() - Tensor2(wf_values)
    return (diff * diff).sum() * (1.0 / (eta * eta))


def joint_loss(task, sf, weights: LossWeights) -> Tensor2:
    """Weighted sum of the prediction and consistency terms."""
    task_t = task if isinstance(task, Tensor2) else Tensor2([[float(task)]])
    sf_t = sf if isinstance(sf, Tensor2) else Tensor2([[float(sf)]])
    return sf_t * weights.lambda_sf + task_t * weights.lambda_task


@dataclass(frozen=True)
class MetricsEntry:
    """MSE/MAE/Pearson correlation for one prediction set.

    correlation is None (flagged undefined) when either side has zero
    variance or fewer than two samples; it is never NaN.
    """

    mse: float
    mae: float
    correlation: float | None
    n: int

    @property
    def correlation_defined(self) -> bool:
        return self.correlation is not None

    def to_dict(self) -> dict:
        return {"mse": self.mse, "mae": self.mae, "correlation": self.correlation,
                "n": self.n}

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricsEntry":
        return cls(mse=payload["mse"], mae=payload["mae"],
                   correlation=payload["correlation"], n=payload["n"])


def evaluate(predictions, targets) -> MetricsEntry:
    """Standard regression metrics for scalar predictions."""
    preds = np.asarray(predictions, dtype=np.float64).reshape(-1)
    targ = np.asarray(targets, dtype=np.float64).reshape(-1)
    if preds.size != targ.size:
        raise ValidationError(
            f"prediction/target length mismatch: {preds.size} vs {targ.size}"
        )
    if preds.size == 0:
        raise ValidationError("evaluate on an empty batch")
    residual = preds - targ
    mse = float(np.mean(residual ** 2))
    mae = float(np.mean(np.abs(residual)))
    correlation: float | None = None
    if preds.size >= 2:
        ps = preds - preds.mean()
        ts = targ - targ.mean()
        denom = math.sqrt(float(ps @ ps) * float(ts @ ts))
        if denom > 0.0:
            correlation = float(np.clip((ps @ ts) / denom, -1.0, 1.0))
    return MetricsEntry(mse=mse, mae=mae, correlation=correlation, n=int(preds.size))


def _mean_std(values: list[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


@dataclass
class MetricsReport:
    """Per-fold metrics plus mean +/- std aggregates and run metadata."""

    target_name: str
    seed: int
    config_hash: str
    entries: list[MetricsEntry] = field(default_factory=list)

    def aggregate(self) -> dict:
        mse_mean, mse_std = _mean_std([e.mse for e in self.entries])
        mae_mean, mae_std = _mean_std([e.mae for e in self.entries])
        corr_values = [e.correlation for e in self.entries if e.correlation_defined]
        corr_mean, corr_std = _mean_std(corr_values)
        return {
            "mse_mean": mse_mean, "mse_std": mse_std,
            "mae_mean": mae_mean, "mae_std": mae_std,
            "correlation_mean": corr_mean, "correlation_std": corr_std,
            "correlation_defined_folds": len(corr_values),
            "folds": len(self.entries),
        }

    def to_dict(self) -> dict:
        return {
            "target_name": self.target_name,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "per_fold": [e.to_dict() for e in self.entries],
            "aggregate": self.aggregate(),
        }

    def format_table(self) -> str:
        """Aligned text table of mean +/- std per metric."""
        agg = self.aggregate()
        rows = [("metric", "mean", "std")]
        for label, mean_key, std_key in (
            ("mse", "mse_mean", "mse_std"),
            ("mae", "mae_mean", "mae_std"),
            ("correlation", "correlation_mean", "correlation_std"),
        ):
            mean, std = agg[mean_key], agg[std_key]
            rows.append((
                label,
                "undefined" if mean is None else f"{mean:.4f}",
                "undefined" if std is None else f"{std:.4f}",
            ))
        widths = [max(len(r[c]) for r in rows) for c in range(3)]
        lines = ["  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row))
                 for row in rows]
        return "\n".join(lines)
