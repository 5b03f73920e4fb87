"""Detection metrics, ROC/AUC and resource accounting."""

from __future__ import annotations

import platform
from dataclasses import asdict, dataclass, field

import numpy as np


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(predictions, labels) -> ConfusionCounts:
    """Confusion counts with anomaly (1) as the positive class."""
    p = np.asarray(predictions, dtype=np.int64).ravel()
    y = np.asarray(labels, dtype=np.int64).ravel()
    if p.size != y.size:
        raise ValueError(f"{p.size} predictions vs {y.size} labels")
    if p.size == 0:
        raise ValueError("confusion of an empty set")
    return ConfusionCounts(
        tp=int(np.sum((p == 1) & (y == 1))),
        tn=int(np.sum((p == 0) & (y == 0))),
        fp=int(np.sum((p == 1) & (y == 0))),
        fn=int(np.sum((p == 0) & (y == 1))),
    )


def classification_metrics(c: ConfusionCounts) -> dict[str, float]:
    if c.total <= 0:
        raise ValueError("no evaluated points")
    accuracy = (c.tp + c.tn) / c.total
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"accuracy": accuracy, "precision": precision, "recall": recall, "f1": f1}


def _check_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.int64).ravel()
    if s.size != y.size:
        raise ValueError(f"{s.size} scores vs {y.size} labels")
    if not (np.any(y == 1) and np.any(y == 0)):
        raise UndefinedMetricError("ROC/AUC needs both classes present")
    return s, y


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, fpr, tpr): one point per distinct score, plus the (0, 0) origin.

    A point at threshold t counts every score >= t as positive.
    """
    s, y = _check_binary(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.cumsum(y)[last_of_group]
    fps = (last_of_group + 1) - tps
    thresholds = np.r_[np.inf, s[last_of_group]]
    tpr = np.r_[0.0, tps / tps[-1]]
    fpr = np.r_[0.0, fps / fps[-1]]
    return thresholds, fpr, tpr


def roc_auc(scores, labels) -> float:
    """Trapezoidal area under the empirical ROC curve."""
    _, fpr, tpr = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def pairwise_auc(scores, labels) -> float:
    """Brute-force (wins + ties/2) / (P * N) over all positive/negative pairs."""
    s, y = _check_binary(scores, labels)
    pos = s[y == 1]
    neg = s[y == 0]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (pos.size * neg.size)


def dense_param_count(sizes: list[int]) -> int:
    """Weights plus biases of a chain of dense layers."""
    return sum(a * b + b for a, b in zip(sizes, sizes[1:]))


def dense_flops(sizes: list[int], rows: int = 1) -> int:
    return sum(2 * rows * a * b for a, b in zip(sizes, sizes[1:]))


def resource_profile(
    parameters: int = 0,
    flops: int = 0,
    inference_seconds: float = 0.0,
    inferences: int = 1,
    training_seconds: float = 0.0,
) -> dict[str, float]:
    """Parameters in millions, FLOPs in billions, per-inference ms, training s."""
    return {
        "parameters_m": parameters / 1e6,
        "flops_g": flops / 1e9,
        "inference_time_ms": 1000.0 * inference_seconds / max(inferences, 1),
        "training_time_s": float(training_seconds),
    }


TIMING_FIELDS = ("inference_time_ms", "training_time_s")


def environment_note() -> str:
    return f"python {platform.python_version()} on {platform.machine()} ({platform.system()})"


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1_score: float
    auc: float
    parameters_m: float
    flops_g: float
    inference_time_ms: float
    training_time_s: float
    confusion: dict = field(default_factory=dict)
    threshold: float | None = None
    n_windows: int = 0
    variant: str = "Integration Model"
    seed: int = 0
    config: dict = field(default_factory=dict)
    environment: str = ""
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)

    def without_timings(self) -> dict:
        d = self.to_dict()
        for k in TIMING_FIELDS:
            d.pop(k)
        d.pop("environment")
        return d


def build_report(
    scores,
    predictions,
    labels,
    profile: dict[str, float],
    **extra,
) -> MetricsReport:
    counts = confusion(predictions, labels)
    m = classification_metrics(counts)
    warnings = list(extra.pop("warnings", []))
    try:
        auc = roc_auc(scores, labels)
    except UndefinedMetricError as exc:
        auc = float("nan")
        warnings.append(f"auc undefined: {exc}")
    return MetricsReport(
        accuracy=m["accuracy"],
        precision=m["precision"],
        recall=m["recall"],
        f1_score=m["f1"],
        auc=auc,
        confusion=asdict(counts),
        n_windows=counts.total,
        environment=environment_note(),
        warnings=warnings,
        **profile,
        **extra,
    )


def format_summary_row(report: MetricsReport, name: str = "Ours") -> str:
    """Percent-scaled Accuracy / Recall / F1 Score / AUC row."""
    vals = [report.accuracy, report.recall, report.f1_score, report.auc]
    return "\t".join([name, *(f"{100 * v:.2f}" for v in vals)])


ABLATION_COLUMNS = (
    "Model",
    "Accuracy",
    "Recall",
    "Precision",
    "F1 Score",
    "AUC",
    "Training Time",
    "Inference Time",
    "Parameters",
)


def format_ablation_table(reports: list[MetricsReport]) -> str:
    """Ablation table: percentages for rates, seconds / ms / millions for resources."""
    lines = ["\t".join(ABLATION_COLUMNS)]
    for r in reports:
        lines.append(
            "\t".join(
                [
                    r.variant,
                    *(f"{100 * v:.2f}" for v in (r.accuracy, r.recall, r.precision, r.f1_score, r.auc)),
                    f"{r.training_time_s:.2f}",
                    f"{r.inference_time_ms:.3f}",
                    f"{r.parameters_m:.6f}",
                ]
            )
        )
    return "\n".join(lines)
