"""Experiment orchestration: data -> splits -> pipeline -> report."""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import serialization
from .metrics import MetricsReport, build_report, format_ablation_table, resource_profile, roc_curve
from .pipeline import ConfigError, PipelineConfig, PipelineModel, StageError, classify, fit_pipeline
from .preprocessing import (
    Dataset,
    DatasetSchema,
    Preprocessor,
    Splits,
    bundled_schema,
    drop_outliers,
    parse_dataset,
    read_canonical_csv,
    split_dataset,
)
from .synthetic import SyntheticSpec, synth_dataset

log = logging.getLogger(__name__)

ABLATION_VARIANTS = ("IF-GAN", "IF-Transformer", "GAN-Transformer", "Integration Model")


@dataclass
class PreprocessSettings:
    normalization: str = "minmax"
    pca_k: int | None = None
    train_frac: float = 0.7
    val_frac_of_train: float = 0.2
    drop_outliers: bool = False
    outlier_z: float = 8.0


@dataclass
class ExperimentConfig:
    """Exactly one of ``dataset_path`` or ``synthetic`` names the data."""

    seed: int = 42
    dataset_path: str | None = None
    schema: str | None = None  # schema JSON path or bundled name; None reads canonical CSV
    synthetic: SyntheticSpec | None = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    preprocess: PreprocessSettings = field(default_factory=PreprocessSettings)
    output: str | None = None
    report_format: str = "json"
    roc_csv: str | None = None

    def __post_init__(self):
        if (self.dataset_path is None) == (self.synthetic is None):
            raise ConfigError("set exactly one of dataset_path / synthetic")
        if self.report_format not in ("json", "csv"):
            raise ConfigError(f"unknown report format {self.report_format!r}")
        self.pipeline.seed = self.seed

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "dataset_path": self.dataset_path,
            "schema": self.schema,
            "synthetic": self.synthetic.to_dict() if self.synthetic is not None else None,
            "pipeline": self.pipeline.to_dict(),
            "preprocess": asdict(self.preprocess),
            "output": self.output,
            "report_format": self.report_format,
            "roc_csv": self.roc_csv,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        syn = d.pop("synthetic", None)
        pipe = d.pop("pipeline", None) or {}
        pre = d.pop("preprocess", None) or {}
        known = {"seed", "dataset_path", "schema", "output", "report_format", "roc_csv"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(
            synthetic=SyntheticSpec(**syn) if syn is not None else None,
            pipeline=PipelineConfig.from_dict(pipe),
            preprocess=PreprocessSettings(**pre),
            **d,
        )


def canonical_config(**overrides) -> ExperimentConfig:
    """The seeded synthetic benchmark (2000 normal + 100 anomalies at 6 sigma, 8 dims)."""
    cfg = ExperimentConfig(seed=42, synthetic=SyntheticSpec())
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def apply_desk_scale(cfg: PipelineConfig) -> PipelineConfig:
    """Shrink the expensive knobs: 2,000 GAN iterations, 20 epochs, windows of 32."""
    cfg.gan.iterations = 2000
    cfg.transformer.epochs = 20
    cfg.transformer.seq_len = 32
    return cfg


def resolve_schema(schema: str) -> DatasetSchema:
    path = Path(schema)
    if path.suffix == ".json" or path.exists():
        return DatasetSchema.load(path)
    return bundled_schema(schema)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def verify_checksum(path, schema: DatasetSchema) -> bool | None:
    """True/False when the schema pins a digest for this file name, None when it does not."""
    expected = schema.checksums.get(Path(path).name)
    if not expected:
        return None
    return sha256_file(path) == expected


def load_dataset(cfg: ExperimentConfig) -> tuple[Dataset, list[str]]:
    notes: list[str] = []
    if cfg.synthetic is not None:
        return synth_dataset(cfg.synthetic), notes
    if cfg.schema is None:
        return read_canonical_csv(cfg.dataset_path), notes
    schema = resolve_schema(cfg.schema)
    ok = verify_checksum(cfg.dataset_path, schema)
    if ok is False:
        notes.append(f"checksum mismatch for {cfg.dataset_path}")
    dataset, report = parse_dataset(cfg.dataset_path, schema)
    if report.excluded_rows or report.imputed:
        notes.append(
            f"cleaning: excluded {report.excluded_rows} rows {report.excluded_reasons}, imputed {report.imputed}"
        )
    return dataset, notes


@dataclass
class PreparedData:
    splits: Splits  # raw splits
    train: Dataset  # transformed
    val: Dataset
    test: Dataset
    preprocessor: Preprocessor
    notes: list[str]


def prepare(cfg: ExperimentConfig) -> PreparedData:
    dataset, notes = _staged("load", load_dataset, cfg)
    p = cfg.preprocess
    splits = _staged("split", split_dataset, dataset, p.train_frac, p.val_frac_of_train, cfg.seed)
    train_raw = splits.train
    if p.drop_outliers:
        enc = Preprocessor.fit(train_raw, p.normalization).encoder
        kept = drop_outliers(enc.transform(train_raw), p.outlier_z)
        train_raw = train_raw.subset(np.searchsorted(train_raw.row_index, kept.row_index))
        splits = Splits(train_raw, splits.val, splits.test)
    prep = _staged("preprocess", Preprocessor.fit, train_raw, p.normalization, p.pca_k)
    train, val, test = (
        _staged("preprocess", prep.transform, d) for d in (splits.train, splits.val, splits.test)
    )
    return PreparedData(splits, train, val, test, prep, notes)


def _staged(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
        raise StageError(stage, exc) from exc


def evaluate(
    model: PipelineModel,
    data: PreparedData,
    training_seconds: float,
    cfg: ExperimentConfig,
    variant: str = "Integration Model",
) -> tuple[MetricsReport, object]:
    t0 = time.perf_counter()
    result = _staged("classify", classify, model, data.test, True)
    infer = time.perf_counter() - t0
    profile = resource_profile(
        parameters=model.n_params,
        flops=model.flops_per_window(),
        inference_seconds=infer,
        inferences=len(result.bits),
        training_seconds=training_seconds,
    )
    report = build_report(
        result.scores,
        result.bits,
        result.labels,
        profile,
        threshold=model.threshold,
        variant=variant,
        seed=cfg.seed,
        config=cfg.to_dict(),
        warnings=data.notes + model.warnings,
    )
    return report, result


def fit_and_evaluate(cfg: ExperimentConfig, data: PreparedData, variant: str = "Integration Model"):
    t0 = time.perf_counter()
    model = _staged("fit", fit_pipeline, data.train, data.val, cfg.pipeline, data.preprocessor)
    train_s = time.perf_counter() - t0
    report, result = evaluate(model, data, train_s, cfg, variant)
    return model, report, result


def report_csv(reports: list[MetricsReport]) -> str:
    keys = [
        "variant",
        "accuracy",
        "precision",
        "recall",
        "f1_score",
        "auc",
        "parameters_m",
        "flops_g",
        "inference_time_ms",
        "training_time_s",
        "threshold",
        "n_windows",
        "seed",
    ]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for r in reports:
        d = r.to_dict()
        w.writerow([repr(d[k]) if isinstance(d[k], float) else d[k] for k in keys])
    return buf.getvalue()


def roc_csv_text(scores, labels) -> str:
    thresholds, fpr, tpr = roc_curve(scores, labels)
    lines = ["threshold,fpr,tpr"]
    lines += [f"{t!r},{f!r},{p!r}" for t, f, p in zip(thresholds.tolist(), fpr.tolist(), tpr.tolist())]
    return "\n".join(lines) + "\n"


def histogram_csv_text(scores, labels, bins: int = 20) -> str:
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    edges = np.linspace(0.0, 1.0, bins + 1)
    n0, _ = np.histogram(scores[labels == 0], edges)
    n1, _ = np.histogram(scores[labels == 1], edges)
    lines = ["bin_lo,bin_hi,count_normal,count_anomaly"]
    lines += [f"{a!r},{b!r},{c},{d}" for a, b, c, d in zip(edges[:-1], edges[1:], n0, n1)]
    return "\n".join(lines) + "\n"


def write_report(report: MetricsReport, path, fmt: str = "json") -> None:
    if fmt == "csv":
        serialization.atomic_write_text(path, report_csv([report]))
    else:
        serialization.save(path, "metrics_report", report.to_dict())


def run_experiment(cfg: ExperimentConfig, return_scores: bool = False):
    """Preprocess, split, fit, classify the test split and write the report.

    With ``return_scores`` the test-window classification is returned too.
    """
    data = prepare(cfg)
    _, report, result = fit_and_evaluate(cfg, data)
    if cfg.output:
        write_report(report, cfg.output, cfg.report_format)
    if cfg.roc_csv and 0 < result.labels.sum() < len(result.labels):
        serialization.atomic_write_text(cfg.roc_csv, roc_csv_text(result.scores, result.labels))
    return (report, result) if return_scores else report


def variant_config(base: PipelineConfig, variant: str) -> PipelineConfig:
    cfg = copy.deepcopy(base)
    if variant == "IF-GAN":
        cfg.use_transformer = False
        cfg.forest_on_augmented = True
    elif variant == "IF-Transformer":
        cfg.gan.augment_ratio = 0.0
    elif variant == "GAN-Transformer":
        cfg.fusion.alpha = 0.0
        cfg.if_feature_channel = False
    elif variant != "Integration Model":
        raise ConfigError(f"unknown ablation variant {variant!r}")
    return cfg


def run_ablation(cfg: ExperimentConfig) -> list[MetricsReport]:
    """The four ablation variants on shared, identically seeded splits."""
    data = prepare(cfg)
    reports = []
    for variant in ABLATION_VARIANTS:
        vcfg = copy.deepcopy(cfg)
        vcfg.pipeline = variant_config(cfg.pipeline, variant)
        _, report, _ = fit_and_evaluate(vcfg, data, variant)
        reports.append(report)
    if cfg.output:
        if cfg.report_format == "csv":
            serialization.atomic_write_text(cfg.output, report_csv(reports))
        else:
            serialization.save(
                cfg.output,
                "ablation_report",
                {"reports": [r.to_dict() for r in reports], "table": format_ablation_table(reports)},
            )
    return reports
