"""Isolation forest -> GAN augmentation -> Transformer window scoring.

The forest screens every record and its score is appended to the record as an
extra feature channel.  The GAN, trained on normal training records, adds
synthetic normal records to the Transformer's training data.  A window's final
score blends the window's mean forest score with the Transformer's anomaly
probability::

    fused = alpha * mean_if_score + (1 - alpha) * p_anomaly
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import gan as gan_mod
from . import isolation_forest as iforest
from . import transformer as tfm
from .metrics import confusion
from .preprocessing import Dataset, InputError, Preprocessor

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class CalibrationError(ValueError):
    pass


class StageError(RuntimeError):
    """Wraps a failure with the pipeline stage it came from."""

    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage
        self.__cause__ = exc


@dataclass
class ForestSettings:
    num_trees: int = 100
    max_depth: int = 10
    subsample: int = 256


@dataclass
class GanSettings:
    noise_dim: int = 100
    iterations: int = 10000
    lr: float = 0.0002
    batch: int = 64
    augment_ratio: float = 0.5


@dataclass
class TransformerSettings:
    seq_len: int = 128
    heads: int = 4
    d_model: int = 32
    blocks: int = 2
    d_ff: int = 64
    epochs: int = 100
    patience: int = 10
    lr: float = 0.001
    batch_size: int = 4
    stride: int | None = None  # scoring stride; None means non-overlapping
    fit_stride: int | None = None  # training/early-stopping stride; None means seq_len // 4


@dataclass
class FusionSettings:
    alpha: float = 0.5
    threshold: float | None = None  # fixed threshold; None means calibrate on validation


@dataclass
class PipelineConfig:
    forest: ForestSettings = field(default_factory=ForestSettings)
    gan: GanSettings = field(default_factory=GanSettings)
    transformer: TransformerSettings = field(default_factory=TransformerSettings)
    fusion: FusionSettings = field(default_factory=FusionSettings)
    seed: int = 0
    # Ablation switches; the defaults give the full integrated model.
    use_transformer: bool = True
    if_feature_channel: bool = True
    forest_on_augmented: bool = False

    def __post_init__(self):
        if not 0.0 <= self.fusion.alpha <= 1.0:
            raise ConfigError(f"alpha {self.fusion.alpha} outside [0, 1]")
        if self.gan.augment_ratio < 0:
            raise ConfigError("augment_ratio must be >= 0")
        if self.transformer.d_model % self.transformer.heads:
            raise ConfigError(
                f"heads {self.transformer.heads} must divide d_model {self.transformer.d_model}"
            )

    @property
    def stride(self) -> int:
        return self.transformer.stride or self.transformer.seq_len

    @property
    def fit_stride(self) -> int:
        return self.transformer.fit_stride or max(1, self.transformer.seq_len // 4)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transformer"]["stride"] = self.stride
        d["transformer"]["fit_stride"] = self.fit_stride
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        subs = {
            "forest": ForestSettings,
            "gan": GanSettings,
            "transformer": TransformerSettings,
            "fusion": FusionSettings,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
        kwargs = {}
        for k, v in d.items():
            if k in subs:
                sub_known = {f.name for f in fields(subs[k])}
                bad = set(v) - sub_known
                if bad:
                    raise ConfigError(f"unknown {k} config keys: {sorted(bad)}")
                kwargs[k] = subs[k](**v)
            else:
                kwargs[k] = v
        return cls(**kwargs)


@dataclass
class PipelineModel:
    forest: iforest.IsoForest
    gan: gan_mod.GanModel | None
    transformer: tfm.TransformerModel | None
    threshold: float
    config: PipelineConfig
    feature_dim: int
    transforms: Preprocessor | None = None
    forest_comparisons: float = 0.0
    n_synthetic: int = 0
    warnings: list[str] = field(default_factory=list)

    def check_dimensions(self) -> None:
        if self.transforms is not None and self.transforms.output_dim != self.feature_dim:
            raise ConfigError("preprocessing output width does not match the forest")
        if self.forest.n_features != self.feature_dim:
            raise ConfigError("forest width does not match the feature width")
        if self.gan is not None and self.gan.feature_dim != self.feature_dim:
            raise ConfigError("GAN width does not match the feature width")
        if self.transformer is not None:
            extra = 1 if self.config.if_feature_channel else 0
            if self.transformer.config.feature_dim != self.feature_dim + extra:
                raise ConfigError("Transformer input width does not match features + score channel")

    @property
    def n_params(self) -> int:
        total = self.forest.node_count
        if self.gan is not None:
            total += self.gan.n_params
        if self.transformer is not None:
            total += self.transformer.n_params
        return total

    def flops_per_window(self) -> int:
        """Forest comparisons for every record of a window plus the Transformer forward pass."""
        flops = int(round(self.forest_comparisons * self.config.transformer.seq_len))
        if self.transformer is not None:
            flops += tfm.forward_flops(self.transformer)
        return flops

    def to_dict(self) -> dict:
        self.check_dimensions()
        return {
            "forest": self.forest.to_dict(),
            "gan": self.gan.to_dict() if self.gan is not None else None,
            "transformer": self.transformer.to_dict() if self.transformer is not None else None,
            "threshold": self.threshold,
            "config": self.config.to_dict(),
            "feature_dim": self.feature_dim,
            "transforms": self.transforms.to_dict() if self.transforms is not None else None,
            "forest_comparisons": self.forest_comparisons,
            "n_synthetic": self.n_synthetic,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineModel":
        model = cls(
            forest=iforest.IsoForest.from_dict(d["forest"]),
            gan=gan_mod.GanModel.from_dict(d["gan"]) if d.get("gan") else None,
            transformer=tfm.TransformerModel.from_dict(d["transformer"]) if d.get("transformer") else None,
            threshold=float(d["threshold"]),
            config=PipelineConfig.from_dict(d["config"]),
            feature_dim=int(d["feature_dim"]),
            transforms=Preprocessor.from_dict(d["transforms"]) if d.get("transforms") else None,
            forest_comparisons=float(d["forest_comparisons"]),
            n_synthetic=int(d["n_synthetic"]),
            warnings=list(d.get("warnings", [])),
        )
        model.check_dimensions()
        return model


def windowize(features: np.ndarray, labels, seq_len: int, stride: int | None = None):
    """Consecutive windows of ``seq_len`` rows; a window is anomalous if any member is.

    Returns (windows, window_labels, start_rows).  The ragged tail is dropped.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    stride = stride or seq_len
    if seq_len < 1 or stride < 1:
        raise InputError("seq_len and stride must be positive")
    n = features.shape[0]
    if n < seq_len:
        raise InputError(f"{n} rows cannot fill a window of {seq_len}")
    starts = np.arange(0, n - seq_len + 1, stride)
    windows = [features[s : s + seq_len] for s in starts]
    wlabels = np.array([int(labels[s : s + seq_len].any()) for s in starts], dtype=np.int64)
    return windows, wlabels, starts


def windowize_dataset(dataset: Dataset, seq_len: int, stride: int | None = None):
    d = dataset.chronological()
    return windowize(d.features, d.labels, seq_len, stride)


def blend(alpha: float, if_mean, p_anomaly):
    return alpha * np.asarray(if_mean) + (1.0 - alpha) * np.asarray(p_anomaly)


def calibrate_threshold(scores, labels) -> float:
    """Threshold maximizing F1 over midpoints of adjacent distinct scores.

    Prediction rule is ``score > threshold``.  Ties go to the larger threshold.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if not (np.any(y == 1) and np.any(y == 0)):
        raise CalibrationError("calibration needs both classes")
    distinct = np.unique(s)
    if distinct.size < 2:
        raise CalibrationError("all scores identical; no threshold separates them")
    candidates = (distinct[:-1] + distinct[1:]) / 2.0
    best_t, best_f1 = None, -1.0
    for t in candidates:
        c = confusion((s > t).astype(int), y)
        denom = 2 * c.tp + c.fp + c.fn
        f1 = 2 * c.tp / denom if denom else 0.0
        if f1 >= best_f1:
            best_t, best_f1 = float(t), f1
    return best_t


def calibrate_or_default(scores, labels, default: float = 0.5) -> tuple[float, list[str]]:
    try:
        return calibrate_threshold(scores, labels), []
    except CalibrationError as exc:
        msg = f"threshold calibration degenerate ({exc}); using {default}"
        log.warning(msg)
        return default, [msg]


def _with_score_channel(features: np.ndarray, scores: np.ndarray) -> np.ndarray:
    return np.hstack([features, scores[:, None]])


@dataclass
class WindowScores:
    fused: np.ndarray
    if_mean: np.ndarray
    p_anomaly: np.ndarray | None
    labels: np.ndarray
    starts: np.ndarray


def score_windows(model: PipelineModel, features: np.ndarray, labels) -> WindowScores:
    """Score every window of already-transformed, chronologically ordered rows."""
    cfg = model.config
    if features.shape[1] != model.feature_dim:
        raise InputError(f"expected {model.feature_dim} features, got {features.shape[1]}")
    rec_scores = iforest.score_samples(model.forest, features)
    windows, wlabels, starts = windowize(features, labels, cfg.transformer.seq_len, cfg.stride)
    if_mean = np.array([rec_scores[s : s + cfg.transformer.seq_len].mean() for s in starts])
    if model.transformer is None:
        return WindowScores(if_mean, if_mean, None, wlabels, starts)
    tin = _with_score_channel(features, rec_scores) if cfg.if_feature_channel else features
    twins = [tin[s : s + cfg.transformer.seq_len] for s in starts]
    p = tfm.anomaly_probability(model.transformer, twins)
    return WindowScores(blend(cfg.fusion.alpha, if_mean, p), if_mean, p, wlabels, starts)


def fused_score(model: PipelineModel, window) -> float:
    window = np.asarray(window, dtype=np.float64)
    seq_len = model.config.transformer.seq_len
    if window.ndim != 2 or window.shape[0] != seq_len:
        raise InputError(f"window must have {seq_len} rows, got shape {window.shape}")
    return float(score_windows(model, window, np.zeros(seq_len)).fused[0])


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
        raise StageError(name, exc) from exc


def augment_with_gan(train: Dataset, cfg: PipelineConfig) -> tuple[Dataset, gan_mod.GanModel | None, int]:
    """Train the GAN on normal training rows and append synthetic normal rows.

    Synthetic rows get row indices after the last real row, so they sit at the
    chronological end of the training stream.
    """
    ratio = cfg.gan.augment_ratio
    normal = train.features[train.labels == 0]
    if normal.shape[0] == 0:
        raise ConfigError("training split has no normal records")
    n_syn = int(round(ratio * normal.shape[0]))
    if n_syn == 0:
        return train, None, 0
    gcfg = gan_mod.GanConfig(
        noise_dim=cfg.gan.noise_dim,
        iterations=cfg.gan.iterations,
        lr=cfg.gan.lr,
        batch=min(cfg.gan.batch, normal.shape[0]),
        seed=cfg.seed,
    )
    model = _stage("gan", gan_mod.train_gan, normal, gcfg)
    synthetic = gan_mod.generate_synthetic(model, n_syn, cfg.seed + 1)
    start = int(train.row_index.max()) + 1
    augmented = Dataset(
        np.vstack([train.features, synthetic]),
        np.r_[train.labels, np.zeros(n_syn, dtype=np.int64)],
        np.r_[train.row_index, np.arange(start, start + n_syn)],
        list(train.numeric_names),
        provenance=train.provenance + f" + {n_syn} GAN rows",
    )
    return augmented, model, n_syn


def fit_pipeline(
    train: Dataset,
    val: Dataset,
    config: PipelineConfig | None = None,
    transforms: Preprocessor | None = None,
) -> PipelineModel:
    """Fit all stages on preprocessed, dimension-consistent splits."""
    cfg = config or PipelineConfig()
    train = train.chronological()
    val = val.chronological()
    if train.dim != val.dim:
        raise InputError(f"train has {train.dim} features, validation has {val.dim}")
    if not np.any(train.labels == 0):
        raise ConfigError("training split has no normal records")
    warnings: list[str] = []

    augmented, gan_model, n_syn = augment_with_gan(train, cfg)

    forest_data = augmented.features if cfg.forest_on_augmented else train.features
    forest = _stage(
        "forest",
        iforest.build_forest,
        forest_data,
        cfg.forest.num_trees,
        min(cfg.forest.subsample, forest_data.shape[0]),
        cfg.forest.max_depth,
        cfg.seed,
    )
    comparisons = iforest.mean_comparisons(forest, train.features)

    transformer = None
    tcfg = cfg.transformer
    if cfg.use_transformer:
        train_scores = iforest.score_samples(forest, augmented.features)
        val_scores = iforest.score_samples(forest, val.features)
        if cfg.if_feature_channel:
            tr_x = _with_score_channel(augmented.features, train_scores)
            va_x = _with_score_channel(val.features, val_scores)
        else:
            tr_x, va_x = augmented.features, val.features
        tr_w, tr_y, _ = _stage("windowize", windowize, tr_x, augmented.labels, tcfg.seq_len, cfg.fit_stride)
        va_w, va_y, _ = _stage("windowize", windowize, va_x, val.labels, tcfg.seq_len, cfg.fit_stride)
        init = tfm.init_transformer(
            tfm.TransformerConfig(
                feature_dim=tr_x.shape[1],
                seq_len=tcfg.seq_len,
                d_model=tcfg.d_model,
                num_heads=tcfg.heads,
                num_blocks=tcfg.blocks,
                d_ff=tcfg.d_ff,
            ),
            cfg.seed,
        )
        transformer = _stage(
            "transformer",
            tfm.train_classifier,
            init,
            tr_w,
            tr_y,
            tfm.TrainConfig(
                epochs=tcfg.epochs,
                lr=tcfg.lr,
                patience=tcfg.patience,
                batch_size=tcfg.batch_size,
                seed=cfg.seed,
            ),
            va_w,
            va_y,
        )
        warnings.extend(transformer.warnings)

    model = PipelineModel(
        forest=forest,
        gan=gan_model,
        transformer=transformer,
        threshold=0.5,
        config=cfg,
        feature_dim=train.dim,
        transforms=transforms,
        forest_comparisons=comparisons,
        n_synthetic=n_syn,
        warnings=warnings,
    )
    if cfg.fusion.threshold is not None:
        model.threshold = float(cfg.fusion.threshold)
    else:
        ws = _stage("calibrate", score_windows, model, val.features, val.labels)
        model.threshold, w = calibrate_or_default(ws.fused, ws.labels)
        model.warnings.extend(w)
    model.check_dimensions()
    return model


@dataclass
class Classification:
    bits: np.ndarray
    scores: np.ndarray
    labels: np.ndarray
    starts: np.ndarray
    if_mean: np.ndarray
    p_anomaly: np.ndarray | None

    def confusion(self):
        return confusion(self.bits, self.labels)


def classify(model: PipelineModel, dataset: Dataset, transformed: bool = False) -> Classification:
    """Window decisions for ``dataset``.

    Raw datasets go through the model's stored transforms first; pass
    ``transformed=True`` for rows that are already in model space.
    """
    d = dataset.chronological()
    if not transformed and model.transforms is not None:
        try:
            d = model.transforms.transform(d)
        except ValueError as exc:
            raise InputError(f"dataset does not fit the stored transforms: {exc}") from exc
    ws = score_windows(model, d.features, d.labels)
    bits = (ws.fused > model.threshold).astype(np.int64)
    return Classification(bits, ws.fused, ws.labels, ws.starts, ws.if_mean, ws.p_anomaly)
