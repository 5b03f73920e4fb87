import itertools
import json

import numpy as np
import pytest

from netanomaly import serialization
from netanomaly.isolation_forest import score_samples
from netanomaly.metrics import confusion
from netanomaly.pipeline import (
    ConfigError,
    PipelineConfig,
    PipelineModel,
    StageError,
    augment_with_gan,
    blend,
    calibrate_or_default,
    calibrate_threshold,
    classify,
    fit_pipeline,
    fused_score,
    score_windows,
    windowize,
)
from netanomaly.preprocessing import InputError, Preprocessor, split_dataset
from netanomaly.synthetic import SyntheticSpec, synth_dataset


def small_config(**kw) -> PipelineConfig:
    cfg = PipelineConfig(seed=3)
    cfg.forest.num_trees = 10
    cfg.forest.subsample = 64
    cfg.gan.iterations = 20
    cfg.gan.noise_dim = 4
    cfg.transformer.seq_len = 8
    cfg.transformer.d_model = 8
    cfg.transformer.heads = 2
    cfg.transformer.blocks = 1
    cfg.transformer.d_ff = 8
    cfg.transformer.epochs = 3
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


@pytest.fixture(scope="module")
def splits():
    ds = synth_dataset(SyntheticSpec(n_normal=300, n_anomaly=20, dims=3, seed=1))
    s = split_dataset(ds, 0.7, 0.3, seed=1)
    prep = Preprocessor.fit(s.train)
    return prep.transform(s.train), prep.transform(s.val), prep.transform(s.test), prep


@pytest.fixture(scope="module")
def fitted(splits):
    train, val, _, prep = splits
    return fit_pipeline(train, val, small_config(), prep)


def as_json(model: PipelineModel) -> str:
    return json.dumps(model.to_dict(), sort_keys=True)


# windows and fusion

def test_windowize_examples():
    x = np.arange(20.0).reshape(10, 2)
    y = np.array([0, 0, 0, 0, 0, 1, 0, 0, 0, 0])
    w, wl, starts = windowize(x, y, 4)
    np.testing.assert_array_equal(starts, [0, 4])
    np.testing.assert_array_equal(wl, [0, 1])
    np.testing.assert_array_equal(w[1], x[4:8])
    _, wl, starts = windowize(x, y, 4, stride=2)
    np.testing.assert_array_equal(starts, [0, 2, 4, 6])
    np.testing.assert_array_equal(wl, [0, 1, 1, 0])
    with pytest.raises(InputError):
        windowize(x, y, 11)


def test_blend_examples():
    assert blend(1.0, 0.8, 0.6) == 0.8
    assert blend(0.0, 0.8, 0.6) == 0.6
    assert blend(0.5, 0.8, 0.6) == pytest.approx(0.7)


def test_fused_score_alpha_extremes(fitted, splits):
    _, val, _, _ = splits
    window = val.features[:8]
    rec = score_samples(fitted.forest, window)
    only_if = PipelineModel(**{**fitted.__dict__, "config": small_config()})
    only_if.config.fusion.alpha = 1.0
    assert fused_score(only_if, window) == pytest.approx(rec.mean(), abs=1e-12)
    only_t = PipelineModel(**{**fitted.__dict__, "config": small_config()})
    only_t.config.fusion.alpha = 0.0
    tin = np.hstack([window, rec[:, None]])
    from netanomaly.transformer import anomaly_probability

    assert fused_score(only_t, window) == pytest.approx(anomaly_probability(fitted.transformer, [tin])[0], abs=1e-12)
    with pytest.raises(InputError):
        fused_score(fitted, val.features[:5])


# threshold calibration

def test_calibrate_example():
    # midpoints .225 / .375 / .6 give F1 .8 / .5 / .667
    assert calibrate_threshold([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.225)


def brute_force_threshold(s, y):
    d = np.unique(s)
    best = (-1.0, None)
    for t in (d[:-1] + d[1:]) / 2:
        c = confusion((s > t).astype(int), y)
        f1 = 2 * c.tp / (2 * c.tp + c.fp + c.fn) if c.tp + c.fp + c.fn else 0.0
        best = max(best, (f1, t))  # equal F1 -> larger t wins
    return best[1]


def test_calibrate_matches_brute_force_on_six_points():
    rng = np.random.default_rng(0)
    grid = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    for labels in itertools.product([0, 1], repeat=6):
        y = np.array(labels)
        if 0 < y.sum() < 6:
            s = rng.permutation(grid)
            assert calibrate_threshold(s, y) == pytest.approx(brute_force_threshold(s, y), abs=1e-15)


def test_calibrate_degenerate_falls_back():
    t, w = calibrate_or_default([0.2, 0.4], [0, 0])
    assert t == 0.5 and w
    t, w = calibrate_or_default([0.3, 0.3], [0, 1])
    assert t == 0.5 and w


# GAN augmentation

def test_augmentation_count_and_labels(splits):
    train = splits[0]
    cfg = small_config()
    aug, gan, n = augment_with_gan(train, cfg)
    n_normal = int((train.labels == 0).sum())
    assert n == round(0.5 * n_normal) and gan is not None
    assert len(aug) == len(train) + n
    np.testing.assert_array_equal(aug.labels[len(train):], 0)
    assert aug.row_index[len(train):].min() > train.row_index.max()


def test_zero_ratio_skips_gan_and_leaves_stages_unchanged(splits):
    train, val, _, prep = splits
    a = small_config()
    a.gan.augment_ratio = 0.0
    b = small_config()
    b.gan.augment_ratio = 0.0
    b.gan.iterations = 77
    ma, mb = fit_pipeline(train, val, a, prep), fit_pipeline(train, val, b, prep)
    assert ma.gan is None and ma.n_synthetic == 0
    assert json.dumps(ma.forest.to_dict()) == json.dumps(mb.forest.to_dict())
    assert json.dumps(ma.transformer.to_dict()) == json.dumps(mb.transformer.to_dict())


def test_forest_ignores_augmentation_by_default(splits, fitted):
    train, val, _, prep = splits
    cfg = small_config()
    cfg.gan.augment_ratio = 0.0
    m = fit_pipeline(train, val, cfg, prep)
    assert json.dumps(m.forest.to_dict()) == json.dumps(fitted.forest.to_dict())


# model behaviour

def test_fit_is_deterministic(splits, fitted):
    train, val, _, prep = splits
    assert as_json(fit_pipeline(train, val, small_config(), prep)) == as_json(fitted)


def test_roundtrip_preserves_decisions(fitted, splits, tmp_path):
    test = splits[2]
    path = tmp_path / "m.json"
    serialization.save(path, "pipeline_model", fitted.to_dict())
    back = PipelineModel.from_dict(serialization.load(path, "pipeline_model"))
    a, b = classify(fitted, test, True), classify(back, test, True)
    np.testing.assert_array_equal(a.scores, b.scores)
    np.testing.assert_array_equal(a.bits, b.bits)


def test_classify_applies_threshold(fitted, splits):
    test = splits[2]
    res = classify(fitted, test, True)
    np.testing.assert_array_equal(res.bits, (res.scores > fitted.threshold).astype(int))
    hi = PipelineModel(**{**fitted.__dict__, "threshold": 2.0})
    lo = PipelineModel(**{**fitted.__dict__, "threshold": 0.0})
    assert classify(hi, test, True).bits.sum() == 0
    assert classify(lo, test, True).bits.all()


def test_classify_reproduces_calibration_counts(fitted, splits):
    val = splits[1]
    ws = score_windows(fitted, val.chronological().features, val.chronological().labels)
    expected = confusion((ws.fused > fitted.threshold).astype(int), ws.labels)
    assert classify(fitted, val, True).confusion() == expected
    assert fitted.threshold == pytest.approx(brute_force_threshold(ws.fused, ws.labels))


def test_classify_raw_uses_stored_transforms(fitted, splits):
    ds = synth_dataset(SyntheticSpec(n_normal=300, n_anomaly=20, dims=3, seed=1))
    raw_test = split_dataset(ds, 0.7, 0.3, seed=1).test
    np.testing.assert_array_equal(classify(fitted, raw_test).scores, classify(fitted, splits[2], True).scores)


def test_fixed_threshold_honoured(splits):
    train, val, _, prep = splits
    cfg = small_config()
    cfg.fusion.threshold = 0.42
    assert fit_pipeline(train, val, cfg, prep).threshold == 0.42


def test_dimension_mismatch_rejected(fitted):
    d = fitted.to_dict()
    d["feature_dim"] = fitted.feature_dim + 1
    with pytest.raises(ConfigError):
        PipelineModel.from_dict(d)
    with pytest.raises(InputError):
        score_windows(fitted, np.zeros((16, fitted.feature_dim + 1)), np.zeros(16))


def test_version_and_kind_rejected(fitted, tmp_path):
    doc = serialization.envelope("pipeline_model", fitted.to_dict())
    doc["schema_version"] = "2.0"
    with pytest.raises(serialization.VersionError):
        serialization.open_envelope(doc)
    with pytest.raises(serialization.VersionError):
        serialization.open_envelope(serialization.envelope("metrics_report", {}), "pipeline_model")


def test_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"fusion": {"alpha": 1.5}})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"transformer": {"heads": 3}})
    cfg = PipelineConfig()
    assert PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))).to_dict() == cfg.to_dict()


def test_stage_errors_are_tagged(splits):
    train, val, _, prep = splits
    cfg = small_config()
    cfg.transformer.seq_len = 10_000
    with pytest.raises(StageError, match=r"\[windowize\]"):
        fit_pipeline(train, val, cfg, prep)
