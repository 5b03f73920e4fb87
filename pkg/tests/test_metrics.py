import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from netanomaly.metrics import (
    ConfusionCounts,
    MetricsReport,
    UndefinedMetricError,
    build_report,
    classification_metrics,
    confusion,
    dense_flops,
    dense_param_count,
    format_summary_row,
    format_ablation_table,
    pairwise_auc,
    resource_profile,
    roc_auc,
    roc_curve,
)

scored = st.integers(0, 38).flatmap(
    lambda n: st.tuples(
        st.lists(st.sampled_from([0.0, 0.25, 0.5, 1.0]) | st.floats(0, 1).map(lambda v: round(v, 6)),
                 min_size=n + 2, max_size=n + 2),
        st.lists(st.integers(0, 1), min_size=n, max_size=n).map(lambda y: [0, 1, *y]),
    )
)


def make_report(**kw) -> MetricsReport:
    base = dict(accuracy=0.9675, precision=0.95, recall=0.914, f1_score=0.9284, auc=0.941,
                parameters_m=0.1, flops_g=0.01, inference_time_ms=1.5, training_time_s=3.0)
    base.update(kw)
    return MetricsReport(**base)


def test_confusion_example():
    c = confusion([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert c == ConfusionCounts(tp=2, tn=1, fp=1, fn=1)


def test_metrics_example():
    m = classification_metrics(ConfusionCounts(tp=8, tn=85, fp=2, fn=5))
    assert m["accuracy"] == pytest.approx(0.93)
    assert m["precision"] == pytest.approx(0.8)
    assert m["recall"] == pytest.approx(8 / 13)
    assert m["f1"] == pytest.approx(2 * 0.8 * (8 / 13) / (0.8 + 8 / 13))


def test_metrics_zero_denominators():
    m = classification_metrics(ConfusionCounts(tn=10))
    assert m == {"accuracy": 1.0, "precision": 0.0, "recall": 0.0, "f1": 0.0}
    with pytest.raises(ValueError):
        classification_metrics(ConfusionCounts())
    with pytest.raises(ValueError):
        confusion([1], [1, 0])


def test_auc_examples():
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0
    assert roc_auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5
    assert roc_auc([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0]) == 0.75


def test_roc_curve_shape():
    t, fpr, tpr = roc_curve([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0])
    assert t[0] == np.inf
    np.testing.assert_array_equal(fpr, [0, 0, 0.5, 0.5, 1.0])
    np.testing.assert_array_equal(tpr, [0, 0.5, 0.5, 1.0, 1.0])


def test_auc_single_class_undefined():
    with pytest.raises(UndefinedMetricError):
        roc_auc([0.1, 0.2], [1, 1])
    r = build_report([0.1, 0.2], [0, 1], [0, 0], resource_profile())
    assert math.isnan(r.auc) and any("auc" in w for w in r.warnings)


@given(scored)
def test_auc_matches_pairwise_count(data):
    s, y = data
    assert roc_auc(s, y) == pytest.approx(pairwise_auc(s, y), abs=1e-12)


@given(scored)
def test_auc_of_negated_scores_complements(data):
    s, y = data
    assert roc_auc(s, y) + roc_auc(-np.asarray(s), y) == pytest.approx(1.0, abs=1e-12)


@given(scored)
def test_auc_invariant_under_monotone_transform(data):
    s, y = data
    assert roc_auc(np.exp(3 * np.asarray(s)), y) == pytest.approx(roc_auc(s, y), abs=1e-12)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
def test_f1_bounds_and_swap_symmetry(pairs):
    p, y = map(np.array, zip(*pairs))
    m = classification_metrics(confusion(p, y))
    assert 0.0 <= m["f1"] <= 1.0
    assert min(m["precision"], m["recall"]) - 1e-12 <= m["f1"] <= max(m["precision"], m["recall"]) + 1e-12 or m["f1"] == 0
    # swapping roles of predictions and labels swaps precision and recall
    s = classification_metrics(confusion(y, p))
    assert s["precision"] == m["recall"] and s["recall"] == m["precision"]
    assert s["f1"] == pytest.approx(m["f1"], abs=1e-12)


def test_dense_counts():
    assert dense_param_count([10, 20, 1]) == 241
    assert dense_flops([10, 20]) == 400
    assert dense_flops([10, 20, 1], rows=3) == 3 * (400 + 40)


def test_resource_profile_units():
    p = resource_profile(parameters=2_500_000, flops=3_000_000_000, inference_seconds=0.5,
                         inferences=100, training_seconds=12.0)
    assert p == {"parameters_m": 2.5, "flops_g": 3.0, "inference_time_ms": 5.0, "training_time_s": 12.0}


def test_summary_row_formatting():
    r = make_report(accuracy=0.9675, recall=0.9140, f1_score=0.9284, auc=0.9410)
    assert format_summary_row(r) == "Ours\t96.75\t91.40\t92.84\t94.10"


def test_ablation_table_has_header_and_rows():
    text = format_ablation_table([make_report(variant="IF-GAN"), make_report(variant="Integration Model")])
    lines = text.splitlines()
    assert lines[0].split("\t")[0] == "Model" and len(lines) == 3
    assert lines[1].startswith("IF-GAN\t96.75")


def test_report_roundtrip_and_timing_strip():
    r = build_report([0.9, 0.1, 0.8], [1, 0, 1], [1, 0, 0], resource_profile(10, 20, 0.1, 3, 1.0), seed=4)
    back = MetricsReport.from_dict(json.loads(json.dumps(r.to_dict())))
    assert back == r
    stripped = r.without_timings()
    assert "inference_time_ms" not in stripped and "training_time_s" not in stripped
    assert stripped["confusion"] == {"tp": 1, "tn": 1, "fp": 1, "fn": 0}
