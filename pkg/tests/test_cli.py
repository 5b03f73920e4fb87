import csv
import json

import pytest

from netanomaly import serialization
from netanomaly.cli import main
from netanomaly.metrics import MetricsReport

FAST = ["--trees", "10", "--gan-iters", "20", "--epochs", "2", "--seq-len", "8", "--heads", "2"]
REPORT_KEYS = {
    "accuracy", "precision", "recall", "f1_score", "auc",
    "parameters_m", "flops_g", "inference_time_ms", "training_time_s",
}


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({
        "seed": 5,
        "synthetic": {"n_normal": 300, "n_anomaly": 40, "dims": 3, "seed": 5},
        "pipeline": {"transformer": {"d_model": 8, "d_ff": 8, "blocks": 1}, "gan": {"noise_dim": 4}},
    }))
    return str(path)


def leftovers(directory):
    return [p.name for p in directory.iterdir() if p.name.endswith(".tmp")]


def test_synth_fixture_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["synth", "--out", str(a)]) == 0
    assert main(["synth", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.DictReader(a.open()))
    assert len(rows) == 2100
    assert sum(int(r["label"]) for r in rows) == 100
    assert len(rows[0]) == 1 + 8 + 1


def test_eval_writes_complete_report(tmp_path, small_cfg):
    out = tmp_path / "r.json"
    assert main(["eval", "--config", small_cfg, "--out", str(out), *FAST]) == 0
    doc = json.loads(out.read_text())
    assert doc["schema_version"] == serialization.SCHEMA_VERSION and doc["kind"] == "metrics_report"
    assert REPORT_KEYS <= set(doc["payload"])
    assert doc["payload"]["seed"] == 5
    assert leftovers(tmp_path) == []


def test_eval_deterministic_apart_from_timings(tmp_path, small_cfg):
    reports = []
    out = tmp_path / "r.json"
    for _ in range(2):
        main(["eval", "--config", small_cfg, "--out", str(out), *FAST])
        reports.append(MetricsReport.from_dict(serialization.load(out, "metrics_report")))
    assert reports[0].without_timings() == reports[1].without_timings()


def test_eval_csv_roc_and_histogram(tmp_path, small_cfg):
    out, roc, hist = tmp_path / "r.csv", tmp_path / "roc.csv", tmp_path / "hist.csv"
    args = ["eval", "--config", small_cfg, "--out", str(out), "--format", "csv",
            "--roc-csv", str(roc), "--hist-csv", str(hist), *FAST]
    assert main(args) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 1 and REPORT_KEYS <= set(rows[0])
    assert roc.read_text().splitlines()[0] == "threshold,fpr,tpr"
    assert hist.read_text().splitlines()[0] == "bin_lo,bin_hi,count_normal,count_anomaly"


def test_train_then_score(tmp_path, small_cfg):
    model, data, scores = tmp_path / "m.json", tmp_path / "d.csv", tmp_path / "s.csv"
    assert main(["train", "--config", small_cfg, "--out", str(model), *FAST]) == 0
    assert main(["synth", "--out", str(data), "--n-normal", "60", "--n-anomaly", "4", "--dims", "3"]) == 0
    assert main(["score", "--model", str(model), "--dataset", str(data), "--out", str(scores)]) == 0
    lines = scores.read_text().splitlines()
    assert lines[0] == "window_start,score,prediction,label"
    assert len(lines) == 1 + 64 // 8


def test_preprocess_roundtrip(tmp_path):
    raw = tmp_path / "raw.csv"
    raw.write_text("1,tcp,attack\n2,udp,normal\nbad,udp,normal\n?,tcp,normal\n")
    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps({
        "columns": [{"name": "a", "kind": "numeric"}, {"name": "p", "kind": "categorical"},
                    {"name": "y", "kind": "label"}],
        "positive_labels": ["attack"],
    }))
    out = tmp_path / "clean.csv"
    assert main(["preprocess", "--dataset", str(raw), "--schema", str(schema), "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows == [["a", "p", "label"], ["1.0", "tcp", "1"], ["2.0", "udp", "0"], ["1.5", "tcp", "0"]]
    assert json.loads((tmp_path / "clean.schema.json").read_text())["has_header"] is True


def test_ablate_four_rows(tmp_path, small_cfg, capsys):
    out = tmp_path / "ab.json"
    assert main(["ablate", "--config", small_cfg, "--out", str(out), *FAST]) == 0
    table = capsys.readouterr().out.strip().splitlines()
    assert [l.split("\t")[0] for l in table] == [
        "Model", "IF-GAN", "IF-Transformer", "GAN-Transformer", "Integration Model"]
    doc = serialization.load(out, "ablation_report")
    assert len(doc["reports"]) == 4


def test_missing_dataset_exits_nonzero_without_output(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["eval", "--dataset", str(tmp_path / "nope.csv"), "--out", str(out)]) == 1
    assert "[load]" in capsys.readouterr().err
    assert not out.exists() and leftovers(tmp_path) == []


def test_bad_config_and_model_exit_nonzero(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synthetic": {}, "bogus": 1}))
    assert main(["eval", "--config", str(cfg)]) == 1
    model = tmp_path / "m.json"
    model.write_text(json.dumps({"schema_version": "9.0", "kind": "pipeline_model", "payload": {}}))
    assert main(["score", "--model", str(model), "--dataset", str(cfg), "--out", str(tmp_path / "s.csv")]) == 1
    assert "schema_version" in capsys.readouterr().err


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--format", "xml"])
    assert exc.value.code == 2
