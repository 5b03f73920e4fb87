"""Command-line entry point: ``netanomaly <subcommand> ...``.

Subcommands: synth, preprocess, train, score, eval, ablate.  Exit status is 0
only when the requested artifact was written completely; stage failures exit
with status 1 and a ``[stage] message`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import serialization
from .experiment import (
    ExperimentConfig,
    apply_desk_scale,
    fit_and_evaluate,
    histogram_csv_text,
    prepare,
    resolve_schema,
    run_ablation,
    run_experiment,
)
from .metrics import format_summary_row, format_ablation_table
from .pipeline import PipelineModel, StageError, classify
from .preprocessing import parse_dataset, read_canonical_csv, write_canonical_csv
from .synthetic import SyntheticSpec, synth_dataset

log = logging.getLogger("netanomaly")


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--dataset", help="CSV file; canonical layout unless --schema is given")
    p.add_argument("--schema", help="schema JSON path or bundled schema name (e.g. nsl_kdd)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output path")
    p.add_argument("--format", choices=["json", "csv"], dest="report_format")
    p.add_argument("--desk", action="store_true", help="desk-scale overrides (2k GAN iters, 20 epochs, seq_len 32)")
    p.add_argument("--trees", type=int)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--subsample", type=int)
    p.add_argument("--seq-len", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--gan-iters", type=int)
    p.add_argument("--augment-ratio", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--pca", type=int, dest="pca_k")
    p.add_argument("--normalization", choices=["minmax", "zscore"])


def build_config(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
    if args.dataset:
        raw["dataset_path"] = args.dataset
        raw.pop("synthetic", None)
        if args.schema:
            raw["schema"] = args.schema
    elif "dataset_path" not in raw and "synthetic" not in raw:
        raw["synthetic"] = SyntheticSpec().to_dict()
    if args.seed is not None:
        raw["seed"] = args.seed
    if getattr(args, "out", None) and args.command in ("eval", "ablate"):
        raw["output"] = args.out
    if getattr(args, "report_format", None):
        raw["report_format"] = args.report_format
    cfg = ExperimentConfig.from_dict(raw)
    pc = cfg.pipeline
    if args.desk:
        apply_desk_scale(pc)
    overrides = [
        ("trees", pc.forest, "num_trees"),
        ("max_depth", pc.forest, "max_depth"),
        ("subsample", pc.forest, "subsample"),
        ("seq_len", pc.transformer, "seq_len"),
        ("heads", pc.transformer, "heads"),
        ("gan_iters", pc.gan, "iterations"),
        ("augment_ratio", pc.gan, "augment_ratio"),
        ("epochs", pc.transformer, "epochs"),
        ("alpha", pc.fusion, "alpha"),
        ("threshold", pc.fusion, "threshold"),
        ("pca_k", cfg.preprocess, "pca_k"),
        ("normalization", cfg.preprocess, "normalization"),
    ]
    for arg, target, attr in overrides:
        value = getattr(args, arg, None)
        if value is not None:
            setattr(target, attr, value)
    pc.__post_init__()
    return cfg


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n_normal=args.n_normal,
        n_anomaly=args.n_anomaly,
        dims=args.dims,
        cluster_stddev=args.stddev,
        anomaly_mode=args.mode,
        shift_magnitude=args.shift,
        seed=args.seed,
    )
    write_canonical_csv(synth_dataset(spec), args.out)
    print(f"wrote {spec.n_normal + spec.n_anomaly} records to {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    """Clean a raw file against its schema and cache it with a matching schema."""
    schema = resolve_schema(args.schema)
    dataset, report = parse_dataset(args.dataset, schema)
    out = Path(args.out)
    cols = [{"name": n, "kind": "numeric"} for n in dataset.numeric_names]
    cols += [{"name": n, "kind": "categorical"} for n in dataset.categorical_names]
    cols.append({"name": "label", "kind": "label"})
    derived = {
        "name": f"{schema.name}_clean",
        "has_header": True,
        "columns": cols,
        "positive_labels": ["1"],
    }
    tmp = out.with_name(f".{out.name}.tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([c["name"] for c in cols])
        for num, cat, y in zip(dataset.numeric, dataset.categorical, dataset.labels):
            w.writerow([*(repr(float(v)) for v in num), *cat, int(y)])
    tmp.replace(out)
    serialization.atomic_write_text(out.with_suffix(".schema.json"), json.dumps(derived, indent=1))
    print(
        f"kept {report.rows_kept}/{report.rows_read} rows; excluded {report.excluded_reasons}; "
        f"imputed {report.imputed}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = build_config(args)
    data = prepare(cfg)
    model, report, _ = fit_and_evaluate(cfg, data)
    serialization.save(args.out, "pipeline_model", model.to_dict())
    print(format_summary_row(report))
    return 0


def cmd_score(args) -> int:
    model = PipelineModel.from_dict(serialization.load(args.model, "pipeline_model"))
    if args.schema:
        dataset, _ = parse_dataset(args.dataset, resolve_schema(args.schema))
    else:
        dataset = read_canonical_csv(args.dataset)
    result = classify(model, dataset)
    lines = ["window_start,score,prediction,label"]
    for s, sc, b, y in zip(result.starts, result.scores, result.bits, result.labels):
        lines.append(f"{int(s)},{float(sc)!r},{int(b)},{int(y)}")
    serialization.atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"scored {len(result.bits)} windows, {int(result.bits.sum())} flagged")
    return 0


def cmd_eval(args) -> int:
    cfg = build_config(args)
    if args.roc_csv:
        cfg.roc_csv = args.roc_csv
    report, result = run_experiment(cfg, return_scores=True)
    if args.hist_csv:
        serialization.atomic_write_text(args.hist_csv, histogram_csv_text(result.scores, result.labels))
    print(format_summary_row(report))
    return 0


def cmd_ablate(args) -> int:
    cfg = build_config(args)
    reports = run_ablation(cfg)
    print(format_ablation_table(reports))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netanomaly", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic labeled dataset (canonical CSV)")
    p.add_argument("--out", required=True)
    p.add_argument("--n-normal", type=int, default=2000)
    p.add_argument("--n-anomaly", type=int, default=100)
    p.add_argument("--dims", type=int, default=8)
    p.add_argument("--stddev", type=float, default=1.0)
    p.add_argument("--mode", default="shifted-mean", choices=["shifted-mean", "uniform-box", "feature-spike"])
    p.add_argument("--shift", type=float, default=6.0)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="clean a raw CSV against a schema")
    p.add_argument("--dataset", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="fit the pipeline and save the model JSON")
    _add_data_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score windows of a dataset with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--schema")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="full experiment; writes a metrics report")
    _add_data_args(p)
    p.add_argument("--roc-csv", help="write ROC points (threshold,fpr,tpr)")
    p.add_argument("--hist-csv", help="write score histograms per class")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the four ablation variants")
    _add_data_args(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "train" and not args.out:
        parser.error("train needs --out")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
