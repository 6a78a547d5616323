"""Report serialization to CSV and JSON with deterministic file names.

File layout for a report with stem ``{method}_{arch}``:

``{stem}_{seed}.csv``          SUMMARY_COLUMNS, one row
``{stem}_{seed}_curve.csv``    CURVE_COLUMNS, one row per epoch
``{stem}_{seed}_fgsm.csv``     FGSM_COLUMNS (long format; asr left empty)
``{stem}_{seed}_backdoor.csv`` BACKDOOR_COLUMNS, plan-averaged per rate
``{stem}_{seed}_fisher.csv``   FISHER_COLUMNS (t empty for the full-length profile)
``{stem}_{seed}_cka.csv``      square layer x layer matrix, when computed
``{stem}_mean*.csv``           the same summaries over seeds, seed = ``mean``
``{stem}_{seed}.json``         one seed's results
``{stem}_mean.json``           the whole report, read back by :func:`load_report`
``{stem}_timing.json``         wall times; excluded from determinism checks
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Optional

from .runner import ExperimentReport, SeedResult

SUMMARY_COLUMNS = (
    "method",
    "architecture",
    "seed",
    "initial_accuracy",
    "train_accuracy",
    "test_accuracy",
    "final_loss",
    "peak_learning_state",
)
CURVE_COLUMNS = ("method", "architecture", "seed", "epoch", "loss", "train_accuracy")
FGSM_COLUMNS = ("method", "architecture", "epsilon", "accuracy", "asr", "seed")
BACKDOOR_COLUMNS = ("method", "architecture", "rate", "accuracy", "asr", "seed")
FISHER_COLUMNS = ("method", "architecture", "seed", "t", "group", "value")
FORMATS = ("csv", "json")


def report_stem(report: ExperimentReport) -> str:
    return f"{report.method}_{report.architecture}"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _write_csv(path: Path, columns, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])
    return path


def _backdoor_by_rate(rows: list[dict]) -> list[dict]:
    out = []
    for rate in sorted({r["rate"] for r in rows}):
        sel = [r for r in rows if r["rate"] == rate]
        out.append(
            {
                "rate": rate,
                "accuracy": sum(r["accuracy"] for r in sel) / len(sel),
                "asr": sum(r["asr"] for r in sel) / len(sel),
            }
        )
    return out


def _seed_csvs(report: ExperimentReport, s: SeedResult, out: Path) -> list[Path]:
    stem = f"{report_stem(report)}_{s.seed}"
    base = {"method": report.method, "architecture": report.architecture, "seed": s.seed}
    summary = dict(
        base,
        initial_accuracy=s.initial_accuracy,
        train_accuracy=s.train_accuracy,
        test_accuracy=s.test_accuracy,
        final_loss=s.loss_curve[-1] if s.loss_curve else None,
        peak_learning_state=s.peak_learning_state,
    )
    paths = [
        _write_csv(out / f"{stem}.csv", SUMMARY_COLUMNS, [summary]),
        _write_csv(
            out / f"{stem}_curve.csv",
            CURVE_COLUMNS,
            [dict(base, epoch=i + 1, loss=l, train_accuracy=a) for i, (l, a) in enumerate(zip(s.loss_curve, s.accuracy_curve))],
        ),
        _write_csv(out / f"{stem}_fgsm.csv", FGSM_COLUMNS, [dict(base, **r) for r in s.fgsm]),
        _write_csv(out / f"{stem}_backdoor.csv", BACKDOOR_COLUMNS, [dict(base, **r) for r in _backdoor_by_rate(s.backdoor)]),
    ]
    fisher_rows = []
    if s.fisher:
        fisher_rows += [dict(base, t=None, group=g, value=v) for g, v in s.fisher.items()]
    for t, prof in sorted(s.fisher_over_time.items()):
        fisher_rows += [dict(base, t=t, group=g, value=v) for g, v in prof.items()]
    paths.append(_write_csv(out / f"{stem}_fisher.csv", FISHER_COLUMNS, fisher_rows))
    if s.cka is not None:
        paths.append(write_square_csv(out / f"{stem}_cka.csv", s.cka))
    return paths


def write_square_csv(path, matrix, labels: Optional[list[str]] = None) -> Path:
    n_cols = len(matrix[0]) if matrix else 0
    labels = labels or [str(i) for i in range(max(len(matrix), n_cols))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", *labels[:n_cols]])
        for i, row in enumerate(matrix):
            w.writerow([labels[i], *[_cell(None if v is None else float(v)) for v in row]])
    return Path(path)


def read_square_csv(path) -> list[list[Optional[float]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [[float(v) if v != "" else None for v in row[1:]] for row in rows[1:]]


def _aggregate_csvs(report: ExperimentReport, out: Path) -> list[Path]:
    stem = f"{report_stem(report)}_mean"
    agg = report.aggregate
    base = {"method": report.method, "architecture": report.architecture, "seed": "mean"}
    rows = []
    if report.seeds:
        finals = [s.loss_curve[-1] for s in report.seeds if s.loss_curve]
        rows.append(
            dict(
                base,
                initial_accuracy=agg["initial_accuracy"],
                train_accuracy=agg["train_accuracy"],
                test_accuracy=agg["test_accuracy"],
                final_loss=sum(finals) / len(finals) if finals else None,
                peak_learning_state=agg["peak_learning_state"],
            )
        )
    return [
        _write_csv(out / f"{stem}.csv", SUMMARY_COLUMNS, rows),
        _write_csv(out / f"{stem}_fgsm.csv", FGSM_COLUMNS, [dict(base, **r) for r in agg["fgsm"]]),
        _write_csv(out / f"{stem}_backdoor.csv", BACKDOOR_COLUMNS, [dict(base, **r) for r in agg["backdoor"]]),
    ]


def _dump_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def emit_report(report: ExperimentReport, format: str, out_dir, figures: bool = False) -> list[Path]:
    """Write the report as ``format`` ("csv" or "json") into ``out_dir``."""
    if format not in FORMATS:
        raise ValueError(f"unknown report format {format!r}; expected one of {FORMATS}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    stem = report_stem(report)
    paths: list[Path] = []
    if format == "csv":
        for s in report.seeds:
            paths += _seed_csvs(report, s, out)
        paths += _aggregate_csvs(report, out)
    else:
        for s in report.seeds:
            paths.append(_dump_json(out / f"{stem}_{s.seed}.json", s.to_dict(timing=False)))
        paths.append(_dump_json(out / f"{stem}_mean.json", report.to_dict(timing=False)))
        paths.append(_dump_json(out / f"{stem}_timing.json", {str(s.seed): s.timing for s in report.seeds}))
    if figures:
        from .plotting import render_report

        paths += render_report(report, out, stem)
    return paths


def load_report(path) -> ExperimentReport:
    """Parse a ``{stem}_mean.json`` file; wall times are merged back from the timing sidecar."""
    path = Path(path)
    report = ExperimentReport.from_dict(json.loads(path.read_text()))
    timing_path = path.with_name(path.name.replace("_mean.json", "_timing.json"))
    if timing_path != path and timing_path.exists():
        timing = json.loads(timing_path.read_text())
        for s in report.seeds:
            s.timing = timing.get(str(s.seed), {})
    return report
