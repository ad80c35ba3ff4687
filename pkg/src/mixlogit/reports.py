"""Delimited reports (CSV/JSON) and the figures that accompany them."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .controller import APPROACHES, BenchmarkReport, LevelResult, ValidationTrace
from .data_io import model_to_json, write_text_atomic
from .engine import PosteriorSummary
from .plotting import plot_cel_traces


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def summary_csv(summary: PosteriorSummary) -> str:
    return _csv(["section", "coefficient", "mean", "sd", "stars"], summary.rows())


def trace_csv(trace: ValidationTrace) -> str:
    return _csv(["epoch", "train_cel", "validation_cel", "best_so_far"], trace.rows())


def consistency_csv(reports: dict) -> str:
    rows = []
    for approach, rep in reports.items():
        if rep is None:
            continue
        for c in rep.checks:
            rows.append({"approach": approach, "coefficient": c.name, "sign_ok": int(c.sign_ok),
                         "ratio": c.ratio, "reference_ratio": c.reference_ratio,
                         "deviation": c.deviation, "flag": c.flag})
    return _csv(["approach", "coefficient", "sign_ok", "ratio", "reference_ratio",
                 "deviation", "flag"], rows)


def stop_report(trace: ValidationTrace, patience) -> dict:
    return {
        "stopped": trace.stopped,
        "stop_epoch": trace.stop_epoch,
        "output_epoch": trace.output_epoch,
        "best_epoch": trace.best_epoch,
        "best_validation_cel": None if trace.best_epoch is None else trace.best_cel,
        "patience": patience,
        "checkpoints": len(trace),
    }


def estimates_table_csv(level: LevelResult) -> str:
    """Side-by-side estimates and errors per approach, one row per table line."""
    names = list(level.results)
    header = ["section", "coefficient"]
    for n in names:
        header += [f"{n}_mean", f"{n}_sd", f"{n}_mark"]
    per = {n: {(r["section"], r["coefficient"]): r for r in level.results[n].summary.rows()}
           for n in names}
    keys = list(per[names[0]])
    rows = []
    for key in keys:
        row = {"section": key[0], "coefficient": key[1]}
        for n in names:
            r = per[n][key]
            mark = r["stars"]
            cons = level.results[n].consistency
            if key[0] in ("simulated", "fixed") and cons is not None:
                check = cons[key[1]]
                mark += ("e" if not check.sign_ok else "") + check.flag
            row.update({f"{n}_mean": r["mean"], f"{n}_sd": r["sd"], f"{n}_mark": mark})
        rows.append(row)
    for fold in ("validation", "test"):
        for metric in ("cel", "gmpca"):
            row = {"section": f"error_{fold}", "coefficient": metric}
            for n in names:
                row[f"{n}_mean"] = getattr(getattr(level.results[n], fold), metric)
                row[f"{n}_sd"] = ""
                row[f"{n}_mark"] = ""
            rows.append(row)
    return _csv(header, rows)


def write_estimation(out: Path, summary: PosteriorSummary, trace: ValidationTrace,
                     plot_interval: int, label: str, seed=None, provenance="",
                     output_epoch=None) -> list[Path]:
    out = Path(out)
    files = {
        out / "model.json": model_to_json(summary, provenance=provenance, seed=seed),
        out / "summary.csv": summary_csv(summary),
        out / "trace.csv": trace_csv(trace),
    }
    for path, text in files.items():
        write_text_atomic(path, text)
    fig = out / "cel_trace.png"
    plot_cel_traces({label: trace}, fig, plot_interval, output_epoch)
    return [*files, fig]


def write_benchmark(report: BenchmarkReport, out, plot_interval: int = 20,
                    patience=None) -> list[Path]:
    out = Path(out)
    written = []

    def put(path, text):
        write_text_atomic(path, text)
        written.append(path)

    put(out / "metrics.csv", _csv(
        ["level", "approach", "fold", "cel", "gmpca", "epochs_run", "output_epoch", "stop_epoch"],
        report.metrics_rows()))
    base = out / _slug(report.base_name)
    put(base / "summary.csv", summary_csv(report.base_summary))
    put(base / "trace.csv", trace_csv(report.base_trace))
    put(base / "model.json", model_to_json(report.base_summary,
                                           provenance=f"{report.base_name} nonconjugate"))
    for level in report.levels:
        d = out / _slug(level.name)
        put(d / "estimates.csv", estimates_table_csv(level))
        put(d / "consistency.csv",
            consistency_csv({n: r.consistency for n, r in level.results.items()}))
        traces = {}
        for name in APPROACHES:
            r = level.results[name]
            put(d / f"{name}_summary.csv", summary_csv(r.summary))
            if r.trace is not None:
                put(d / f"{name}_trace.csv", trace_csv(r.trace))
                traces[name] = r.trace
        esbda = level.results["esbda"].trace
        put(d / "stop_report.json", json.dumps(stop_report(esbda, patience), indent=2) + "\n")
        fig = d / "cel_comparison.png"
        plot_cel_traces(traces, fig, plot_interval,
                        esbda.output_epoch if esbda.stopped else None, level.name)
        written.append(fig)
    return written


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name).strip("_") or "level"
