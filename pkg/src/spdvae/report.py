"""Write an evaluation report as JSON, CSV tables and figures."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from . import plotting
from .dataio import atomic_write_text
from .evaluate import EvalReport, improvement_rows

CURVE_FIELDS = ("epoch", "manifold", "tangent", "kl", "beta", "diversity", "total", "lr")


def _csv_text(rows, fields) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def write_csv(path, rows, fields):
    atomic_write_text(path, _csv_text(rows, fields))


def report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=1, sort_keys=True, default=float) + "\n"


def fidelity_rows(report: EvalReport):
    rows = []
    for gen, fm in report.fidelity.items():
        rows.append({
            "generator": gen,
            "original_variance": fm["variance_real"],
            "synthetic_variance": fm["variance_synthetic"],
            "variance_ratio": fm["variance_ratio"],
            "original_diversity": fm["diversity_real"],
            "synthetic_diversity": fm["diversity_synthetic"],
            "spd_pass_fraction": report.validity[gen]["pass_fraction"],
        })
    return rows


ACCURACY_FIELDS = (
    "generator", "classifier", "baseline_mean", "baseline_std",
    "augmented_mean", "augmented_std", "augmented_improvement", "augmented_p",
    "synthetic_only_mean", "synthetic_only_std", "synthetic_only_improvement", "synthetic_only_p",
)


def accuracy_rows(report: EvalReport):
    """Table of mean balanced accuracy (percent) per generator and classifier."""
    rows = []
    for gen, by_clf in report.summary.items():
        for clf, cell in by_clf.items():
            row = {"generator": gen, "classifier": clf,
                   "baseline_mean": 100 * cell["baseline"]["mean"],
                   "baseline_std": 100 * cell["baseline"]["std"]}
            for cond in ("augmented", "synthetic_only"):
                c = cell[cond]
                row[f"{cond}_mean"] = 100 * c["mean"]
                row[f"{cond}_std"] = 100 * c["std"]
                row[f"{cond}_improvement"] = 100 * c["improvement"]
                row[f"{cond}_p"] = "" if c["p_value"] is None else c["p_value"]
            rows.append(row)
    return rows


def write_report(report: EvalReport, folds, out_dir, figures: bool = True) -> dict:
    """Write every report artifact under ``out_dir``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json"}
    atomic_write_text(paths["report"], report_json(report))
    paths["table1"] = out / "table1_fidelity.csv"
    write_csv(paths["table1"], fidelity_rows(report),
              ("generator", "original_variance", "synthetic_variance", "variance_ratio",
               "original_diversity", "synthetic_diversity", "spd_pass_fraction"))
    paths["table2"] = out / "table2_accuracy.csv"
    write_csv(paths["table2"], accuracy_rows(report), ACCURACY_FIELDS)
    rows = improvement_rows(report)
    gens = sorted({r["generator"] for r in rows})
    for gen in gens:
        p = out / f"improvements_{gen}.csv"
        write_csv(p, [r for r in rows if r["generator"] == gen],
                  ("generator", "classifier", "condition", "subject", "improvement_pp"))
        paths[f"improvements_{gen}"] = p
    curves = out / "training_curves"
    for f in folds:
        for k, hist in f.histories.items():
            write_csv(curves / f"subject{f.test_subject:02d}_class{k}.csv", hist, CURVE_FIELDS)
    if figures:
        fig_dir = out / "figures"
        for gen in gens:
            paths[f"figure_{gen}"] = plotting.plot_improvements(rows, gen, fig_dir / f"improvements_{gen}.png")
        paths["figure_validity"] = plotting.plot_validity(report.validity, fig_dir / "validity.png")
        for f in folds:
            if f.histories:
                plotting.plot_training_curves(
                    f.histories, fig_dir / "training" / f"subject{f.test_subject:02d}.png",
                    f"held-out subject {f.test_subject}")
    return paths
