"""Comparison tables and bar charts from evaluated reports."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from .errors import DataError  # noqa: E402
from .metrics import MetricReport  # noqa: E402

LABELS = {"shivae": "Shi-VAE", "mean": "Mean", "locf": "LOCF"}


def load_reports(report_dir) -> dict[str, MetricReport]:
    """Read ``<report_dir>/<method>/report.json`` for every method present."""
    report_dir = Path(report_dir)
    out = {}
    for p in sorted(report_dir.glob("*/report.json")):
        out[p.parent.name] = MetricReport.from_dict(json.loads(p.read_text()))
    if not out:
        raise DataError(f"no <method>/report.json under {report_dir}")
    return out


def comparison_table(reports: dict[str, MetricReport]) -> pd.DataFrame:
    """Error and cross-correlation per variable (rows) and method (column pairs)."""
    frames = []
    for m, rep in reports.items():
        df = pd.DataFrame(rep.table_rows()).set_index("variable")
        df.columns = pd.MultiIndex.from_product([[LABELS.get(m, m)], df.columns])
        frames.append(df)
    return pd.concat(frames, axis=1)


def plot_summary(reports: dict[str, MetricReport], path, continuous_xcorr: bool = True) -> Path:
    """Two-panel bar chart of average error and cross-correlation with one-std error bars."""
    names = list(reports)
    summ = {m: reports[m].summary() for m in names}
    xkey = "cross_corr_continuous" if continuous_xcorr else "cross_corr"
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    for ax, key, title in ((axes[0], "error", "Error"), (axes[1], xkey, "Cross-correlation")):
        means = [summ[m][key]["mean"] or 0.0 for m in names]
        stds = [summ[m][key]["std"] or 0.0 for m in names]
        ax.bar([LABELS.get(m, m) for m in names], means, yerr=stds, capsize=4,
               color=["C0", "C1", "C2", "C3"][:len(names)])
        ax.set_title(title)
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render(report_dir, out_dir=None) -> list[Path]:
    """Write ``comparison_table.csv`` and ``summary.png`` for the reports in ``report_dir``."""
    reports = load_reports(report_dir)
    out_dir = Path(out_dir or report_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = comparison_table(reports)
    table_path = out_dir / "comparison_table.csv"
    table.to_csv(table_path, float_format="%.6g")
    fig_path = plot_summary(reports, out_dir / "summary.png")
    return [table_path, fig_path]
