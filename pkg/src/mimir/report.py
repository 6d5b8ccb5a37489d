"""Per-target evaluation reports: delimited table plus rendered figures.

The report compares predicted means against known labels target by
target. Binary targets additionally get AUC and confusion statistics at
a decision threshold; interval columns report empirical coverage at the
level the predictions were emitted with.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dataset import KIND_BINARY, LabelMatrix, TargetRegistry
from .errors import DataError
from .formats import PredictionTable, fmt
from .metrics import (
    ICC_EXCELLENT,
    ICC_GOOD,
    auc_roc,
    confusion_at_threshold,
    icc_2_1_components,
    icc_flag,
    mae_mape,
    r_squared,
)
from .uncertainty import two_sided_z

REPORT_COLUMNS = (
    "target",
    "n",
    "icc",
    "r2",
    "mae",
    "mape",
    "auc",
    "coverage",
    "sensitivity",
    "specificity",
    "icc_flag",
)


@dataclass(frozen=True)
class TargetMetrics:
    """One report row; None marks metrics undefined for this target/data."""

    target: str
    n: int
    icc: float | None
    r2: float | None
    mae: float | None
    mape: float | None
    auc: float | None
    coverage: float | None
    sensitivity: float | None
    specificity: float | None
    icc_flag: str


@dataclass(frozen=True)
class MetricsReport:
    rows: tuple[TargetMetrics, ...]

    def row(self, target: str) -> TargetMetrics:
        for r in self.rows:
            if r.target == target:
                return r
        raise KeyError(target)


def align_predictions(
    table: PredictionTable, labels: LabelMatrix
) -> tuple[PredictionTable, LabelMatrix]:
    """Restrict both sides to shared subjects, in prediction order."""
    label_row = {sid: i for i, sid in enumerate(labels.subjects)}
    keep_pred = [i for i, sid in enumerate(table.subjects) if sid in label_row]
    if not keep_pred:
        raise DataError("no overlapping subject ids between predictions and labels")
    rows = [label_row[table.subjects[i]] for i in keep_pred]
    aligned_table = PredictionTable(
        subjects=tuple(table.subjects[i] for i in keep_pred),
        targets=table.targets,
        mean=table.mean[keep_pred],
        sigma=table.sigma[keep_pred],
        ci_low=table.ci_low[keep_pred],
        ci_high=table.ci_high[keep_pred],
        fold=table.fold[keep_pred] if table.fold is not None else None,
    )
    aligned_labels = LabelMatrix(
        aligned_table.subjects, labels.values[rows], labels.masks[rows]
    )
    return aligned_table, aligned_labels


def build_report(
    registry: TargetRegistry,
    table: PredictionTable,
    labels: LabelMatrix,
    label_names,
    threshold: float = 0.5,
) -> MetricsReport:
    """Score every registry target present in both predictions and labels."""
    label_names = tuple(label_names)
    rows = []
    for spec in registry:
        name = spec.name
        if name not in table.targets or name not in label_names:
            continue
        pt = table.targets.index(name)
        lt = label_names.index(name)
        known = labels.masks[:, lt] == 1
        n = int(np.count_nonzero(known))
        truth = labels.values[known, lt]
        pred = table.mean[known, pt]
        low = table.ci_low[known, pt]
        high = table.ci_high[known, pt]

        icc = r2 = mae = mape = auc = cov = sens = spec_ = None
        flag = "insufficient-data"
        if n >= 3:
            comp = icc_2_1_components(truth, pred)
            icc = comp.value
            flag = icc_flag(comp)
        if n >= 2 and np.ptp(truth) > 0:
            r2 = r_squared(truth, pred)
        if n >= 1:
            if np.any(truth != 0):
                mae, mape = mae_mape(truth, pred)
            else:
                mae = float(np.mean(np.abs(truth - pred)))  # MAPE undefined
            cov = float(np.count_nonzero((truth >= low) & (truth <= high)) / n)
        if spec.kind == KIND_BINARY and n >= 2:
            binary = (truth >= 0.5).astype(float)
            if binary.min() != binary.max():
                auc = auc_roc(binary, pred)
                sens, spec_ = confusion_at_threshold(binary, pred, threshold)
        rows.append(
            TargetMetrics(name, n, icc, r2, mae, mape, auc, cov, sens, spec_, flag)
        )
    return MetricsReport(tuple(rows))


def write_report_csv(path, report: MetricsReport) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in report.rows:
            writer.writerow(
                [
                    r.target,
                    r.n,
                    *("" if v is None else fmt(v) for v in (
                        r.icc, r.r2, r.mae, r.mape, r.auc,
                        r.coverage, r.sensitivity, r.specificity,
                    )),
                    r.icc_flag,
                ]
            )


def read_report_csv(path) -> dict[str, dict[str, float | str | None]]:
    """Report rows keyed by target; numeric cells parsed, blanks as None."""
    out: dict[str, dict] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            parsed: dict[str, float | str | None] = {}
            for key, raw in row.items():
                if key in ("target", "icc_flag"):
                    parsed[key] = raw
                elif raw == "" or raw is None:
                    parsed[key] = None
                elif key == "n":
                    parsed[key] = int(raw)
                else:
                    parsed[key] = float(raw)
            out[row["target"]] = parsed
    return out


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def render_report_figures(
    out_dir,
    report: MetricsReport,
    table: PredictionTable,
    labels: LabelMatrix,
    label_names,
    registry: TargetRegistry,
    level: float = 0.95,
    max_scatter_points: int = 500,
) -> list[str]:
    """Write agreement, scatter, and reliability figures next to the CSV."""
    out_dir.mkdir(parents=True, exist_ok=True)
    label_names = tuple(label_names)
    written = []

    # Agreement overview: ICC per target with the reliability thresholds.
    scored = [r for r in report.rows if r.icc is not None]
    if scored:
        fig, ax = plt.subplots(figsize=(6.5, 3.5))
        names = [r.target for r in scored]
        values = [r.icc for r in scored]
        ax.bar(range(len(names)), values, color="#4878a8")
        ax.axhline(ICC_GOOD, color="#c44e52", ls="--", lw=1, label=f"good ({ICC_GOOD})")
        ax.axhline(
            ICC_EXCELLENT, color="#55a868", ls="--", lw=1, label=f"excellent ({ICC_EXCELLENT})"
        )
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
        ax.set_ylabel("ICC(2,1)")
        ax.set_ylim(min(0.0, min(values)) - 0.05, 1.05)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / "agreement_icc.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(str(path))

    # Truth vs prediction with interval bars, one panel per target.
    for r in report.rows:
        pt = table.targets.index(r.target)
        lt = label_names.index(r.target)
        known = labels.masks[:, lt] == 1
        if not np.any(known):
            continue
        truth = labels.values[known, lt]
        pred = table.mean[known, pt]
        err_lo = pred - table.ci_low[known, pt]
        err_hi = table.ci_high[known, pt] - pred
        if truth.size > max_scatter_points:
            truth = truth[:max_scatter_points]
            pred = pred[:max_scatter_points]
            err_lo = err_lo[:max_scatter_points]
            err_hi = err_hi[:max_scatter_points]
        fig, ax = plt.subplots(figsize=(4.2, 4.0))
        ax.errorbar(
            truth,
            pred,
            yerr=np.vstack([err_lo, err_hi]),
            fmt="o",
            ms=2.5,
            lw=0.5,
            alpha=0.55,
            color="#4878a8",
            ecolor="#a8c4dc",
        )
        span = [min(truth.min(), pred.min()), max(truth.max(), pred.max())]
        ax.plot(span, span, color="#444444", lw=1, ls=":")
        unit = registry.get(r.target).unit
        ax.set_xlabel(f"reference ({unit})")
        ax.set_ylabel(f"predicted ({unit})")
        title = r.target
        if r.icc is not None:
            title += f"  ICC {r.icc:.3f}"
        ax.set_title(title, fontsize=10)
        fig.tight_layout()
        path = out_dir / f"scatter_{r.target}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(str(path))

    # Reliability: nominal vs empirical coverage pooled over continuous targets.
    cont = [
        (table.targets.index(s.name), label_names.index(s.name))
        for s in registry
        if s.kind != KIND_BINARY and s.name in table.targets and s.name in label_names
    ]
    if cont:
        z_emit = two_sided_z(level)
        nominal = np.linspace(0.05, 0.99, 30)
        zs = np.array([two_sided_z(v) for v in nominal])
        hits = np.zeros_like(nominal)
        total = 0
        for pt, lt in cont:
            known = labels.masks[:, lt] == 1
            if not np.any(known):
                continue
            truth = labels.values[known, lt]
            mean = table.mean[known, pt]
            sigma = (table.ci_high[known, pt] - mean) / z_emit
            inside = np.abs(truth - mean)[None, :] <= zs[:, None] * sigma[None, :]
            hits += inside.sum(axis=1)
            total += truth.size
        if total:
            fig, ax = plt.subplots(figsize=(4.2, 4.0))
            ax.plot(nominal, hits / total, color="#4878a8", label="observed")
            ax.plot([0, 1], [0, 1], color="#444444", lw=1, ls=":", label="ideal")
            ax.set_xlabel("nominal coverage")
            ax.set_ylabel("empirical coverage")
            ax.legend(fontsize=8)
            fig.tight_layout()
            path = out_dir / "reliability.png"
            fig.savefig(path, dpi=150)
            plt.close(fig)
            written.append(str(path))
    return written
