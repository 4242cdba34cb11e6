"""Forecast metrics (MAE, MAPE, RMSE) and per-horizon report tables.

Metrics run over masked cells only; station-hours without arrivals are
excluded. MAPE handles zero actuals by substituting the absolute
difference for the ratio term, then the whole mean is scaled to percent.
Reports give each metric per horizon step plus the running average over
horizons 1..i (the convention used for long-horizon curves).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

METRIC_NAMES = ("mae", "mape", "rmse")


def _masked(pred, actual, mask):
    pred, actual, mask = np.asarray(pred), np.asarray(actual), np.asarray(mask)
    on = mask > 0
    return pred[on], actual[on]


def mae(pred, actual, mask) -> float | None:
    """Mean absolute error over masked cells; None when nothing is masked."""
    p, a = _masked(pred, actual, mask)
    if p.size == 0:
        return None
    return float(np.abs(p - a).mean())


def mape(pred, actual, mask) -> float | None:
    """Mean absolute percentage error, in percent.

    Cells with actual > 0 contribute |pred-actual|/actual; zero-delay
    cells contribute the plain absolute difference (same unit as the
    data). One x100 is applied to the mean.
    """
    p, a = _masked(pred, actual, mask)
    if p.size == 0:
        return None
    diff = np.abs(p - a)
    terms = np.where(a > 0, diff / np.where(a > 0, a, 1.0), diff)
    return float(100.0 * terms.mean())


def rmse(pred, actual, mask) -> float | None:
    p, a = _masked(pred, actual, mask)
    if p.size == 0:
        return None
    return float(np.sqrt(((p - a) ** 2).mean()))


@dataclass
class MetricReport:
    """Per-horizon metrics plus horizon-averaged and cumulative views.

    per_horizon[h][metric] is the value for prediction step h+1;
    cumulative[i][metric] averages steps 1..i+1. per_zone mirrors
    per_horizon keyed by zone tag.
    """

    per_horizon: list[dict]
    cumulative: list[dict]
    average: dict
    per_zone: dict[str, list[dict]] = field(default_factory=dict)

    @property
    def horizons(self) -> int:
        return len(self.per_horizon)

    def as_dict(self) -> dict:
        return {
            "per_horizon": self.per_horizon,
            "cumulative": self.cumulative,
            "average": self.average,
            "per_zone": self.per_zone,
        }


def _horizon_metrics(pred, actual, mask) -> list[dict]:
    horizons = pred.shape[-1]
    rows = []
    for h in range(horizons):
        rows.append({
            "mae": mae(pred[..., h], actual[..., h], mask[..., h]),
            "mape": mape(pred[..., h], actual[..., h], mask[..., h]),
            "rmse": rmse(pred[..., h], actual[..., h], mask[..., h]),
        })
    return rows


def _running_average(rows: list[dict]) -> list[dict]:
    out = []
    for i in range(len(rows)):
        entry = {}
        for m in METRIC_NAMES:
            vals = [r[m] for r in rows[:i + 1] if r[m] is not None]
            entry[m] = float(np.mean(vals)) if vals else None
        out.append(entry)
    return out


def horizon_report(pred: np.ndarray, actual: np.ndarray, mask: np.ndarray,
                   zones: np.ndarray | None = None) -> MetricReport:
    """Build the full report from stacked predictions.

    pred/actual/mask are (samples, N, horizons); `zones`, when given, is a
    length-N tag array enabling the per-zone breakdown.
    """
    if pred.shape != actual.shape or pred.shape != mask.shape:
        raise ValueError("pred/actual/mask shapes differ")
    if pred.ndim != 3:
        raise ValueError("expected (samples, stations, horizons) arrays")
    if mask.sum() == 0:
        raise ValueError("nothing to score: mask is empty")

    per_horizon = _horizon_metrics(pred, actual, mask)
    cumulative = _running_average(per_horizon)
    report = MetricReport(
        per_horizon=per_horizon,
        cumulative=cumulative,
        average=cumulative[-1],
    )
    if zones is not None:
        for zone in sorted(set(zones)):
            sel = zones == zone
            if mask[:, sel, :].sum() > 0:
                report.per_zone[zone] = _horizon_metrics(
                    pred[:, sel, :], actual[:, sel, :], mask[:, sel, :])
    return report


def collect_predictions(predictor, samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run `predictor(sample) -> (N, t_p)` over samples and stack results."""
    preds, actuals, masks = [], [], []
    for sample in samples:
        preds.append(predictor(sample))
        actuals.append(sample.y)
        masks.append(sample.mask)
    if not preds:
        raise ValueError("no samples to evaluate")
    return np.stack(preds), np.stack(actuals), np.stack(masks)


def _fmt_cells(rows: list[dict], metric: str, decimals: int) -> str:
    vals = [r[metric] for r in rows]
    return " / ".join("-" if v is None else f"{v:.{decimals}f}" for v in vals)


def write_report_csv(report: MetricReport, path) -> None:
    """One row per zone (plus ALL); each metric cell is 'h1 / h2 / h3'."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["zone", "MAE", "MAPE_pct", "RMSE"])
        writer.writerow([
            "ALL",
            _fmt_cells(report.per_horizon, "mae", 4),
            _fmt_cells(report.per_horizon, "mape", 2),
            _fmt_cells(report.per_horizon, "rmse", 4),
        ])
        for zone in sorted(report.per_zone):
            rows = report.per_zone[zone]
            writer.writerow([
                zone,
                _fmt_cells(rows, "mae", 4),
                _fmt_cells(rows, "mape", 2),
                _fmt_cells(rows, "rmse", 4),
            ])


def write_report_json(report: MetricReport, path) -> None:
    with open(path, "w") as f:
        json.dump(report.as_dict(), f, indent=1, sort_keys=True)
        f.write("\n")
