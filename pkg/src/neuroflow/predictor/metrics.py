"""Accuracy metrics, the model-only baseline and report tables."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from ..errors import EmptyDataset, ZeroTarget
from ..platforms import PlatformDescriptor
from ..traces import TraceRecord
from ..workload import ModelDescriptor
from .features import RawDataset, normalize, raw_dataset
from .model import PredictorParams, forward_batch, latency_from_log

COLUMNS = ("RMSE", "RMSPE", "±5% Acc.", "±10% Acc.", "Cls. Acc.")


@dataclass
class PlatformMetrics:
    rmse_ms: float
    rmspe_pct: float
    acc5_pct: float
    acc10_pct: float
    cls_acc_pct: float
    n: int


@dataclass
class MetricsReport:
    per_platform: dict[str, PlatformMetrics]
    cls_acc_pct: float
    n: int
    overall: PlatformMetrics | None = None
    label: str = "platform-level"

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "n": self.n,
            "cls_acc_pct": self.cls_acc_pct,
            "overall": asdict(self.overall) if self.overall else None,
            "per_platform": {k: asdict(v) for k, v in self.per_platform.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def regression_metrics(y_hat: Sequence[float], y: Sequence[float]) -> tuple[float, float, float, float]:
    """RMSE (ms), RMSPE (%), and shares (%) within ±5% and ±10% relative error.

    The margins are inclusive.
    """
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise EmptyDataset("no samples to score")
    if np.any(y <= 0):
        raise ZeroTarget("targets must be strictly positive")
    err = y_hat - y
    rel = err / y
    rmse = float(np.sqrt(np.mean(err ** 2)))
    rmspe = float(100.0 * np.sqrt(np.mean(rel ** 2)))
    within = np.abs(rel)
    acc5 = float(100.0 * np.mean(within <= 0.05 + 1e-12))
    acc10 = float(100.0 * np.mean(within <= 0.10 + 1e-12))
    return rmse, rmspe, acc5, acc10


def _report(pred_exec: np.ndarray, pred_cls: np.ndarray, data: RawDataset, label: str) -> MetricsReport:
    per = {}
    for i, pid in enumerate(data.platform_ids):
        mask = data.executed == i
        if not mask.any():
            continue
        rmse, rmspe, a5, a10 = regression_metrics(pred_exec[mask], data.y[mask])
        cls = float(100.0 * np.mean(pred_cls[mask] == data.best[mask]))
        per[pid] = PlatformMetrics(rmse, rmspe, a5, a10, cls, int(mask.sum()))
    rmse, rmspe, a5, a10 = regression_metrics(pred_exec, data.y)
    cls = float(100.0 * np.mean(pred_cls == data.best))
    overall = PlatformMetrics(rmse, rmspe, a5, a10, cls, len(data))
    return MetricsReport(per, cls, len(data), overall, label)


def _argmax_first(x: np.ndarray) -> np.ndarray:
    # np.argmax already returns the first maximal index
    return np.argmax(x, axis=1)


def predict_raw(params: PredictorParams, data: RawDataset) -> tuple[np.ndarray, np.ndarray]:
    """Latency (ms) and logits for every record and platform."""
    if params.normalizer is None:
        raise ValueError("params carry no normalizer")
    xm, xp = normalize(data, params.normalizer)
    p64 = params.astype(np.float64)
    Z, L, _ = forward_batch(p64, xm, xp)
    return latency_from_log(Z), L


def evaluate(params: PredictorParams, records: Sequence[TraceRecord],
             catalog: Mapping[str, ModelDescriptor], platforms: Sequence[PlatformDescriptor]) -> MetricsReport:
    if not records:
        raise EmptyDataset("nothing to evaluate")
    data = raw_dataset(records, catalog, platforms)
    lat, logits = predict_raw(params, data)
    rows = np.arange(len(data))
    return _report(lat[rows, data.executed], _argmax_first(logits), data, "platform-level")


def _baseline_design(xm: np.ndarray) -> np.ndarray:
    # model token: conv, linear, total flops, conv/linear layers, params, batch
    flops = np.log1p(xm[:, :3] / 1e9)
    batch = xm[:, 6:7]
    return np.hstack([np.ones((len(xm), 1)), flops, np.log(batch)])


def baseline_model_only(train_records: Sequence[TraceRecord], eval_records: Sequence[TraceRecord],
                        catalog: Mapping[str, ModelDescriptor],
                        platforms: Sequence[PlatformDescriptor]) -> MetricsReport:
    """Least squares on model-side features only, one regressor per platform.

    Fits log-latency against log FLOPs terms and log batch, so it can
    capture each model's scale but not the platform's load.
    """
    if not train_records or not eval_records:
        raise EmptyDataset("baseline needs train and eval records")
    tr = raw_dataset(train_records, catalog, platforms)
    ev = raw_dataset(eval_records, catalog, platforms)
    Xtr, Xev = _baseline_design(tr.xm), _baseline_design(ev.xm)
    pred = np.zeros((len(ev), len(ev.platform_ids)))
    fallback = float(np.mean(np.log(tr.y)))
    for i in range(len(tr.platform_ids)):
        mask = tr.executed == i
        if mask.sum() >= Xtr.shape[1]:
            coef, *_ = np.linalg.lstsq(Xtr[mask], np.log(tr.y[mask]), rcond=None)
            pred[:, i] = Xev @ coef
        else:
            pred[:, i] = fallback
    rows = np.arange(len(ev))
    lat = np.exp(pred)
    return _report(lat[rows, ev.executed], np.argmin(pred, axis=1), ev, "model-only")


def _fmt_row(cells: Sequence[str], widths: Sequence[int]) -> str:
    return " | ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    lines = [_fmt_row(header, widths), "-+-".join("-" * w for w in widths)]
    lines += [_fmt_row(r, widths) for r in rows]
    return "\n".join(lines)


def format_table(report: MetricsReport) -> str:
    """Aligned text table, columns RMSE | RMSPE | ±5% | ±10% | Cls. Acc."""
    rows = []
    for pid, m in report.per_platform.items():
        rows.append([pid, f"{m.rmse_ms:.2f} ms", f"{m.rmspe_pct:.2f} %", f"{m.acc5_pct:.2f}%",
                     f"{m.acc10_pct:.2f}%", f"{m.cls_acc_pct:.2f}%"])
    return _table(("Platform", *COLUMNS), rows)


def format_comparison(baseline: MetricsReport, ours: MetricsReport) -> str:
    rows = []
    for pid in ours.per_platform:
        b = baseline.per_platform.get(pid)
        o = ours.per_platform[pid]
        rows.append([
            pid,
            f"{b.rmse_ms:.2f} ms" if b else "-",
            f"{b.acc10_pct:.1f}%" if b else "-",
            f"{o.rmse_ms:.2f} ms",
            f"{o.acc10_pct:.1f}%",
        ])
    header = ("Device", "Model-only RMSE", "Model-only ±10%", "Platform RMSE", "Platform ±10%")
    return _table(header, rows)
