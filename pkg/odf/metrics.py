"""Evaluation metrics: scaled chamfer distance, depth F-score, intersection mask scores."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from odf.errors import DataError
from odf.storage import save_json, timestamp, write_csv

logger = logging.getLogger(__name__)

CHAMFER_SCALE = 1000.0
FSCORE_THRESHOLD = 0.005
CHAMFER_VARIANT = "1000 * (mean sq NN a->b + mean sq NN b->a)"


@dataclass(frozen=True)
class DepthMetrics:
    chamfer_x1000: float
    fscore_depth: float


@dataclass(frozen=True)
class MaskMetrics:
    recall: float
    precision: float
    fscore: float
    tp: int
    fp: int
    fn: int
    tn: int


def _points(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    if not len(p):
        raise DataError(f"{name} point set is empty")
    return p


def _sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    return np.sum(d * d, axis=1)


def nearest_indices(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Index into b of each point's nearest neighbor (k-d tree)."""
    _, idx = cKDTree(b).query(a, k=1)
    return np.asarray(idx, dtype=np.int64)


def nearest_indices_brute_force(a: np.ndarray, b: np.ndarray, chunk: int = 1024) -> np.ndarray:
    out = np.empty(len(a), dtype=np.int64)
    for s in range(0, len(a), chunk):
        d = a[s:s + chunk, None, :] - b[None, :, :]
        out[s:s + chunk] = np.argmin(np.sum(d * d, axis=-1), axis=1)
    return out


def _nn_sq(a: np.ndarray, b: np.ndarray, brute_force: bool = False) -> np.ndarray:
    idx = nearest_indices_brute_force(a, b) if brute_force else nearest_indices(a, b)
    return _sq(a, b[idx])


def chamfer(a, b, brute_force: bool = False) -> float:
    a, b = _points(a, "first"), _points(b, "second")
    ab = float(np.mean(_nn_sq(a, b, brute_force)))
    ba = float(np.mean(_nn_sq(b, a, brute_force)))
    # fixed summation order keeps chamfer(a, b) == chamfer(b, a)
    lo, hi = sorted((ab, ba))
    return CHAMFER_SCALE * (lo + hi)


def chamfer_brute_force(a, b) -> float:
    return chamfer(a, b, brute_force=True)


def fscore_depth(pred, gt, threshold: float = FSCORE_THRESHOLD) -> float:
    """F-score (percent) of point sets at a distance threshold."""
    pred, gt = _points(pred, "predicted"), _points(gt, "ground-truth")
    precision = float(np.mean(np.sqrt(_nn_sq(pred, gt)) < threshold))
    recall = float(np.mean(np.sqrt(_nn_sq(gt, pred)) < threshold))
    if precision + recall == 0:
        return 0.0
    return 100.0 * 2 * precision * recall / (precision + recall)


def depth_metrics(pred, gt, threshold: float = FSCORE_THRESHOLD) -> DepthMetrics:
    return DepthMetrics(chamfer(pred, gt), fscore_depth(pred, gt, threshold))


def mask_metrics(pred, gt) -> MaskMetrics:
    """Recall / precision / F over the intersecting class; predictions above 0.5 count as hits."""
    pred = np.asarray(pred).reshape(-1)
    gt = np.asarray(gt).reshape(-1).astype(bool)
    if len(pred) != len(gt):
        raise DataError(f"prediction has {len(pred)} entries, labels have {len(gt)}")
    p = pred > 0.5 if pred.dtype != bool else pred
    tp = int(np.sum(p & gt))
    fp = int(np.sum(p & ~gt))
    fn = int(np.sum(~p & gt))
    tn = int(np.sum(~p & ~gt))
    recall = tp / (tp + fn) if tp + fn else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MaskMetrics(100.0 * recall, 100.0 * precision, 100.0 * f, tp, fp, fn, tn)


# ─── Reports ─────────────────────────────────────────────────────────────


def report_rows(experiment: str, metrics: dict, config_hash: str) -> list[dict]:
    """Long-form rows {experiment, metric, value, config_hash}."""
    if hasattr(metrics, "__dataclass_fields__"):
        metrics = asdict(metrics)
    return [{"experiment": experiment, "metric": k, "value": float(v), "config_hash": config_hash}
            for k, v in metrics.items()]


def pivot(rows: list[dict]) -> tuple[list[dict], list[str]]:
    """One row per experiment, one column per metric, in first-seen order."""
    table: dict[str, dict] = {}
    metrics: list[str] = []
    for r in rows:
        entry = table.setdefault(r["experiment"], {"experiment": r["experiment"]})
        entry[r["metric"]] = r["value"]
        if r["metric"] not in metrics:
            metrics.append(r["metric"])
    return list(table.values()), ["experiment", *metrics]


def write_report(rows: list[dict], json_path: str | Path | None = None, csv_path: str | Path | None = None,
                 meta: dict | None = None):
    if json_path is not None:
        save_json(json_path, {"created": timestamp(), "chamfer_variant": CHAMFER_VARIANT,
                              **(meta or {}), "rows": rows})
        logger.debug("Wrote %d report rows to %s", len(rows), json_path)
    if csv_path is not None:
        table, columns = pivot(rows)
        write_csv(csv_path, table, columns)
