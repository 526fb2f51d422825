"""Regression error metrics and the method-comparison report."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class LengthMismatchError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


def _check(y, y_hat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise LengthMismatchError(f"shapes {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise EmptyInputError("metrics need at least one value")
    return y, y_hat


def mse(y, y_hat) -> float:
    y, y_hat = _check(y, y_hat)
    return float(((y - y_hat) ** 2).mean())


def rmse(y, y_hat) -> float:
    return math.sqrt(mse(y, y_hat))


def mae(y, y_hat) -> float:
    y, y_hat = _check(y, y_hat)
    return float(np.abs(y - y_hat).mean())


@dataclass(frozen=True)
class ReportRow:
    method: str
    mse: float
    rmse: float
    mae: float


def evaluate(predictions: Sequence[tuple[str, np.ndarray]],
             labels: np.ndarray) -> list[ReportRow]:
    """One row per (method, predictions) pair, in input order."""
    labels = np.asarray(labels, dtype=float)
    rows: list[ReportRow] = []
    for method, preds in predictions:
        preds = np.asarray(preds, dtype=float)
        if preds.shape != labels.shape:
            raise AlignmentError(
                f"{method}: {preds.shape} predictions vs {labels.shape} labels")
        rows.append(ReportRow(method=method, mse=mse(labels, preds),
                              rmse=rmse(labels, preds), mae=mae(labels, preds)))
    return rows


def write_report_csv(path: str | Path, rows: Sequence[ReportRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["method", "mse", "rmse", "mae"])
        for row in rows:
            w.writerow([row.method, f"{row.mse:.6f}", f"{row.rmse:.6f}",
                        f"{row.mae:.6f}"])


def format_report_text(rows: Sequence[ReportRow]) -> str:
    width = max([len(r.method) for r in rows] + [6])
    lines = [f"{'method':<{width}}  {'MSE':>10}  {'RMSE':>10}  {'MAE':>10}"]
    for r in rows:
        lines.append(f"{r.method:<{width}}  {r.mse:>10.3f}  {r.rmse:>10.3f}  "
                     f"{r.mae:>10.3f}")
    return "\n".join(lines)
