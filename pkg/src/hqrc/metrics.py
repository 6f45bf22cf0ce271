"""Forecast evaluation: pooled RMSE, variance-normalized modal error, the
irreducible compression floor, and ensemble statistics.

Grid arrays are time-major ``(T, n_cells)``; coefficient arrays are
``(T, n_modes)``.  Squared errors are pooled over time and space before the
single square root, so the RMSE over a full index set decomposes exactly
over any partition of it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .pod import PODBasis, project, reconstruct

REPORT_COLUMNS = ("horizon", "rmse_grid", "rmse_region", "rmnse_modal", "recon_floor")


@dataclass
class MetricReport:
    """The per-forecast error summary; ``rmse_region`` is None when no
    evaluation region is configured."""

    rmse_grid: float
    rmse_region: float | None
    rmnse_modal: float
    recon_floor: float
    horizon: int

    def as_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "rmse_grid": self.rmse_grid,
            "rmse_region": self.rmse_region,
            "rmnse_modal": self.rmnse_modal,
            "recon_floor": self.recon_floor,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)

    def csv_row(self) -> str:
        vals = self.as_dict()
        return ",".join("" if vals[c] is None else repr(vals[c]) for c in REPORT_COLUMNS)

    @staticmethod
    def csv_header() -> str:
        return ",".join(REPORT_COLUMNS)


def rmse(pred: np.ndarray, truth: np.ndarray,
         indices: np.ndarray | None = None) -> float:
    """Root of the pooled mean squared error over all timesteps and cells.

    ``indices`` optionally restricts the last axis (e.g. to a region).
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if indices is not None:
        indices = np.asarray(indices, dtype=int)
        if indices.size == 0:
            raise ValueError("empty index selection")
        pred = pred[..., indices]
        truth = truth[..., indices]
    if pred.size == 0:
        raise ValueError("cannot compute RMSE of empty arrays")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def rmnse(pred: np.ndarray, truth: np.ndarray) -> float:
    """Root mean squared error normalized per dimension by the truth
    trajectory's variance over the evaluation window."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise ValueError(f"expected matching (T, dims) arrays, got {pred.shape} "
                         f"vs {truth.shape}")
    variance = truth.var(axis=0)
    if np.any(variance <= 0.0):
        raise ValueError("truth trajectory has a zero-variance dimension")
    return float(np.sqrt(np.mean((pred - truth) ** 2 / variance)))


def reconstruction_floor(basis: PODBasis, truth: np.ndarray,
                         window: tuple[int, int] | None = None) -> float:
    """RMSE between the truth and its own projection-reconstruction.

    This is the irreducible error of the truncated basis, independent of any
    forecaster.  ``truth`` is time-major ``(T, n_cells)``; ``window`` is an
    optional half-open row range.
    """
    truth = np.asarray(truth, dtype=float)
    if window is not None:
        truth = truth[window[0]:window[1]]
    coeffs = project(basis, truth.T)
    return rmse(reconstruct(basis, coeffs).T, truth)


def ensemble_average(predictions: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-timestep, per-dimension mean and population standard deviation."""
    if len(predictions) == 0:
        raise ValueError("ensemble is empty")
    stack = np.stack([np.asarray(p, dtype=float) for p in predictions])
    return stack.mean(axis=0), stack.std(axis=0)
