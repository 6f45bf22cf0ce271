"""Proper orthogonal decomposition of snapshot series.

Snapshots enter as the columns of an ``(n_points, n_snapshots)`` matrix.
Fitting subtracts the temporal mean and solves the method-of-snapshots
eigenproblem on the small ``S^T S`` Gram matrix (equivalent to the spatial
``S S^T`` eigenvectors but tractable when the grid is much larger than the
snapshot count).  Per-mode min/max scaling maps coefficients into ``[0, 1]``
using training-set extrema only, so later data never leaks into the scaler.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


@dataclass
class PODBasis:
    """Temporal-mean snapshot plus orthonormal spatial modes.

    ``modes`` is ``(n_points, n_modes)`` with columns sorted by descending
    eigenvalue; each column is sign-fixed so its largest-magnitude component
    is positive.  Modes whose eigenvalue is numerically zero are left as
    zero columns.
    """

    mean: np.ndarray
    modes: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n_points(self) -> int:
        return self.modes.shape[0]

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]


@dataclass
class ModalSeries:
    """Projection coefficients ``(n_snapshots, n_modes)`` and their scaler.

    ``scaler_min``/``scaler_max`` are the per-mode extrema of the fitting
    (training) coefficients; they stay fixed when scaling later data.
    """

    coeffs: np.ndarray
    scaler_min: np.ndarray | None = None
    scaler_max: np.ndarray | None = None


def fit_pod(data: np.ndarray, n_modes: int) -> tuple[PODBasis, ModalSeries]:
    """Fit mean, modes and scaled coefficients to a snapshot matrix.

    ``data`` is ``(n_points, n_snapshots)``; ``n_modes`` must not exceed
    either dimension.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError("snapshot data must be a 2-d (n_points, n_snapshots) array")
    n_points, n_snaps = data.shape
    if not 1 <= n_modes <= min(n_points, n_snaps):
        raise ValueError(
            f"n_modes {n_modes} must lie in [1, min(n_points, n_snapshots) = "
            f"{min(n_points, n_snaps)}]")
    if not np.all(np.isfinite(data)):
        raise ValueError("snapshot data must be finite")

    mean = data.mean(axis=1)
    centered = data - mean[:, None]
    gram = centered.T @ centered
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1][:n_modes]
    eigenvalues = np.clip(evals[order], 0.0, None)

    # Numerically-zero eigenvalues produce zero modes instead of noise.
    cutoff = eigenvalues[0] * max(n_points, n_snaps) * np.finfo(float).eps
    norms = np.where(eigenvalues > cutoff, np.sqrt(eigenvalues), np.inf)
    modes = (centered @ evecs[:, order]) / norms

    # Eigenvectors are sign-ambiguous; pin the largest component positive.
    anchor = np.argmax(np.abs(modes), axis=0)
    signs = np.sign(modes[anchor, np.arange(n_modes)])
    signs[signs == 0.0] = 1.0
    modes = modes * signs

    coeffs = centered.T @ modes
    return (PODBasis(mean=mean, modes=modes, eigenvalues=eigenvalues),
            ModalSeries(coeffs=coeffs,
                        scaler_min=coeffs.min(axis=0),
                        scaler_max=coeffs.max(axis=0)))


def project(basis: PODBasis, snapshots: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto the modes: ``a = V^T (d - mean)``.

    Accepts a single snapshot ``(n_points,)`` -> ``(n_modes,)`` or a
    snapshot matrix ``(n_points, T)`` -> time-major ``(T, n_modes)``.
    """
    snapshots = np.asarray(snapshots, dtype=float)
    if snapshots.shape[0] != basis.n_points:
        raise ValueError(f"snapshot length {snapshots.shape[0]} does not match "
                         f"basis n_points {basis.n_points}")
    if snapshots.ndim == 1:
        return basis.modes.T @ (snapshots - basis.mean)
    return (snapshots - basis.mean[:, None]).T @ basis.modes


def reconstruct(basis: PODBasis, coeffs: np.ndarray) -> np.ndarray:
    """Mean plus linear combination of modes.

    Accepts ``(n_modes,)`` -> ``(n_points,)`` or time-major
    ``(T, n_modes)`` -> ``(n_points, T)``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != basis.n_modes:
        raise ValueError(f"coefficient length {coeffs.shape[-1]} does not match "
                         f"basis n_modes {basis.n_modes}")
    if coeffs.ndim == 1:
        return basis.mean + basis.modes @ coeffs
    return basis.mean[:, None] + basis.modes @ coeffs.T


def _scaler(series: ModalSeries) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if series.scaler_min is None or series.scaler_max is None:
        raise RuntimeError("modal series has no fitted scaler")
    span = series.scaler_max - series.scaler_min
    return series.scaler_min, span, span <= 0.0


def scale(series: ModalSeries, coeffs: np.ndarray) -> np.ndarray:
    """Min/max-map coefficients with the series' training extrema.

    Training coefficients land in ``[0, 1]``; later data may exceed that
    range and is passed through unclipped (clipping happens at injection
    time, not here).  A degenerate mode (max == min) maps to the constant
    0.5.
    """
    lo, span, degenerate = _scaler(series)
    coeffs = np.asarray(coeffs, dtype=float)
    safe_span = np.where(degenerate, 1.0, span)
    return np.where(degenerate, 0.5, (coeffs - lo) / safe_span)


def unscale(series: ModalSeries, scaled: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`scale` (degenerate modes map back to min)."""
    lo, span, degenerate = _scaler(series)
    scaled = np.asarray(scaled, dtype=float)
    return np.where(degenerate, lo, scaled * np.where(degenerate, 1.0, span) + lo)


def save_basis(path, basis: PODBasis, scaler_min: np.ndarray,
               scaler_max: np.ndarray) -> None:
    """Write a basis plus scaler in the binary container.

    Layout (little-endian): ``u32 n_points | u32 n_modes`` then, as 64-bit
    floats: the mean (``n_points``), the modes row-major
    (``n_points * n_modes``), the eigenvalues, the scaler minima and the
    scaler maxima (``n_modes`` each).
    """
    n, m = basis.modes.shape
    blob = struct.pack("<II", n, m)
    for arr in (basis.mean, basis.modes, basis.eigenvalues, scaler_min, scaler_max):
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def load_basis(path) -> tuple[PODBasis, np.ndarray, np.ndarray]:
    """Read a container written by :func:`save_basis`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header = struct.calcsize("<II")
    if len(blob) < header:
        raise ValueError("basis file truncated before header")
    n, m = struct.unpack("<II", blob[:header])
    expected = header + 8 * (n + n * m + 3 * m)
    if len(blob) != expected:
        raise ValueError(f"basis file size {len(blob)} != expected {expected}")
    vals = np.frombuffer(blob, dtype="<f8", offset=header)
    mean, vals = vals[:n], vals[n:]
    modes, vals = vals[:n * m].reshape(n, m), vals[n * m:]
    eigenvalues, vals = vals[:m], vals[m:]
    scaler_min, scaler_max = vals[:m], vals[m:]
    basis = PODBasis(mean=mean.copy(), modes=modes.copy(),
                     eigenvalues=eigenvalues.copy())
    return basis, scaler_min.copy(), scaler_max.copy()
