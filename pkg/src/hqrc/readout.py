"""Linear readout: ridge training, prediction, clipping, weight replication.

The readout maps an ``n_features``-dimensional reservoir state (with a
constant bias feature prepended) to ``n_outputs`` targets.  Training is the
closed-form ridge solve ``w = (X^T X + beta I)^{-1} X^T y`` carried out with
a Cholesky factorization plus iterative refinement rather than an explicit
inverse.  For autoregressive operation the trained columns are replicated
across reservoirs according to the input tiling.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg

_RESIDUAL_REL_TOL = 1e-8
_MAX_REFINEMENTS = 4


@dataclass
class TrainingMatrix:
    """Feature rows with a leading all-ones bias column, plus targets.

    ``entries`` has shape ``(K, n_features + 1)`` and ``targets`` shape
    ``(K, n_outputs)``.
    """

    entries: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.entries.ndim != 2 or self.targets.ndim != 2:
            raise ValueError("entries and targets must be 2-d arrays")
        if self.entries.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"row mismatch: {self.entries.shape[0]} feature rows vs "
                f"{self.targets.shape[0]} target rows")
        if self.entries.shape[1] < 1 or not np.all(self.entries[:, 0] == 1.0):
            raise ValueError("first column of the training matrix must be the constant 1.0 bias")
        if not (np.all(np.isfinite(self.entries)) and np.all(np.isfinite(self.targets))):
            raise ValueError("training data must be finite")

    @classmethod
    def from_states(cls, states: np.ndarray, targets: np.ndarray) -> "TrainingMatrix":
        """Prepend the bias column to raw state rows."""
        states = np.asarray(states, dtype=float)
        bias = np.ones((states.shape[0], 1))
        return cls(entries=np.hstack([bias, states]), targets=targets)

    @property
    def n_rows(self) -> int:
        return self.entries.shape[0]


@dataclass
class ReadoutWeights:
    """Trained weights ``(n_features + 1, n_outputs)`` and ridge parameter.

    ``replicated`` (``(n_features + 1, n_reservoirs)``), when set, copies the
    column of each input component to every reservoir tiled to it; it is what
    closed-loop mixing consumes.
    """

    w: np.ndarray
    beta: float
    replicated: np.ndarray | None = None

    @property
    def n_features(self) -> int:
        return self.w.shape[0] - 1

    @property
    def n_outputs(self) -> int:
        return self.w.shape[1]


def ridge_fit(data: TrainingMatrix, beta: float) -> ReadoutWeights:
    """Solve the ridge normal equations for all target columns at once.

    One factorization of ``X^T X + beta I`` is shared across columns; the
    bias weight is penalized like every other weight (the identity has full
    size).  The solution is refined until the residual
    ``||(X^T X + beta I) w - X^T y||`` drops below ``1e-8 ||X^T y||``;
    failure to reach that raises with advice to increase ``beta``.
    """
    if beta < 0.0:
        raise ValueError("ridge parameter beta must be non-negative")
    x = data.entries
    y = data.targets
    gram = x.T @ x + beta * np.eye(x.shape[1])
    rhs = x.T @ y
    rhs_norm = np.linalg.norm(rhs)

    try:
        factor = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError:
        if beta > 0.0:  # pragma: no cover - beta below machine noise of the gram
            raise np.linalg.LinAlgError(
                f"normal equations not positive definite at beta={beta!r}; "
                "increase beta")
        # Unregularized and rank deficient: the minimum-norm least-squares
        # solution still satisfies the normal equations when the system is
        # consistent; the residual gate below rejects it otherwise.
        w, *_ = np.linalg.lstsq(x, y, rcond=None)
    else:
        w = scipy.linalg.cho_solve(factor, rhs)
        for _ in range(_MAX_REFINEMENTS):
            residual = rhs - gram @ w
            if np.linalg.norm(residual) <= _RESIDUAL_REL_TOL * rhs_norm:
                break
            w = w + scipy.linalg.cho_solve(factor, residual)

    if np.linalg.norm(rhs - gram @ w) > _RESIDUAL_REL_TOL * rhs_norm:
        raise np.linalg.LinAlgError(
            f"ridge solve cannot meet the residual contract (beta={beta!r}); "
            "the system is numerically singular, use a larger beta")
    return ReadoutWeights(w=w, beta=float(beta))


def linear_output(weights: ReadoutWeights, z: np.ndarray) -> np.ndarray:
    """Unclipped readout ``w^T [1; z]``."""
    z = np.asarray(z, dtype=float)
    if z.shape != (weights.n_features,):
        raise ValueError(f"state length {z.shape} does not match readout ({weights.n_features},)")
    return weights.w[0] + z @ weights.w[1:]


def predict(weights: ReadoutWeights, z: np.ndarray) -> np.ndarray:
    """Readout prediction for one reservoir state, clipped to ``[0, 1]``."""
    return clip_unit(linear_output(weights, z))


def clip_unit(x: np.ndarray) -> np.ndarray:
    """Piecewise clip to ``[0, 1]``; NaN is rejected, never silently clipped."""
    arr = np.asarray(x, dtype=float)
    if np.isnan(arr).any():
        raise ValueError("cannot clip NaN values to [0, 1]")
    return np.clip(arr, 0.0, 1.0)


def replicate_weights(weights: ReadoutWeights, tiling: np.ndarray) -> ReadoutWeights:
    """Copy each trained output column to the reservoirs tiled to it.

    ``tiling[l]`` names the input component driving reservoir ``l``; the
    replicated matrix therefore has one column per reservoir.
    """
    tiling = np.asarray(tiling, dtype=int)
    n_out = weights.n_outputs
    if tiling.ndim != 1 or tiling.size == 0 or tiling.size % n_out != 0:
        raise ValueError(
            f"tiling of length {tiling.size} is inconsistent with {n_out} output(s)")
    if tiling.min() < 0 or tiling.max() >= n_out:
        raise ValueError(f"tiling entries must index outputs 0..{n_out - 1}")
    return ReadoutWeights(w=weights.w, beta=weights.beta,
                          replicated=weights.w[:, tiling].copy())


def save_weights(path, weights: ReadoutWeights) -> None:
    """Write weights in the flat binary layout.

    Layout (all little-endian): ``u32 n_rows | u32 n_cols | u32 n_rep_cols
    (0 when absent) | f64 beta`` followed by ``w`` row-major as 64-bit
    floats, then the replicated matrix row-major if present.
    """
    rows, cols = weights.w.shape
    rep_cols = 0 if weights.replicated is None else weights.replicated.shape[1]
    blob = struct.pack("<IIId", rows, cols, rep_cols, weights.beta)
    blob += np.ascontiguousarray(weights.w, dtype="<f8").tobytes()
    if weights.replicated is not None:
        blob += np.ascontiguousarray(weights.replicated, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def load_weights(path) -> ReadoutWeights:
    """Read weights written by :func:`save_weights`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header = struct.calcsize("<IIId")
    if len(blob) < header:
        raise ValueError(f"weight file truncated: {len(blob)} bytes < {header}-byte header")
    rows, cols, rep_cols, beta = struct.unpack("<IIId", blob[:header])
    expected = header + 8 * rows * (cols + rep_cols)
    if len(blob) != expected:
        raise ValueError(f"weight file size {len(blob)} != expected {expected}")
    w = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=header)
    w = w.reshape(rows, cols).copy()
    replicated = None
    if rep_cols:
        replicated = np.frombuffer(blob, dtype="<f8", count=rows * rep_cols,
                                   offset=header + 8 * rows * cols)
        replicated = replicated.reshape(rows, rep_cols).copy()
    return ReadoutWeights(w=w, beta=beta, replicated=replicated)
