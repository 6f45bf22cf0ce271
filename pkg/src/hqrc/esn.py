"""Echo state network baseline sharing the reservoir training protocol.

A non-leaky tanh network: ``h <- tanh(W_rec h + W_in u)`` with a sparse
random recurrent matrix rescaled to a target spectral radius and a ridge
readout on ``[1; h]``.  Training and autoregressive forecasting mirror the
quantum pipeline (washout, one-step-ahead ridge fit, clipped closed loop).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .readout import ReadoutWeights, TrainingMatrix, clip_unit, linear_output, ridge_fit

_REDRAW_ATTEMPTS = 10


@dataclass
class EsnConfig:
    """Reservoir size and the standard sparse-random initialization knobs."""

    units: int
    degree: int = 10
    radius: float = 0.9
    input_scale: float = 1.0
    ridge_beta: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.units < 1:
            raise ValueError("units must be positive")
        if not 0 < self.degree <= self.units:
            raise ValueError("degree must lie in [1, units]")
        if not 0.0 < self.radius <= 1.0:
            raise ValueError("radius must lie in (0, 1]")


@dataclass
class EsnState:
    """Hidden state plus the fixed random weight matrices."""

    h: np.ndarray
    w_rec: np.ndarray
    w_in: np.ndarray

    def reset(self) -> None:
        self.h = np.zeros_like(self.h)


def spectral_radius(w: np.ndarray) -> float:
    """Largest eigenvalue magnitude."""
    return float(np.max(np.abs(np.linalg.eigvals(w))))


def esn_init(cfg: EsnConfig, n_in: int) -> EsnState:
    """Draw the recurrent and input matrices and rescale the former.

    Stream definition (PCG64 seeded with ``cfg.seed``): the Bernoulli
    sparsity mask with per-row keep probability ``degree / units``, then the
    uniform ``[-1, 1]`` recurrent values, then the uniform
    ``[-input_scale, input_scale]`` input weights.  A draw with zero
    spectral radius is retried with the seed advanced by one.
    """
    for attempt in range(_REDRAW_ATTEMPTS):
        rng = np.random.default_rng(cfg.seed + attempt)
        keep = rng.random((cfg.units, cfg.units)) < cfg.degree / cfg.units
        w_rec = np.where(keep, rng.uniform(-1.0, 1.0, (cfg.units, cfg.units)), 0.0)
        w_in = rng.uniform(-cfg.input_scale, cfg.input_scale, (cfg.units, n_in))
        rho = spectral_radius(w_rec)
        if rho > 0.0:
            return EsnState(h=np.zeros(cfg.units), w_rec=w_rec * (cfg.radius / rho),
                            w_in=w_in)
    raise RuntimeError(f"could not draw a recurrent matrix with nonzero spectral "
                       f"radius after {_REDRAW_ATTEMPTS} attempts (seed {cfg.seed})")


def esn_step(state: EsnState, u: np.ndarray) -> np.ndarray:
    """Advance the hidden state: ``h <- tanh(W_rec h + W_in u)``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (state.w_in.shape[1],):
        raise ValueError(f"input shape {u.shape} does not match "
                         f"({state.w_in.shape[1]},)")
    state.h = np.tanh(state.w_rec @ state.h + state.w_in @ u)
    return state.h


def esn_train(state: EsnState, inputs: np.ndarray, washout: int,
              beta: float) -> ReadoutWeights:
    """One-step-ahead ridge fit after a washout, from a zeroed hidden state.

    Row ``k`` of the feature matrix is the state after consuming
    ``inputs[k]`` (for ``k`` past the washout); its target is
    ``inputs[k + 1]``.
    """
    inputs = np.asarray(inputs, dtype=float)
    n_steps = len(inputs)
    if n_steps < washout + 2:
        raise ValueError(f"{n_steps} inputs cannot cover washout {washout} plus a "
                         "training pair")
    state.reset()
    rows = np.empty((n_steps - 1 - washout, state.h.shape[0]))
    for k in range(n_steps - 1):
        esn_step(state, inputs[k])
        if k >= washout:
            rows[k - washout] = state.h
    return ridge_fit(TrainingMatrix.from_states(rows, inputs[washout + 1:]), beta)


def esn_forecast(state: EsnState, weights: ReadoutWeights, warmup: np.ndarray,
                 horizon: int, first_step_offset: np.ndarray | None = None) -> np.ndarray:
    """Closed-loop rollout after teacher-forced warmup from a zeroed state.

    Each step emits the clipped readout and feeds it back as the next input.
    ``first_step_offset`` perturbs the raw readout of the first step only.
    """
    state.reset()
    for u in np.asarray(warmup, dtype=float):
        esn_step(state, u)
    predictions = np.empty((horizon, weights.n_outputs))
    for k in range(horizon):
        raw = linear_output(weights, state.h)
        if k == 0 and first_step_offset is not None:
            raw = raw + np.asarray(first_step_offset, dtype=float)
        predictions[k] = clip_unit(raw)
        esn_step(state, predictions[k])
    return predictions
