"""Experiment orchestration: configuration, training runs, autoregressive
rollouts, hyperparameter sweeps, ensembling and the ablation studies.

The pipeline is: compress a gridded series onto a modal basis, min/max-scale
the training coefficients into ``[0, 1]``, teacher-force a reservoir (quantum
ensemble or the classical baseline) through a washout plus the training span,
ridge-fit a one-step-ahead readout, then roll the trained system out closed
loop and score the reconstructed grids.

All result files are written atomically (write-temp-then-rename) and every
run is a deterministic function of its configuration and seed.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import (
    DEFAULT_TRAIN_SNAPSHOTS,
    GriddedSeries,
    LandMask,
    RegionSpec,
    flatten,
    load_series,
    region_indices,
)
from .esn import EsnConfig, EsnState, esn_init, esn_step
from .metrics import MetricReport, ensemble_average, reconstruction_floor, rmnse, rmse
from .pod import (
    ModalSeries,
    PODBasis,
    fit_pod,
    load_basis,
    project,
    reconstruct,
    save_basis,
    scale,
    unscale,
)
from .readout import (
    ReadoutWeights,
    TrainingMatrix,
    clip_unit,
    linear_output,
    load_weights,
    replicate_weights,
    ridge_fit,
    save_weights,
)
from .reservoir import HigherOrderReservoir

logger = logging.getLogger(__name__)

SPANS = ("train", "test")

STRUCTURE_AXES = ("n_qubits", "n_reservoirs", "coupling_j", "tau")


@dataclass
class ExperimentConfig:
    """Declarative description of one training/forecast run.

    Serialized as flat JSON with exactly these keys.  ``region`` is either
    ``None`` or ``(lat_min, lat_max, lon_min, lon_max)`` and defaults to the
    equatorial East Pacific evaluation window.
    """

    model: str = "hqrc"
    data_path: str | None = None
    out_dir: str = "runs"
    seed: int = 1
    n_modes: int = 5
    train_snapshots: int | None = None
    washout: int = 40
    horizon: int = 300
    eval_start_indices: tuple[int, ...] = (116, 40, 66)
    validation_span: str = "test"
    region: tuple[float, float, float, float] | None = (-10.0, 10.0, 200.0, 250.0)
    # quantum ensemble
    n_qubits: int = 6
    n_reservoirs: int = 5
    coupling_j: float = 2.0
    tau: float = 4.0
    v_nodes: int = 10
    alpha: float = 0.5
    ridge_beta: float = 1e-7
    shared_hamiltonian: bool = True
    # classical baseline
    esn_units: int = 500
    esn_degree: int = 10
    esn_radius: float = 0.9
    esn_input_scale: float = 1.0

    def __post_init__(self):
        if self.model not in ("hqrc", "esn"):
            raise ValueError(f"model must be 'hqrc' or 'esn', got {self.model!r}")
        if self.validation_span not in SPANS:
            raise ValueError(f"validation_span must be one of {SPANS}")
        if self.washout < 0 or self.horizon < 1:
            raise ValueError("washout must be >= 0 and horizon >= 1")
        self.eval_start_indices = tuple(int(i) for i in self.eval_start_indices)
        if self.region is not None:
            self.region = tuple(float(v) for v in self.region)

    def region_spec(self) -> RegionSpec | None:
        if self.region is None:
            return None
        return RegionSpec(*self.region)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        payload = json.loads(text)
        unknown = set(payload) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**payload)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


# --------------------------------------------------------------------------
# Dataset preparation
# --------------------------------------------------------------------------


@dataclass
class CompressedDataset:
    """Everything a run needs: basis, scaler, per-span coefficients and
    the time-major truth grids for scoring."""

    basis: PODBasis
    scaler: ModalSeries
    train_coeffs: np.ndarray
    test_coeffs: np.ndarray
    train_scaled: np.ndarray
    test_scaled: np.ndarray
    train_grids: np.ndarray
    test_grids: np.ndarray
    mask: LandMask
    region_idx: np.ndarray | None

    def span_scaled(self, span: str) -> np.ndarray:
        _check_span(span)
        return self.train_scaled if span == "train" else self.test_scaled

    def span_coeffs(self, span: str) -> np.ndarray:
        _check_span(span)
        return self.train_coeffs if span == "train" else self.test_coeffs

    def span_grids(self, span: str) -> np.ndarray:
        _check_span(span)
        return self.train_grids if span == "train" else self.test_grids


def _check_span(span: str) -> None:
    if span not in SPANS:
        raise ValueError(f"span must be one of {SPANS}, got {span!r}")


def prepare_dataset(series: GriddedSeries, mask: LandMask, cfg: ExperimentConfig,
                    basis: PODBasis | None = None,
                    scaler: ModalSeries | None = None) -> CompressedDataset:
    """Split, compress and scale a gridded series.

    The basis and scaler are fitted on the training span only; pass a
    previously fitted pair (e.g. from a model artifact) to reuse it instead
    of refitting.
    """
    columns = flatten(series, mask)
    n_time = columns.shape[1]
    n_train = cfg.train_snapshots if cfg.train_snapshots is not None else DEFAULT_TRAIN_SNAPSHOTS
    if not 1 <= n_train < n_time:
        raise ValueError(f"train_snapshots {n_train} must lie in [1, {n_time - 1}]")
    train_cols = columns[:, :n_train]
    test_cols = columns[:, n_train:]

    if basis is None or scaler is None:
        basis, scaler = fit_pod(train_cols, cfg.n_modes)
        train_coeffs = scaler.coeffs
    else:
        train_coeffs = project(basis, train_cols)
    test_coeffs = project(basis, test_cols)

    region_idx = None
    region = cfg.region_spec()
    if region is not None:
        try:
            region_idx = region_indices(mask, region, lat0=series.lat0,
                                        lon0=series.lon0, dlat=series.dlat,
                                        dlon=series.dlon)
        except ValueError as exc:
            logger.warning("region %s not resolvable on this grid (%s); "
                           "region metrics disabled", region, exc)

    return CompressedDataset(
        basis=basis, scaler=scaler,
        train_coeffs=train_coeffs, test_coeffs=test_coeffs,
        train_scaled=scale(scaler, train_coeffs),
        test_scaled=scale(scaler, test_coeffs),
        train_grids=train_cols.T.copy(), test_grids=test_cols.T.copy(),
        mask=mask, region_idx=region_idx)


def load_dataset(cfg: ExperimentConfig, basis: PODBasis | None = None,
                 scaler: ModalSeries | None = None) -> CompressedDataset:
    """Read the configured GSF file and compress it."""
    if cfg.data_path is None:
        raise ValueError("config has no data_path")
    series, mask = load_series(cfg.data_path)
    return prepare_dataset(series, mask, cfg, basis=basis, scaler=scaler)


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass
class TrainedModel:
    """A trained readout together with the configuration that produced it."""

    config: ExperimentConfig
    weights: ReadoutWeights
    train_seconds: float


def _build_ensemble(cfg: ExperimentConfig) -> HigherOrderReservoir:
    return HigherOrderReservoir.build(
        n_qubits=cfg.n_qubits, n_reservoirs=cfg.n_reservoirs, n_in=cfg.n_modes,
        coupling_j=cfg.coupling_j, tau=cfg.tau, v_nodes=cfg.v_nodes,
        alpha=cfg.alpha, seed=cfg.seed, shared_hamiltonian=cfg.shared_hamiltonian)


def _build_esn(cfg: ExperimentConfig) -> EsnState:
    esn_cfg = EsnConfig(units=cfg.esn_units, degree=cfg.esn_degree,
                        radius=cfg.esn_radius, input_scale=cfg.esn_input_scale,
                        ridge_beta=cfg.ridge_beta, seed=cfg.seed)
    return esn_init(esn_cfg, n_in=cfg.n_modes)


def run_train(cfg: ExperimentConfig, dataset: CompressedDataset) -> TrainedModel:
    """Washout, teacher-forced state collection and ridge fit.

    The feature row for step ``k`` is the reservoir state after consuming
    input ``k``; its target is input ``k + 1``.
    """
    inputs = dataset.train_scaled
    if len(inputs) < cfg.washout + 2:
        raise ValueError(f"training span of {len(inputs)} steps cannot cover "
                         f"washout {cfg.washout} plus one training pair")
    start = time.perf_counter()
    if cfg.model == "hqrc":
        ensemble = _build_ensemble(cfg)
        ensemble.washout(inputs, cfg.washout)
        states = ensemble.run_open_loop(inputs[cfg.washout:-1])
        weights = ridge_fit(TrainingMatrix.from_states(states, inputs[cfg.washout + 1:]),
                            cfg.ridge_beta)
        weights = replicate_weights(weights, ensemble.tiling)
    else:
        state = _build_esn(cfg)
        state.reset()
        rows = np.empty((len(inputs) - 1 - cfg.washout, cfg.esn_units))
        for k in range(len(inputs) - 1):
            esn_step(state, inputs[k])
            if k >= cfg.washout:
                rows[k - cfg.washout] = state.h
        weights = ridge_fit(TrainingMatrix.from_states(rows, inputs[cfg.washout + 1:]),
                            cfg.ridge_beta)
    return TrainedModel(config=cfg, weights=weights,
                        train_seconds=time.perf_counter() - start)


# --------------------------------------------------------------------------
# Closed-loop rollout
# --------------------------------------------------------------------------


@dataclass
class RolloutState:
    """Mutable state of a rollout; snapshot/resume gives bit-identical
    continuations."""

    kind: str
    steps_done: int
    ensemble: HigherOrderReservoir | None = None
    esn: EsnState | None = None


def start_rollout(model: TrainedModel, dataset: CompressedDataset, span: str,
                  start_index: int) -> RolloutState:
    """Fresh reservoir warmed up on the ``washout`` true inputs ending at
    ``start_index``; the first prediction targets ``start_index`` itself."""
    cfg = model.config
    scaled = dataset.span_scaled(span)
    if start_index < cfg.washout:
        raise ValueError(f"start_index {start_index} leaves no room for the "
                         f"{cfg.washout}-step warm-up")
    if start_index > len(scaled):
        raise ValueError(f"start_index {start_index} beyond span of {len(scaled)} steps")
    warm = scaled[start_index - cfg.washout:start_index]
    if cfg.model == "hqrc":
        ensemble = _build_ensemble(cfg)
        ensemble.washout(warm, len(warm))
        return RolloutState(kind="hqrc", steps_done=0, ensemble=ensemble)
    state = _build_esn(cfg)
    state.reset()
    for u in warm:
        esn_step(state, u)
    return RolloutState(kind="esn", steps_done=0, esn=state)


def rollout_steps(model: TrainedModel, state: RolloutState, n_steps: int,
                  first_step_offset: np.ndarray | None = None) -> np.ndarray:
    """Advance the closed loop ``n_steps``, returning the clipped scaled
    predictions.

    ``first_step_offset`` perturbs the raw readout at global step 0 only
    (the sensitivity-study hook); resumed rollouts past step 0 ignore it.
    """
    predictions = np.empty((n_steps, model.weights.n_outputs))
    for i in range(n_steps):
        offset = first_step_offset if (state.steps_done == 0 and
                                       first_step_offset is not None) else None
        if state.kind == "hqrc":
            ensemble = state.ensemble
            raw = linear_output(model.weights, ensemble.z)
            if offset is not None:
                raw = raw + np.asarray(offset, dtype=float)
            predictions[i] = clip_unit(raw)
            ensemble.step(ensemble.mix_input_closed(model.weights, offset=offset))
        else:
            esn = state.esn
            raw = linear_output(model.weights, esn.h)
            if offset is not None:
                raw = raw + np.asarray(offset, dtype=float)
            predictions[i] = clip_unit(raw)
            esn_step(esn, predictions[i])
        state.steps_done += 1
    return predictions


def rollout_snapshot(state: RolloutState) -> dict:
    """Arrays capturing the rollout exactly; see :func:`resume_rollout`."""
    snap = {"kind": np.array(state.kind), "steps_done": np.array(state.steps_done)}
    if state.kind == "hqrc":
        snap["z"] = state.ensemble.z.copy()
        for l, res in enumerate(state.ensemble.reservoirs):
            snap[f"rho_{l}"] = res.state.copy()
    else:
        snap["h"] = state.esn.h.copy()
    return snap


def save_checkpoint(path, state: RolloutState) -> None:
    """Persist a mid-rollout snapshot (numpy archive, written atomically)."""
    snap = rollout_snapshot(state)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)),
                               suffix=".npz")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **snap)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> dict:
    with np.load(path) as archive:
        return {key: archive[key] for key in archive.files}


def resume_rollout(model: TrainedModel, snapshot: dict) -> RolloutState:
    """Rebuild the deterministic machinery and restore the saved state."""
    kind = str(snapshot["kind"])
    steps_done = int(snapshot["steps_done"])
    if kind != model.config.model:
        raise ValueError(f"checkpoint is for a {kind!r} model, config says "
                         f"{model.config.model!r}")
    if kind == "hqrc":
        ensemble = _build_ensemble(model.config)
        ensemble.z = np.array(snapshot["z"])
        for l, res in enumerate(ensemble.reservoirs):
            res.state = np.array(snapshot[f"rho_{l}"])
        return RolloutState(kind=kind, steps_done=steps_done, ensemble=ensemble)
    state = _build_esn(model.config)
    state.h = np.array(snapshot["h"])
    return RolloutState(kind=kind, steps_done=steps_done, esn=state)


# --------------------------------------------------------------------------
# Forecasting and scoring
# --------------------------------------------------------------------------


@dataclass
class ForecastResult:
    """Closed-loop predictions plus their error report.

    Predictions always cover the full requested horizon; when truth runs out
    earlier the metrics are computed on the overlap and ``truncated`` is
    set.  ``persistence_rmnse`` scores the repeat-last-coefficient baseline
    over the same window.
    """

    span: str
    start_index: int
    predicted_scaled: np.ndarray
    predicted_coeffs: np.ndarray
    predicted_grids: np.ndarray
    report: MetricReport
    persistence_rmnse: float
    truncated: bool


def run_forecast(model: TrainedModel, dataset: CompressedDataset,
                 span: str = "test", start_index: int | None = None,
                 horizon: int | None = None, *,
                 first_step_offset: np.ndarray | None = None) -> ForecastResult:
    """Warm up on true inputs, roll out closed loop and score."""
    cfg = model.config
    horizon = cfg.horizon if horizon is None else int(horizon)
    start_index = cfg.eval_start_indices[0] if start_index is None else int(start_index)

    state = start_rollout(model, dataset, span, start_index)
    predicted_scaled = rollout_steps(model, state, horizon, first_step_offset)
    predicted_coeffs = unscale(dataset.scaler, predicted_scaled)
    predicted_grids = reconstruct(dataset.basis, predicted_coeffs).T

    truth_coeffs_all = dataset.span_coeffs(span)
    n_eval = min(horizon, len(truth_coeffs_all) - start_index)
    if n_eval <= 0:
        raise ValueError(f"no truth overlaps a forecast starting at {start_index} "
                         f"in the {span!r} span")
    truncated = n_eval < horizon
    if truncated:
        logger.warning("horizon %d exceeds available truth; metrics cover %d steps",
                       horizon, n_eval)
    truth_coeffs = truth_coeffs_all[start_index:start_index + n_eval]
    truth_grids = dataset.span_grids(span)[start_index:start_index + n_eval]

    region_rmse = None
    if dataset.region_idx is not None:
        region_rmse = rmse(predicted_grids[:n_eval], truth_grids,
                           indices=dataset.region_idx)
    report = MetricReport(
        rmse_grid=rmse(predicted_grids[:n_eval], truth_grids),
        rmse_region=region_rmse,
        rmnse_modal=rmnse(predicted_coeffs[:n_eval], truth_coeffs),
        recon_floor=reconstruction_floor(dataset.basis, truth_grids),
        horizon=n_eval)

    anchor = truth_coeffs_all[max(start_index - 1, 0)]
    persistence = np.tile(anchor, (n_eval, 1))
    return ForecastResult(
        span=span, start_index=start_index,
        predicted_scaled=predicted_scaled, predicted_coeffs=predicted_coeffs,
        predicted_grids=predicted_grids, report=report,
        persistence_rmnse=rmnse(persistence, truth_coeffs), truncated=truncated)


def validation_rmnse(model: TrainedModel, dataset: CompressedDataset) -> float:
    """Mean modal RMNSE over the configured evaluation start indices."""
    cfg = model.config
    scores = [run_forecast(model, dataset, span=cfg.validation_span,
                           start_index=s).report.rmnse_modal
              for s in cfg.eval_start_indices]
    return float(np.mean(scores))


# --------------------------------------------------------------------------
# Sweeps, ensembles, ablations
# --------------------------------------------------------------------------


@dataclass
class SweepEntry:
    overrides: dict
    rmnse: float


@dataclass
class SweepResult:
    """Entries ranked by ascending validation RMNSE (ties broken by the
    lexicographic order of the override values)."""

    entries: list[SweepEntry]
    top_k: list[dict] = field(default_factory=list)


def enumerate_grid(grid: dict) -> list[dict]:
    """Cartesian product of the grid, keys sorted, value order preserved."""
    keys = sorted(grid)
    if not keys:
        raise ValueError("sweep grid is empty")
    return [dict(zip(keys, combo))
            for combo in itertools.product(*(grid[k] for k in keys))]


def _override_key(overrides: dict) -> tuple:
    return tuple((k, repr(overrides[k])) for k in sorted(overrides))


def _sweep_point(args: tuple) -> float:
    cfg, overrides, dataset = args
    candidate = replace(cfg, **overrides)
    return validation_rmnse(run_train(candidate, dataset), dataset)


def sweep(cfg: ExperimentConfig, dataset: CompressedDataset, grid: dict,
          top_k: int = 5, workers: int = 1) -> SweepResult:
    """Train and validate every configuration in the grid.

    With ``workers > 1`` configurations run in separate processes (they share
    nothing); the ranking is identical either way.
    """
    combos = enumerate_grid(grid)
    jobs = [(cfg, overrides, dataset) for overrides in combos]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(_sweep_point, jobs))
    else:
        scores = [_sweep_point(job) for job in jobs]
    entries = [SweepEntry(overrides=o, rmnse=float(s))
               for o, s in zip(combos, scores)]
    entries.sort(key=lambda e: (e.rmnse, _override_key(e.overrides)))
    return SweepResult(entries=entries,
                       top_k=[e.overrides for e in entries[:top_k]])


@dataclass
class EnsembleResult:
    """Top-k ensemble scored both ways: error of the ensemble-mean
    prediction and mean of the member errors (the two are reported side by
    side because either aggregation is defensible)."""

    mean_coeffs: np.ndarray
    std_coeffs: np.ndarray
    report: MetricReport
    member_reports: list[MetricReport]
    mean_member_rmse_grid: float
    mean_member_rmnse: float
    persistence_rmnse: float


def ensemble_forecast(models: list[TrainedModel], dataset: CompressedDataset,
                      span: str = "test", start_index: int | None = None,
                      horizon: int | None = None) -> EnsembleResult:
    """Average member predictions in unscaled coefficient space, then
    reconstruct and score the averaged trajectory."""
    if not models:
        raise ValueError("ensemble needs at least one model")
    results = [run_forecast(m, dataset, span=span, start_index=start_index,
                            horizon=horizon) for m in models]
    mean_coeffs, std_coeffs = ensemble_average([r.predicted_coeffs for r in results])
    first = results[0]
    n_eval = min(r.report.horizon for r in results)
    truth_coeffs = dataset.span_coeffs(span)[first.start_index:first.start_index + n_eval]
    truth_grids = dataset.span_grids(span)[first.start_index:first.start_index + n_eval]
    mean_grids = reconstruct(dataset.basis, mean_coeffs).T

    region_rmse = None
    if dataset.region_idx is not None:
        region_rmse = rmse(mean_grids[:n_eval], truth_grids, indices=dataset.region_idx)
    report = MetricReport(
        rmse_grid=rmse(mean_grids[:n_eval], truth_grids),
        rmse_region=region_rmse,
        rmnse_modal=rmnse(mean_coeffs[:n_eval], truth_coeffs),
        recon_floor=reconstruction_floor(dataset.basis, truth_grids),
        horizon=n_eval)
    return EnsembleResult(
        mean_coeffs=mean_coeffs, std_coeffs=std_coeffs, report=report,
        member_reports=[r.report for r in results],
        mean_member_rmse_grid=float(np.mean([r.report.rmse_grid for r in results])),
        mean_member_rmnse=float(np.mean([r.report.rmnse_modal for r in results])),
        persistence_rmnse=first.persistence_rmnse)


def ablate_washout(cfg: ExperimentConfig, dataset: CompressedDataset,
                   dl_values: tuple[int, ...] = (20, 30, 40),
                   start_index: int | None = None) -> list[dict]:
    """Retrain and score per washout length; one row per value."""
    rows = []
    for dl in dl_values:
        candidate = replace(cfg, washout=int(dl))
        model = run_train(candidate, dataset)
        train_fc = run_forecast(model, dataset, span="train", start_index=start_index)
        test_fc = run_forecast(model, dataset, span="test", start_index=start_index)
        rows.append({
            "washout": int(dl),
            "rmse_train": train_fc.report.rmse_grid,
            "rmse_region_train": train_fc.report.rmse_region,
            "rmse_test": test_fc.report.rmse_grid,
            "rmse_region_test": test_fc.report.rmse_region,
        })
    return rows


def ablate_structure(cfg: ExperimentConfig, dataset: CompressedDataset,
                     axis: str, values) -> list[dict]:
    """Sweep one structural axis, holding everything else at the config."""
    if axis not in STRUCTURE_AXES:
        raise ValueError(f"axis must be one of {STRUCTURE_AXES}, got {axis!r}")
    rows = []
    for value in values:
        cast = int(value) if axis in ("n_qubits", "n_reservoirs") else float(value)
        candidate = replace(cfg, **{axis: cast})
        model = run_train(candidate, dataset)
        rows.append({"axis": axis, "value": cast,
                     "rmnse": validation_rmnse(model, dataset)})
    return rows


def ablate_modes(cfg: ExperimentConfig, series: GriddedSeries, mask: LandMask,
                 mode_counts: tuple[int, ...] = (5, 10),
                 start_index: int | None = None) -> list[dict]:
    """Refit the compression at each mode count and rerun the pipeline."""
    rows = []
    for m in mode_counts:
        candidate = replace(cfg, n_modes=int(m))
        dataset = prepare_dataset(series, mask, candidate)
        model = run_train(candidate, dataset)
        train_fc = run_forecast(model, dataset, span="train", start_index=start_index)
        test_fc = run_forecast(model, dataset, span="test", start_index=start_index)
        rows.append({
            "n_modes": int(m),
            "rmse_train": train_fc.report.rmse_grid,
            "rmse_region_train": train_fc.report.rmse_region,
            "rmse_test": test_fc.report.rmse_grid,
            "rmse_region_test": test_fc.report.rmse_region,
            "rmnse_test": test_fc.report.rmnse_modal,
            "recon_floor_train": train_fc.report.recon_floor,
        })
    return rows


@dataclass
class PerturbationResult:
    """Ensemble statistics of rollouts perturbed at their first step."""

    baseline_coeffs: np.ndarray
    mean_coeffs: np.ndarray
    std_coeffs: np.ndarray
    mean_deviation: float


def perturbation_study(model: TrainedModel, dataset: CompressedDataset,
                       epsilon: float, n_draws: int, seed: int,
                       span: str = "test", start_index: int | None = None,
                       horizon: int | None = None) -> PerturbationResult:
    """Roll out ``n_draws`` trajectories whose first-step readouts are
    shifted by uniform ``[-epsilon, epsilon]`` draws per component."""
    if epsilon < 0.0:
        raise ValueError("epsilon must be non-negative")
    if n_draws < 1:
        raise ValueError("n_draws must be at least 1")
    baseline = run_forecast(model, dataset, span=span, start_index=start_index,
                            horizon=horizon)
    rng = np.random.default_rng(seed)
    offsets = rng.uniform(-epsilon, epsilon, size=(n_draws, model.config.n_modes))
    members = [run_forecast(model, dataset, span=span, start_index=start_index,
                            horizon=horizon,
                            first_step_offset=offsets[i]).predicted_coeffs
               for i in range(n_draws)]
    mean_coeffs, std_coeffs = ensemble_average(members)
    return PerturbationResult(
        baseline_coeffs=baseline.predicted_coeffs,
        mean_coeffs=mean_coeffs, std_coeffs=std_coeffs,
        mean_deviation=rmse(mean_coeffs, baseline.predicted_coeffs))


# --------------------------------------------------------------------------
# Artifact and result persistence
# --------------------------------------------------------------------------


def write_atomic(path, data: bytes | str) -> None:
    """Write-temp-then-rename so results appear exactly once."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, payload) -> None:
    write_atomic(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_csv(path, header: list[str], rows: list[list]) -> None:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    write_atomic(path, "\n".join(lines) + "\n")


def write_coefficients_csv(path, coeffs: np.ndarray, start_index: int = 0) -> None:
    header = ["step"] + [f"coeff_{j}" for j in range(coeffs.shape[1])]
    rows = [[start_index + t] + [float(v) for v in coeffs[t]]
            for t in range(coeffs.shape[0])]
    write_csv(path, header, rows)


def save_model(dirpath, model: TrainedModel, dataset: CompressedDataset) -> None:
    """Model artifact: config + weights + fitted compression + metadata."""
    os.makedirs(dirpath, exist_ok=True)
    write_atomic(os.path.join(dirpath, "config.json"), model.config.to_json())
    tmp_weights = os.path.join(dirpath, "weights.bin")
    save_weights(tmp_weights, model.weights)
    save_basis(os.path.join(dirpath, "pod.podb"), dataset.basis,
               dataset.scaler.scaler_min, dataset.scaler.scaler_max)
    write_json(os.path.join(dirpath, "meta.json"),
               {"train_seconds": model.train_seconds,
                "n_features": model.weights.n_features,
                "n_outputs": model.weights.n_outputs})


def load_model(dirpath) -> tuple[TrainedModel, PODBasis, ModalSeries]:
    """Load an artifact; the returned basis/scaler feed prepare_dataset."""
    cfg = ExperimentConfig.load(os.path.join(dirpath, "config.json"))
    weights = load_weights(os.path.join(dirpath, "weights.bin"))
    basis, scaler_min, scaler_max = load_basis(os.path.join(dirpath, "pod.podb"))
    with open(os.path.join(dirpath, "meta.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    scaler = ModalSeries(coeffs=np.empty((0, basis.n_modes)),
                         scaler_min=scaler_min, scaler_max=scaler_max)
    model = TrainedModel(config=cfg, weights=weights,
                         train_seconds=float(meta.get("train_seconds", 0.0)))
    return model, basis, scaler
