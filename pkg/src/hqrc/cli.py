"""Command-line entry points for the forecasting toolkit.

Subcommands: ``synth``, ``pod fit|apply``, ``train``, ``forecast``,
``sweep``, ``ablate washout|structure|modes``, ``perturb`` and ``metrics``.
Outputs are CSV/JSON files plus binary model artifacts; the process exits 0
only when the requested work completed fully.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .data import load_series, synth_series, write_series, LandMask
from .experiment import (
    ExperimentConfig,
    ablate_modes,
    ablate_structure,
    ablate_washout,
    ensemble_forecast,
    load_model,
    prepare_dataset,
    perturbation_study,
    run_forecast,
    run_train,
    save_model,
    sweep,
    write_coefficients_csv,
    write_csv,
    write_json,
)
from .metrics import rmnse, rmse
from .pod import fit_pod, load_basis, project, save_basis, scale


def _parse_values(text: str, cast):
    return tuple(cast(v) for v in text.split(",") if v)


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if getattr(args, "data", None):
        cfg = replace(cfg, data_path=args.data)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "out_dir", None):
        cfg = replace(cfg, out_dir=args.out_dir)
    return cfg


def _dataset_for(cfg: ExperimentConfig, basis=None, scaler=None):
    if cfg.data_path is None:
        raise SystemExit("config needs a data_path (or pass --data)")
    series, mask = load_series(cfg.data_path)
    return prepare_dataset(series, mask, cfg, basis=basis, scaler=scaler), series, mask


def _cmd_synth(args) -> None:
    series = synth_series(args.kind, args.points, args.steps, args.seed,
                          n_modes=args.modes)
    mask = LandMask.all_ocean(series.n_lat, series.n_lon)
    write_series(args.out, series, mask)
    print(f"wrote {args.out}: {series.n_time} x {series.n_lat} x {series.n_lon} "
          f"({args.kind}, seed {args.seed})")


def _cmd_pod_fit(args) -> None:
    from .data import flatten

    series, mask = load_series(args.data)
    columns = flatten(series, mask)
    n_train = args.train_snapshots or columns.shape[1]
    basis, modal = fit_pod(columns[:, :n_train], args.modes)
    save_basis(args.out, basis, modal.scaler_min, modal.scaler_max)
    print(f"wrote {args.out}: {basis.n_modes} modes over {basis.n_points} cells, "
          f"eigenvalues {np.array2string(basis.eigenvalues, precision=3)}")


def _cmd_pod_apply(args) -> None:
    from .data import flatten
    from .pod import ModalSeries

    series, mask = load_series(args.data)
    basis, scaler_min, scaler_max = load_basis(args.basis)
    coeffs = project(basis, flatten(series, mask))
    if args.scaled:
        modal = ModalSeries(coeffs=coeffs, scaler_min=scaler_min, scaler_max=scaler_max)
        coeffs = scale(modal, coeffs)
    write_coefficients_csv(args.out, coeffs)
    print(f"wrote {args.out}: {coeffs.shape[0]} steps x {coeffs.shape[1]} modes"
          + (" (scaled)" if args.scaled else ""))


def _cmd_train(args) -> None:
    cfg = _load_config(args)
    dataset, _, _ = _dataset_for(cfg)
    model = run_train(cfg, dataset)
    out = args.model_dir or os.path.join(cfg.out_dir, f"{cfg.model}-seed{cfg.seed}")
    save_model(out, model, dataset)
    print(f"trained {cfg.model} in {model.train_seconds:.2f}s -> {out}")


def _cmd_forecast(args) -> None:
    model, basis, scaler = load_model(args.model)
    cfg = model.config
    if args.data:
        cfg = replace(cfg, data_path=args.data)
        model = replace(model, config=cfg)
    dataset, _, _ = _dataset_for(cfg, basis=basis, scaler=scaler)
    result = run_forecast(model, dataset, span=args.span, start_index=args.start,
                          horizon=args.horizon)
    out_dir = args.out or args.model
    os.makedirs(out_dir, exist_ok=True)
    tag = f"{result.span}-start{result.start_index}"
    write_coefficients_csv(os.path.join(out_dir, f"forecast-{tag}.csv"),
                           result.predicted_coeffs, start_index=result.start_index)
    payload = result.report.as_dict()
    payload.update({"span": result.span, "start_index": result.start_index,
                    "persistence_rmnse": result.persistence_rmnse,
                    "truncated": result.truncated})
    write_json(os.path.join(out_dir, f"report-{tag}.json"), payload)
    print(json.dumps(payload, sort_keys=True))


def _cmd_sweep(args) -> None:
    cfg = _load_config(args)
    dataset, _, _ = _dataset_for(cfg)
    with open(args.grid, "r", encoding="utf-8") as fh:
        grid = json.load(fh)
    result = sweep(cfg, dataset, grid, top_k=args.top_k, workers=args.workers)
    os.makedirs(cfg.out_dir, exist_ok=True)
    keys = sorted(grid)
    rows = [[rank, e.rmnse] + [e.overrides[k] for k in keys]
            for rank, e in enumerate(result.entries)]
    write_csv(os.path.join(cfg.out_dir, "sweep.csv"),
              ["rank", "rmnse"] + keys, rows)
    write_json(os.path.join(cfg.out_dir, "sweep.json"),
               {"top_k": result.top_k,
                "entries": [{"overrides": e.overrides, "rmnse": e.rmnse}
                            for e in result.entries]})
    for rank, overrides in enumerate(result.top_k):
        candidate = replace(cfg, **overrides)
        model = run_train(candidate, dataset)
        save_model(os.path.join(cfg.out_dir, f"top{rank}"), model, dataset)
    if args.ensemble and result.top_k:
        models = [run_train(replace(cfg, **o), dataset) for o in result.top_k]
        ens = ensemble_forecast(models, dataset)
        payload = {"report_of_mean": ens.report.as_dict(),
                   "mean_member_rmse_grid": ens.mean_member_rmse_grid,
                   "mean_member_rmnse": ens.mean_member_rmnse,
                   "persistence_rmnse": ens.persistence_rmnse}
        write_json(os.path.join(cfg.out_dir, "ensemble.json"), payload)
    best = result.entries[0]
    print(f"swept {len(result.entries)} configs; best rmnse {best.rmnse:.4f} at "
          f"{best.overrides}")


def _cmd_ablate(args) -> None:
    cfg = _load_config(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    if args.which == "washout":
        dataset, _, _ = _dataset_for(cfg)
        rows = ablate_washout(cfg, dataset, dl_values=_parse_values(args.dl, int),
                              start_index=args.start)
        header = ["washout", "rmse_train", "rmse_region_train",
                  "rmse_test", "rmse_region_test"]
        out = os.path.join(cfg.out_dir, "ablate-washout.csv")
    elif args.which == "structure":
        dataset, _, _ = _dataset_for(cfg)
        rows = ablate_structure(cfg, dataset, args.axis,
                                _parse_values(args.values, float))
        header = ["axis", "value", "rmnse"]
        out = os.path.join(cfg.out_dir, f"ablate-{args.axis}.csv")
    else:
        if cfg.data_path is None:
            raise SystemExit("config needs a data_path (or pass --data)")
        series, mask = load_series(cfg.data_path)
        rows = ablate_modes(cfg, series, mask,
                            mode_counts=_parse_values(args.modes, int),
                            start_index=args.start)
        header = ["n_modes", "rmse_train", "rmse_region_train", "rmse_test",
                  "rmse_region_test", "rmnse_test", "recon_floor_train"]
        out = os.path.join(cfg.out_dir, "ablate-modes.csv")
    write_csv(out, header, [[row[h] for h in header] for row in rows])
    print(f"wrote {out} ({len(rows)} rows)")


def _cmd_perturb(args) -> None:
    model, basis, scaler = load_model(args.model)
    cfg = model.config
    if args.data:
        cfg = replace(cfg, data_path=args.data)
        model = replace(model, config=cfg)
    dataset, _, _ = _dataset_for(cfg, basis=basis, scaler=scaler)
    result = perturbation_study(model, dataset, epsilon=args.epsilon,
                                n_draws=args.draws, seed=args.seed,
                                span=args.span, start_index=args.start)
    out_dir = args.out or args.model
    os.makedirs(out_dir, exist_ok=True)
    m = result.mean_coeffs.shape[1]
    header = (["step"] + [f"mean_{j}" for j in range(m)]
              + [f"std_{j}" for j in range(m)])
    rows = [[t] + list(map(float, result.mean_coeffs[t]))
            + list(map(float, result.std_coeffs[t]))
            for t in range(result.mean_coeffs.shape[0])]
    write_csv(os.path.join(out_dir, "perturbation.csv"), header, rows)
    write_json(os.path.join(out_dir, "perturbation.json"),
               {"epsilon": args.epsilon, "n_draws": args.draws,
                "mean_deviation": result.mean_deviation})
    print(f"perturbation mean deviation {result.mean_deviation:.3e} "
          f"(epsilon {args.epsilon}, {args.draws} draws)")


def _cmd_metrics(args) -> None:
    from .data import flatten
    from .pod import ModalSeries, reconstruct

    series, mask = load_series(args.data)
    basis, scaler_min, scaler_max = load_basis(args.basis)
    pred = np.loadtxt(args.pred, delimiter=",", skiprows=1)
    steps = pred[:, 0].astype(int)
    coeffs = pred[:, 1:]
    columns = flatten(series, mask)
    truth_coeffs = project(basis, columns[:, steps])
    truth_grids = columns[:, steps].T
    grids = reconstruct(basis, coeffs).T
    payload = {
        "rmse_grid": rmse(grids, truth_grids),
        "rmnse_modal": rmnse(coeffs, truth_coeffs),
        "steps": [int(steps[0]), int(steps[-1])],
    }
    if args.out:
        write_json(args.out, payload)
    print(json.dumps(payload, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hqrc",
                                     description="Quantum-reservoir forecasting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic GSF dataset")
    p.add_argument("--kind", default="sinusoid-mix",
                   choices=["sinusoid-mix", "noisy-seasonal"])
    p.add_argument("--points", type=int, default=64)
    p.add_argument("--steps", type=int, default=900)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--modes", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    pod_parser = sub.add_parser("pod", help="fit or apply a modal basis")
    pod_sub = pod_parser.add_subparsers(dest="which", required=True)
    p = pod_sub.add_parser("fit")
    p.add_argument("--data", required=True)
    p.add_argument("--modes", type=int, default=5)
    p.add_argument("--train-snapshots", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pod_fit)
    p = pod_sub.add_parser("apply")
    p.add_argument("--data", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--scaled", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pod_apply)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--model-dir")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("forecast", help="closed-loop rollout of a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    p.add_argument("--span", default="test", choices=["train", "test"])
    p.add_argument("--start", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_forecast)

    p = sub.add_parser("sweep", help="grid search with top-k ranking")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--data")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--ensemble", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    ablate_parser = sub.add_parser("ablate", help="appendix-style ablations")
    ablate_sub = ablate_parser.add_subparsers(dest="which", required=True)
    p = ablate_sub.add_parser("washout")
    p.add_argument("--config", required=True)
    p.add_argument("--data")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--dl", default="20,30,40")
    p.add_argument("--start", type=int, default=None)
    p.set_defaults(func=_cmd_ablate)
    p = ablate_sub.add_parser("structure")
    p.add_argument("--config", required=True)
    p.add_argument("--data")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--axis", required=True,
                   choices=["n_qubits", "n_reservoirs", "coupling_j", "tau"])
    p.add_argument("--values", required=True)
    p.set_defaults(func=_cmd_ablate)
    p = ablate_sub.add_parser("modes")
    p.add_argument("--config", required=True)
    p.add_argument("--data")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--modes", default="5,10")
    p.add_argument("--start", type=int, default=None)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("perturb", help="first-step sensitivity study")
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--draws", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--span", default="test", choices=["train", "test"])
    p.add_argument("--start", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_perturb)

    p = sub.add_parser("metrics", help="score a saved prediction CSV")
    p.add_argument("--pred", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_metrics)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
