"""Command-line experiment runner.

Every command resolves its configuration as defaults <- ``--config`` JSON
file <- explicit flags, echoes the result to ``<output_dir>/<command>.config.json``
and writes its outputs next to it.  Exit codes: 0 success, 2 usage or
configuration error, 3 runtime or numerical failure.

Units: structural inputs are consistent SI (Pa, m^2, kg/m^3, m, kg, N/m);
frequencies are angular (rad/s).  Heat quantities are normalized units.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import fem, heat, jobs, qgnn, qpe
from .errors import ConfigError, NumericalError, QuasimError
from .formats import (csv_text, dumps, frame_from_doc, matrices_to_doc, read_dataset, read_json, write_dataset,
                      write_json)

GLOBAL = {"seed": 0, "output_dir": ".", "format": "json"}

MODEL = {
    "model": None, "matrix_file": None,
    "elements": 10, "fixed_left": True, "youngs_modulus": 1.0, "area": 1.0, "density": 1.0, "length": 1.0,
    "nx": 4, "ny": 4, "spacing": 1.0, "mass_per_node": 1.0, "stiffness_per_edge": 1.0, "clamped": False,
}

COMMANDS = {
    "modal": {**MODEL, "include_shapes": False},
    "qpe": {**MODEL, **jobs.QPE_DEFAULTS},
    "qpe-sweep": {**MODEL, "ancilla_range": "3..8", "shots": 1000, "eigen_index": 0},
    "frf": {**MODEL, "zeta": 0.01, "omega_min": 0.0, "omega_max": 3.0, "n_points": 301, "omega_grid": None,
            "input_dof": 0, "output_dof": 0},
    "heat-gen": {"nx": 8, "ny": 8, "steps": 200, "alpha_dt": 0.1, "source_power": 1.0, "dwell": 2,
                 "rect": None, "boundary": "insulated", "fixed_value": 0.0, "initial_temperature": 0.0,
                 "val_fraction": 0.2},
    "qgnn-train": {"dataset": None, "epochs": 150, "learning_rate": 0.05, "optimizer": "momentum", "beta": 0.9,
                   "split": "train"},
    "qgnn-eval": {"model_file": None, "dataset": None, "split": "all", "rollout_steps": 10},
    "qgnn-predict": {"model_file": None, "frame": None},
}

_INT = {"elements", "nx", "ny", "n_ancilla", "shots", "eigen_index", "n_points", "input_dof", "output_dof",
        "steps", "dwell", "epochs", "rollout_steps", "seed"}
_FLOAT = {"youngs_modulus", "area", "density", "length", "spacing", "mass_per_node", "stiffness_per_edge",
          "omega_min", "omega_max", "alpha_dt", "source_power", "fixed_value", "initial_temperature",
          "val_fraction", "learning_rate", "beta", "min_weight"}
_BOOL = {"fixed_left", "clamped", "include_shapes"}
_CHOICES = {"model": (None, "bar", "membrane", "matrix"), "format": ("json", "csv"),
            "boundary": ("insulated", "fixed"), "optimizer": ("plain_gd", "momentum"),
            "split": ("train", "validation", "all")}


def _coerce(key, value):
    try:
        if value is None:
            return None
        if key in _INT:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if key in _FLOAT:
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if key in _BOOL:
            if not isinstance(value, bool):
                raise ValueError(value)
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: bad value {value!r}") from None
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(f"config key {key!r} must be one of {[c for c in _CHOICES[key] if c]}")
    return value


def resolve_config(command: str, file_cfg: dict, flags: dict) -> dict:
    allowed = {**GLOBAL, **COMMANDS[command]}
    if not isinstance(file_cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    for source in (file_cfg, flags):
        for key in source:
            if key not in allowed:
                raise ConfigError(f"unknown config key {key!r} for command {command!r}")
    merged = {**allowed, **file_cfg, **flags}
    return {k: _coerce(k, v) for k, v in merged.items()}


# Parser ------------------------------------------------------------------

def _add_model_flags(p):
    p.add_argument("--bar", dest="model", action="store_const", const="bar", default=argparse.SUPPRESS)
    p.add_argument("--membrane", dest="model", action="store_const", const="membrane", default=argparse.SUPPRESS)
    p.add_argument("--matrix-file", dest="matrix_file", default=argparse.SUPPRESS)
    p.add_argument("--elements", type=int, default=argparse.SUPPRESS)
    p.add_argument("--fixed-left", action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
    p.add_argument("--youngs-modulus", type=float, default=argparse.SUPPRESS, help="Pa")
    p.add_argument("--area", type=float, default=argparse.SUPPRESS, help="m^2")
    p.add_argument("--density", type=float, default=argparse.SUPPRESS, help="kg/m^3")
    p.add_argument("--length", type=float, default=argparse.SUPPRESS, help="m")
    p.add_argument("--nx", type=int, default=argparse.SUPPRESS)
    p.add_argument("--ny", type=int, default=argparse.SUPPRESS)
    p.add_argument("--spacing", type=float, default=argparse.SUPPRESS, help="m")
    p.add_argument("--mass-per-node", type=float, default=argparse.SUPPRESS, help="kg")
    p.add_argument("--stiffness-per-edge", type=float, default=argparse.SUPPRESS, help="N/m")
    p.add_argument("--clamped", action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", dest="_config", default=None, help="JSON config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--output-dir", dest="output_dir", default=argparse.SUPPRESS)
    common.add_argument("--format", choices=("json", "csv"), default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="quasim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="_command", required=True)
    s = argparse.SUPPRESS

    p = sub.add_parser("modal", parents=[common], help="classical modal analysis")
    _add_model_flags(p)
    p.add_argument("--include-shapes", action=argparse.BooleanOptionalAction, default=s)

    p = sub.add_parser("qpe", parents=[common], help="QPE eigenfrequency estimate vs classical oracle")
    _add_model_flags(p)
    p.add_argument("--ancillas", dest="n_ancilla", type=int, default=s)
    p.add_argument("--shots", type=int, default=s)
    p.add_argument("--input-state", dest="input_state", default=s, help="uniform | exact:<i>")
    p.add_argument("--evolution-time", dest="evolution_time", type=float, default=s)
    p.add_argument("--min-weight", dest="min_weight", type=float, default=s)

    p = sub.add_parser("qpe-sweep", parents=[common], help="QPE error versus ancilla count")
    _add_model_flags(p)
    p.add_argument("--ancilla-range", dest="ancilla_range", default=s, help="'3..8' or '3,5,7'")
    p.add_argument("--shots", type=int, default=s)
    p.add_argument("--eigen-index", dest="eigen_index", type=int, default=s)

    p = sub.add_parser("frf", parents=[common], help="frequency response function")
    _add_model_flags(p)
    p.add_argument("--zeta", type=float, default=s)
    p.add_argument("--omega-min", dest="omega_min", type=float, default=s)
    p.add_argument("--omega-max", dest="omega_max", type=float, default=s)
    p.add_argument("--n-points", dest="n_points", type=int, default=s)
    p.add_argument("--input-dof", dest="input_dof", type=int, default=s)
    p.add_argument("--output-dof", dest="output_dof", type=int, default=s)

    p = sub.add_parser("heat-gen", parents=[common], help="generate a laser-heating dataset")
    p.add_argument("--nx", type=int, default=s)
    p.add_argument("--ny", type=int, default=s)
    p.add_argument("--steps", type=int, default=s)
    p.add_argument("--alpha-dt", dest="alpha_dt", type=float, default=s)
    p.add_argument("--source-power", dest="source_power", type=float, default=s)
    p.add_argument("--dwell", type=int, default=s)
    p.add_argument("--rect", type=int, nargs=4, metavar=("X0", "Y0", "W", "H"), default=s)
    p.add_argument("--boundary", choices=("insulated", "fixed"), default=s)
    p.add_argument("--fixed-value", dest="fixed_value", type=float, default=s)
    p.add_argument("--initial-temperature", dest="initial_temperature", type=float, default=s)
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=s)

    p = sub.add_parser("qgnn-train", parents=[common], help="train the quantum graph model")
    p.add_argument("--dataset", default=s)
    p.add_argument("--epochs", type=int, default=s)
    p.add_argument("--lr", dest="learning_rate", type=float, default=s)
    p.add_argument("--optimizer", choices=("plain_gd", "momentum"), default=s)
    p.add_argument("--beta", type=float, default=s)
    p.add_argument("--split", choices=("train", "validation", "all"), default=s)

    p = sub.add_parser("qgnn-eval", parents=[common], help="evaluate a trained model on a dataset")
    p.add_argument("--model", dest="model_file", default=s)
    p.add_argument("--dataset", default=s)
    p.add_argument("--split", choices=("train", "validation", "all"), default=s)
    p.add_argument("--rollout-steps", dest="rollout_steps", type=int, default=s)

    p = sub.add_parser("qgnn-predict", parents=[common], help="one-step prediction for a node frame")
    p.add_argument("--model", dest="model_file", default=s)
    p.add_argument("--frame", default=s)

    p = sub.add_parser("serve", help="run the job service (QUASIM_PORT, QUASIM_WORKERS)")
    p.add_argument("--host", default="127.0.0.1")
    return parser


# Commands ----------------------------------------------------------------

def build_matrices(cfg) -> fem.FemMatrices:
    model = cfg["model"] or ("matrix" if cfg["matrix_file"] else None)
    if model == "matrix" or (model is None and cfg["matrix_file"]):
        if not cfg["matrix_file"]:
            raise ConfigError("--matrix-file is required for a matrix model")
        from .formats import matrices_from_doc
        return matrices_from_doc(read_json(cfg["matrix_file"]))
    if model == "bar":
        return fem.assemble_bar(cfg["elements"], cfg["youngs_modulus"], cfg["area"], cfg["density"],
                                cfg["length"], cfg["fixed_left"])
    if model == "membrane":
        return fem.assemble_membrane(cfg["nx"], cfg["ny"], cfg["spacing"], cfg["mass_per_node"],
                                     cfg["stiffness_per_edge"], cfg["clamped"])
    raise ConfigError("choose a model: --bar, --membrane or --matrix-file")


def _out(cfg, name) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _write_table(cfg, stem, columns, rows):
    if cfg["format"] == "csv":
        path = _out(cfg, f"{stem}.csv")
        path.write_text(csv_text(columns, rows))
    else:
        path = _out(cfg, f"{stem}.json")
        write_json(path, [{c: r[c] for c in columns} for r in rows])
    return path


def cmd_modal(cfg):
    payload = {**matrices_to_doc(build_matrices(cfg)), "include_shapes": cfg["include_shapes"]}
    doc = jobs.run_modal(payload, cfg["seed"])
    if cfg["format"] == "csv":
        return [_write_table(cfg, "modal", ("i", "omega", "omega_squared"), doc["modes"])]
    path = _out(cfg, "modal.json")
    write_json(path, doc)
    return [path]


def qpe_payload(cfg) -> dict:
    payload = matrices_to_doc(build_matrices(cfg))
    for key in jobs.QPE_KEYS:
        payload[key] = cfg[key]
    return payload


def cmd_qpe(cfg):
    doc = jobs.run_qpe(qpe_payload(cfg), cfg["seed"])
    path = _out(cfg, "qpe_report.json")
    write_json(path, doc)
    return [path]


def parse_range(text) -> list:
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..")
            values = list(range(int(lo), int(hi) + 1))
        else:
            values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad ancilla range {text!r}") from None
    if not values:
        raise ConfigError("ancilla range is empty")
    return values


def cmd_qpe_sweep(cfg):
    ancillas = parse_range(cfg["ancilla_range"])
    for n in ancillas:
        qpe.QpeConfig(n_ancilla=n)
    rows = qpe.resolution_sweep(build_matrices(cfg), ancillas, cfg["shots"], cfg["seed"], cfg["eigen_index"])
    cols = ("n_ancilla", "best_estimate", "classical_omega", "best_estimate_error", "grid_resolution")
    return [_write_table(cfg, "sweep", cols, rows)]


def cmd_frf(cfg):
    matrices = build_matrices(cfg)
    if cfg["omega_grid"] is not None:
        grid = [float(w) for w in cfg["omega_grid"]]
    else:
        if cfg["n_points"] < 1:
            raise ConfigError("n_points must be >= 1")
        grid = list(np.linspace(cfg["omega_min"], cfg["omega_max"], cfg["n_points"]))
    zeta = cfg["zeta"]
    zetas = tuple(zeta) if isinstance(zeta, (list, tuple)) else (float(zeta),)
    points = fem.frf(fem.modal_analysis(matrices),
                     fem.FrfConfig(zetas, grid, cfg["input_dof"], cfg["output_dof"]))
    rows = [{"omega": p.omega, "re": p.value.real, "im": p.value.imag, "magnitude": abs(p.value)}
            for p in points]
    return [_write_table(cfg, "frf", ("omega", "re", "im", "magnitude"), rows)]


def heat_scenario(cfg) -> heat.HeatScenario:
    mesh = heat.build_grid_mesh(cfg["nx"], cfg["ny"])
    if cfg["rect"] is not None:
        try:
            x0, y0, w, h = (int(v) for v in cfg["rect"])
        except (TypeError, ValueError):
            raise ConfigError("rect must be four integers x0 y0 w h") from None
        loop = heat.rect_laser_path(mesh, y0 * cfg["nx"] + x0, w, h, cfg["dwell"])
    else:
        loop = heat.rect_laser_path(mesh, cfg["nx"] + 1, max(1, cfg["nx"] - 3), max(1, cfg["ny"] - 3), cfg["dwell"])
    return heat.HeatScenario(mesh, cfg["alpha_dt"], cfg["source_power"], loop.cycled(cfg["steps"]),
                             cfg["boundary"], cfg["fixed_value"], cfg["initial_temperature"])


def cmd_heat_gen(cfg):
    scenario = heat_scenario(cfg)
    scenario.check_stability()
    ds = heat.generate_dataset(scenario, cfg["steps"], cfg["val_fraction"], cfg["seed"])
    path = _out(cfg, "dataset.jsonl")
    write_dataset(path, ds)
    return [path]


def _require(cfg, key, flag):
    if not cfg[key]:
        raise ConfigError(f"{flag} is required")
    return cfg[key]


def cmd_qgnn_train(cfg):
    ds = read_dataset(_require(cfg, "dataset", "--dataset"))
    pairs = ds.subset(cfg["split"])
    if not pairs:
        raise ConfigError(f"split {cfg['split']!r} is empty")
    scaler = qgnn.fit_scaler([f for pair in ds.pairs for f in pair])
    degrees = sorted(set(int(d) for d in ds.graph.degrees))
    model = qgnn.init_model(degrees, scaler, cfg["seed"])
    tcfg = qgnn.TrainConfig(cfg["epochs"], cfg["learning_rate"], cfg["seed"], cfg["optimizer"], cfg["beta"])
    model, report = qgnn.train(model, [(ds.graph, a, b) for a, b in pairs], tcfg)
    model_path = _out(cfg, "model.json")
    write_json(model_path, model.to_doc(), precise=True)
    curve = _write_table(cfg, "loss_curve", ("epoch", "loss"),
                         [{"epoch": e, "loss": l} for e, l in enumerate(report.losses)])
    summary = _out(cfg, "train_report.json")
    write_json(summary, {"epochs": cfg["epochs"], "initial_loss": report.losses[0],
                         "final_loss": report.final_loss, "ratio": report.final_loss / report.losses[0]
                         if report.losses[0] else None})
    return [model_path, curve, summary]


def evaluate_dataset(model, ds, split="all", rollout_steps=10, seed=0) -> dict:
    pairs = ds.subset(split)
    if not pairs:
        raise ConfigError(f"split {split!r} is empty")
    one_step, _ = qgnn.dataset_loss(model, [(ds.graph, a, b) for a, b in pairs])
    ordered = sorted(ds.pairs, key=lambda p: p[0].timestamp)
    truth = [ordered[0][0]] + [b for _, b in ordered]
    steps = max(0, min(rollout_steps, len(truth) - 1))
    per_step = []
    if steps:
        preds = qgnn.rollout(model, ds.graph, truth[0], steps)
        per_step = [float(np.mean((p.values - t.values) ** 2)) for p, t in zip(preds, truth[1:])]
    ok = qgnn.permutation_check(model, ds.graph, ordered[-1][0], seed=seed)
    return {"one_step_mse": one_step, "rollout_mse_per_step": per_step,
            "permutation_check": "pass" if ok else "fail"}


def cmd_qgnn_eval(cfg):
    model = qgnn.QgnnModel.from_doc(read_json(_require(cfg, "model_file", "--model")))
    ds = read_dataset(_require(cfg, "dataset", "--dataset"))
    metrics = evaluate_dataset(model, ds, cfg["split"], cfg["rollout_steps"], cfg["seed"])
    path = _out(cfg, "metrics.json")
    write_json(path, {"format_version": 1, "kind": "qgnn_metrics", **metrics})
    return [path]


def predict_payload(cfg) -> dict:
    return {"model": read_json(_require(cfg, "model_file", "--model")),
            "frame": read_json(_require(cfg, "frame", "--frame"))}


def cmd_qgnn_predict(cfg):
    doc = jobs.run_predict(predict_payload(cfg), cfg["seed"])
    path = _out(cfg, "prediction.json")
    write_json(path, doc)
    return [path]


HANDLERS = {
    "modal": cmd_modal, "qpe": cmd_qpe, "qpe-sweep": cmd_qpe_sweep, "frf": cmd_frf, "heat-gen": cmd_heat_gen,
    "qgnn-train": cmd_qgnn_train, "qgnn-eval": cmd_qgnn_eval, "qgnn-predict": cmd_qgnn_predict,
}


def _serve(args):
    import uvicorn

    from .service import create_app
    port = int(os.environ.get("QUASIM_PORT", "8000"))
    workers = int(os.environ.get("QUASIM_WORKERS", "1"))
    uvicorn.run(create_app(workers=workers), host=args.host, port=port)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command = args._command
    if command == "serve":
        return _serve(args)
    flags = {k: v for k, v in vars(args).items() if not k.startswith("_")}
    try:
        file_cfg = read_json(args._config) if args._config else {}
        cfg = resolve_config(command, file_cfg, flags)
        out_dir = Path(cfg["output_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{command}.config.json").write_text(dumps(cfg, precise=True))
        HANDLERS[command](cfg)
    except ConfigError as exc:
        print(f"quasim {command}: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"quasim {command}: failed: {exc}", file=sys.stderr)
        return 3
    except (QuasimError, OSError, ArithmeticError, ValueError) as exc:
        print(f"quasim {command}: failed: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
