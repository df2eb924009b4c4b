"""File formats shared by the CLI and the job service.

Every document is JSON with a ``format_version`` field.  Report and table
floats are written with 9 significant digits; model parameters keep full
precision so a reloaded model reproduces its training loss exactly.

Matrix file::

    {"format_version": 1, "n_dof": 2, "mass": [row-major], "stiffness": [row-major]}

Heat dataset (line-delimited JSON): a header object followed by one record
per transition pair::

    {"format_version": 1, "kind": "heat_dataset", "nx", "ny", "alpha_dt",
     "source_power", "boundary", "fixed_value", "initial_temperature",
     "path", "steps", "seed", "split": {"train": [...], "validation": [...]}}
    {"t": 0, "f": [...], "label": [...]}

Node frame::

    {"format_version": 1, "kind": "node_frame", "graph": {"nx", "ny"} or
     {"n_vertices", "edges", "edge_features"?}, "timestamp", "values"}
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .fem import FemMatrices
from .graph import MeshGraph, NodeFrame, build_grid_mesh
from .heat import HeatDataset

FORMAT_VERSION = 1
SIG_DIGITS = 9


def round_sig(value):
    """Recursively round floats to 9 significant digits (non-finite become None)."""
    if isinstance(value, bool) or value is None or isinstance(value, (int, str)):
        return value
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not math.isfinite(v):
            return None
        return float(f"{v:.{SIG_DIGITS}g}")
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, dict):
        return {str(k): round_sig(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [round_sig(v) for v in value]
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps(doc, precise: bool = False) -> str:
    body = doc if precise else round_sig(doc)
    return json.dumps(body, indent=2, allow_nan=False) + "\n"


def write_json(path, doc, precise: bool = False) -> None:
    Path(path).write_text(dumps(doc, precise))


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None


def format_g(v) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "nan"
    if isinstance(v, (bool, int, np.integer, str)):
        return str(v)
    return f"{float(v):.{SIG_DIGITS}g}"


def csv_text(columns, rows) -> str:
    lines = [",".join(columns)]
    lines += [",".join(format_g(r[c]) for c in columns) for r in rows]
    return "\n".join(lines) + "\n"


def _check_version(doc, what):
    version = doc.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ConfigError(f"{what}: unsupported format_version {version!r}")


# Matrices ----------------------------------------------------------------

MATRIX_KEYS = ("format_version", "n_dof", "mass", "stiffness")


def matrices_to_doc(fem: FemMatrices) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "n_dof": fem.n_dof,
        "mass": [float(v) for v in fem.mass.ravel()],
        "stiffness": [float(v) for v in fem.stiffness.ravel()],
    }


def matrices_from_doc(doc) -> FemMatrices:
    if not isinstance(doc, dict):
        raise ConfigError("matrix document must be an object")
    _check_version(doc, "matrix file")
    for key in ("n_dof", "mass", "stiffness"):
        if key not in doc:
            raise ConfigError(f"matrix document missing {key!r}")
    n = doc["n_dof"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ConfigError("n_dof must be a positive integer")
    mats = []
    for key in ("mass", "stiffness"):
        vals = doc[key]
        if not isinstance(vals, list) or len(vals) != n * n:
            raise ConfigError(f"{key} must be a row-major list of {n * n} numbers")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
            raise ConfigError(f"{key} must contain only numbers")
        mats.append(np.array(vals, dtype=float).reshape(n, n))
    return FemMatrices(*mats)


# Graphs and frames -------------------------------------------------------

def graph_to_doc(graph: MeshGraph) -> dict:
    if graph.shape is not None:
        return {"nx": graph.shape[0], "ny": graph.shape[1]}
    return {
        "n_vertices": graph.n_vertices,
        "edges": [list(e) for e in graph.edges],
        "edge_features": [graph.edge_features[e] for e in graph.edges],
    }


def graph_from_doc(doc) -> MeshGraph:
    if not isinstance(doc, dict):
        raise ConfigError("graph must be an object")
    try:
        if "nx" in doc:
            return build_grid_mesh(int(doc["nx"]), int(doc["ny"]))
        edges = [tuple(int(v) for v in e) for e in doc["edges"]]
        feats = doc.get("edge_features")
        feat_map = dict(zip([(min(a, b), max(a, b)) for a, b in edges], feats)) if feats else None
        return MeshGraph(int(doc["n_vertices"]), tuple(edges), feat_map)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed graph: {exc}") from None


def frame_to_doc(graph: MeshGraph, frame: NodeFrame) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "node_frame",
        "graph": graph_to_doc(graph),
        "timestamp": frame.timestamp,
        "values": [float(v) for v in frame.values],
    }


def frame_from_doc(doc):
    if not isinstance(doc, dict) or doc.get("kind") != "node_frame":
        raise ConfigError("expected a node_frame document")
    _check_version(doc, "node frame")
    try:
        graph = graph_from_doc(doc["graph"])
        vals = doc["values"]
        if not isinstance(vals, list) or not all(isinstance(v, (int, float)) for v in vals):
            raise ConfigError("frame values must be a list of numbers")
        frame = NodeFrame(int(doc.get("timestamp", 0)), vals)
    except KeyError as exc:
        raise ConfigError(f"node frame missing {exc}") from None
    frame.check(graph)
    return graph, frame


# Heat datasets -----------------------------------------------------------

def dataset_lines(ds: HeatDataset) -> str:
    prov = ds.provenance
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "heat_dataset",
        "nx": prov["nx"],
        "ny": prov["ny"],
        "alpha_dt": prov["alpha_dt"],
        "source_power": prov["source_power"],
        "boundary": prov["boundary"],
        "fixed_value": prov["fixed_value"],
        "initial_temperature": prov["initial_temperature"],
        "path": prov["path"],
        "steps": prov["steps"],
        "seed": prov["seed"],
        "split": {"train": ds.split["train"], "validation": ds.split["validation"]},
    }
    lines = [json.dumps(round_sig(header), separators=(",", ":"))]
    for a, b in ds.pairs:
        rec = {"t": a.timestamp, "f": a.values, "label": b.values}
        lines.append(json.dumps(round_sig(rec), separators=(",", ":")))
    return "\n".join(lines) + "\n"


def write_dataset(path, ds: HeatDataset) -> None:
    Path(path).write_text(dataset_lines(ds))


def read_dataset(path) -> HeatDataset:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise ConfigError(f"dataset not found: {path}") from None
    try:
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed dataset line ({exc})") from None
    if not rows or rows[0].get("kind") != "heat_dataset":
        raise ConfigError(f"{path}: missing heat_dataset header")
    header = rows[0]
    _check_version(header, "dataset")
    try:
        graph = build_grid_mesh(int(header["nx"]), int(header["ny"]))
        pairs = [(NodeFrame(r["t"], r["f"]), NodeFrame(r["t"] + 1, r["label"])) for r in rows[1:]]
        split = {"train": list(header["split"]["train"]), "validation": list(header["split"]["validation"])}
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: malformed dataset ({exc})") from None
    for a, b in pairs:
        a.check(graph)
        b.check(graph)
    idx = split["train"] + split["validation"]
    if sorted(idx) != list(range(len(pairs))):
        raise ConfigError(f"{path}: split is not a partition of the {len(pairs)} pairs")
    prov = {k: v for k, v in header.items() if k not in ("format_version", "kind", "split")}
    return HeatDataset(graph, pairs, split, prov)
