"""Job pipelines shared by the CLI and the HTTP service.

Each ``run_*`` takes a payload document plus a seed and returns the report
document.  Payload problems raise :class:`ConfigError`; infeasible requests
(qubit or ancilla caps) raise :class:`CapacityError`.
"""
from __future__ import annotations

from . import fem, qgnn, qpe
from .errors import ConfigError
from .formats import FORMAT_VERSION, frame_from_doc, matrices_from_doc

JOB_KINDS = ("modal", "qpe", "qgnn_predict")

QPE_KEYS = ("n_ancilla", "shots", "input_state", "evolution_time", "min_weight")
QPE_DEFAULTS = {"n_ancilla": 8, "shots": 1000, "input_state": "uniform", "evolution_time": None, "min_weight": 0.0}


def _reject_unknown(payload, allowed, what):
    if not isinstance(payload, dict):
        raise ConfigError(f"{what} payload must be an object")
    extra = sorted(set(payload) - set(allowed))
    if extra:
        raise ConfigError(f"{what} payload has unknown keys: {', '.join(extra)}")


def modal_doc(result: fem.ModalResult, include_shapes: bool = False) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "modal_report",
        "n_dof": int(result.mode_shapes.shape[0]),
        "modes": [
            {"i": i, "omega": float(result.omegas[i]), "omega_squared": float(result.omega_squared[i]),
             "rigid": bool(result.rigid[i])}
            for i in range(result.n_modes)
        ],
    }
    if include_shapes:
        doc["mode_shapes"] = [[float(v) for v in col] for col in result.mode_shapes.T]
    return doc


def run_modal(payload, seed: int = 0) -> dict:
    allowed = ("format_version", "n_dof", "mass", "stiffness", "include_shapes")
    _reject_unknown(payload, allowed, "modal")
    matrices = matrices_from_doc({k: v for k, v in payload.items() if k != "include_shapes"})
    return modal_doc(fem.modal_analysis(matrices), bool(payload.get("include_shapes", False)))


def parse_qpe_payload(payload):
    allowed = ("format_version", "n_dof", "mass", "stiffness") + QPE_KEYS
    _reject_unknown(payload, allowed, "qpe")
    matrices = matrices_from_doc({k: payload[k] for k in ("format_version", "n_dof", "mass", "stiffness")
                                  if k in payload})
    opts = {**QPE_DEFAULTS, **{k: payload[k] for k in QPE_KEYS if k in payload}}
    try:
        n_ancilla = int(opts["n_ancilla"])
        shots = int(opts["shots"])
        t = None if opts["evolution_time"] is None else float(opts["evolution_time"])
        min_weight = float(opts["min_weight"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad qpe option: {exc}") from None
    return matrices, n_ancilla, shots, opts["input_state"], t, min_weight


def qpe_doc(report: qpe.QpeReport) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "qpe_report",
        "sign_convention": qpe.SIGN_CONVENTION,
        "n_ancilla": report.n_ancilla,
        "evolution_time": report.evolution_time,
        "lambda_resolution": report.lambda_resolution,
        "shots": report.shots,
        "seed": report.seed,
        "input_state": report.input_state.to_doc(),
        "histogram": report.histogram,
        "estimates": report.estimates,
        "classical_omegas": list(report.classical_omegas),
    }


def validate_qpe(payload, seed: int = 0):
    """Parse and capacity-check a qpe payload without running it."""
    matrices, n_ancilla, shots, input_state, t, min_weight = parse_qpe_payload(payload)
    cfg = qpe.QpeConfig(n_ancilla, t, shots, int(seed), input_state)
    system = max(1, (matrices.n_dof - 1).bit_length())
    if system > qpe.MAX_SYSTEM_QUBITS:
        raise qpe.CapacityError(f"qubit cap: {matrices.n_dof} DOF needs {system} system qubits")
    if system + n_ancilla > qpe.qsim.MAX_QUBITS:
        raise qpe.CapacityError("qubit cap exceeded")
    return matrices, cfg, min_weight


def run_qpe(payload, seed: int = 0) -> dict:
    matrices, cfg, min_weight = validate_qpe(payload, seed)
    return qpe_doc(qpe.qpe_modal(matrices, cfg, min_weight))


def parse_predict_payload(payload):
    _reject_unknown(payload, ("model", "frame"), "qgnn_predict")
    for key in ("model", "frame"):
        if key not in payload:
            raise ConfigError(f"qgnn_predict payload missing {key!r}")
    model = qgnn.QgnnModel.from_doc(payload["model"])
    graph, frame = frame_from_doc(payload["frame"])
    return model, graph, frame


def run_predict(payload, seed: int = 0) -> dict:
    model, graph, frame = parse_predict_payload(payload)
    out = qgnn.model_predict(model, graph, frame)
    return {
        "format_version": FORMAT_VERSION,
        "kind": "qgnn_prediction",
        "timestamp": out.timestamp,
        "values": [float(v) for v in out.values],
    }


RUNNERS = {"modal": run_modal, "qpe": run_qpe, "qgnn_predict": run_predict}


def validate(kind, payload, seed: int = 0) -> None:
    """Submission-time checks; raises ConfigError (malformed) or CapacityError (infeasible)."""
    if kind not in RUNNERS:
        raise ConfigError(f"unknown job kind {kind!r}; expected one of {', '.join(JOB_KINDS)}")
    if kind == "modal":
        _reject_unknown(payload, ("format_version", "n_dof", "mass", "stiffness", "include_shapes"), "modal")
        matrices_from_doc({k: v for k, v in payload.items() if k != "include_shapes"})
    elif kind == "qpe":
        validate_qpe(payload, seed)
    else:
        parse_predict_payload(payload)


def run(kind, payload, seed: int = 0) -> dict:
    if kind not in RUNNERS:
        raise ConfigError(f"unknown job kind {kind!r}")
    return RUNNERS[kind](payload, seed)
