"""Degree-keyed quantum graph model for one-step field prediction.

Each vertex ``v`` of degree ``d`` is handled by a star-graph circuit on
``d + 1`` qubits (qubit 0 is ``v``):

* ``RY(pi * x_root)`` on qubit 0, with ``x_root = scale(f_v)`` in ``[0, 1]``;
* ``RY(pi * x_rel_k + theta_n)`` on qubit ``k``, where
  ``x_rel_k = (clamp((f_wk - f_v) / (f_max - f_min), -1, 1) + 1) / 2``,
  so the neighbour angle is ``pi * (delta + 1) / 2 + theta_n`` for the
  clamped, range-normalized difference ``delta``;
* ``CRY(theta_e + gamma * eps_k)`` controlled by qubit ``k`` targeting 0.

All gates touching the root are Y rotations, so they commute and the
prediction does not depend on neighbour order.  The readout is
``z = <Z_0>`` decoded as ``invert_scale((1 - (gain * z + bias)) / 2)``.
Parameters ``theta_n, theta_e, gamma, decode_gain, decode_bias`` are shared
by every vertex of the same degree.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import qsim
from .errors import ConfigError, DivergenceError, UnsupportedDegreeError
from .graph import D_MAX_SUPPORTED, MeshGraph, NodeFrame

PARAM_NAMES = ("theta_n", "theta_e", "gamma", "decode_gain", "decode_bias")
CIRCUIT_SLOTS = ("theta_n", "theta_e", "gamma")
SCALER_MARGIN = 0.05
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Scaler:
    f_min: float
    f_max: float

    def __post_init__(self):
        if not self.f_max > self.f_min:
            raise ConfigError("degenerate scaler: f_max must exceed f_min")

    @property
    def range(self) -> float:
        return self.f_max - self.f_min

    def scale(self, f):
        return (np.asarray(f, dtype=float) - self.f_min) / self.range

    def invert(self, x):
        return self.f_min + np.asarray(x, dtype=float) * self.range

    def scale_sym(self, delta):
        return np.clip(np.asarray(delta, dtype=float) / self.range, -1.0, 1.0)

    def relative(self, delta):
        """Neighbour encoding in ``[0, 1]``; equal temperatures map to 0.5."""
        return (self.scale_sym(delta) + 1.0) / 2.0


def fit_scaler(frames) -> Scaler:
    """Min/max over every value in ``frames`` widened by 5% of the range on each side."""
    vals = [np.asarray(getattr(fr, "values", fr), dtype=float).ravel() for fr in frames]
    if not vals or sum(v.size for v in vals) == 0:
        raise ConfigError("cannot fit a scaler on an empty dataset")
    allv = np.concatenate(vals)
    lo, hi = float(allv.min()), float(allv.max())
    if hi == lo:
        raise ConfigError("degenerate scaler: dataset is constant")
    margin = SCALER_MARGIN * (hi - lo)
    return Scaler(lo - margin, hi + margin)


@dataclass
class QgnnModel:
    params: dict
    scaler: Scaler

    def __post_init__(self):
        self.params = {int(d): {k: float(p[k]) for k in PARAM_NAMES} for d, p in self.params.items()}
        for d in self.params:
            if not 0 <= d <= D_MAX_SUPPORTED:
                raise ConfigError(f"degree {d} outside [0, {D_MAX_SUPPORTED}]")

    @property
    def degree_set(self) -> tuple:
        return tuple(sorted(self.params))

    def vector(self) -> np.ndarray:
        return np.array([self.params[d][k] for d in self.degree_set for k in PARAM_NAMES])

    def with_vector(self, vec) -> "QgnnModel":
        vec = iter(np.asarray(vec, dtype=float))
        params = {d: {k: float(next(vec)) for k in PARAM_NAMES} for d in self.degree_set}
        return QgnnModel(params, self.scaler)

    def to_doc(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": "qgnn_model",
            "degree_set": list(self.degree_set),
            "scaler": {"f_min": self.scaler.f_min, "f_max": self.scaler.f_max},
            "parameters": {str(d): dict(self.params[d]) for d in self.degree_set},
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "QgnnModel":
        try:
            if doc.get("kind") != "qgnn_model":
                raise ConfigError("not a qgnn_model document")
            if doc.get("format_version") != MODEL_FORMAT_VERSION:
                raise ConfigError(f"unsupported model format_version {doc.get('format_version')!r}")
            scaler = Scaler(float(doc["scaler"]["f_min"]), float(doc["scaler"]["f_max"]))
            params = {int(d): p for d, p in doc["parameters"].items()}
            if sorted(params) != sorted(int(d) for d in doc["degree_set"]):
                raise ConfigError("degree_set does not match parameters")
            return cls(params, scaler)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed model document: {exc}") from exc


def init_model(degree_set, scaler: Scaler, seed: int = 0) -> QgnnModel:
    """Circuit angles drawn from U[-0.1, 0.1]; identity decode."""
    rng = qsim.make_rng(seed)
    params = {}
    for d in sorted(set(int(d) for d in degree_set)):
        tn, te, g = rng.uniform(-0.1, 0.1, size=3)
        params[d] = {"theta_n": tn, "theta_e": te, "gamma": g, "decode_gain": 1.0, "decode_bias": 0.0}
    return QgnnModel(params, scaler)


# Circuits ----------------------------------------------------------------

def _submodel_gates(d, x_root, x_rel, eps):
    """Gate list for a (possibly batched) star circuit; x_rel/eps are per-neighbour."""
    gates = [qsim.ry(0, math.pi * x_root if np.ndim(x_root) == 0 else qsim.Param(np.pi * x_root))]
    for k in range(d):
        gates.append(qsim.ry(k + 1, qsim.Param(np.pi * x_rel[k], (("theta_n", 1.0),))))
    for k in range(d):
        gates.append(qsim.cry(k + 1, 0, qsim.Param(0.0, (("theta_e", 1.0), ("gamma", eps[k])))))
    return gates


def build_submodel_circuit(d: int, x_root: float, x_rel, eps) -> qsim.Circuit:
    """Star-graph circuit with slots ``theta_n``, ``theta_e``, ``gamma``."""
    if not 0 <= d <= D_MAX_SUPPORTED:
        raise UnsupportedDegreeError(f"degree {d} unsupported")
    x_rel, eps = list(x_rel), list(eps)
    if len(x_rel) != d or len(eps) != d:
        raise ConfigError(f"expected {d} neighbour values and edge features")
    return qsim.Circuit(d + 1, tuple(_submodel_gates(d, float(x_root), x_rel, eps)), CIRCUIT_SLOTS)


def _bindings(p):
    return {k: p[k] for k in CIRCUIT_SLOTS}


def _z_observable(d):
    return qsim.Observable.z(0, d + 1)


def _zero_states(batch, n):
    amps = np.zeros((batch, 2 ** n), dtype=complex)
    amps[:, 0] = 1.0
    return amps


def _batch_z(d, p, x_root, x_rel, eps, with_grad=False):
    """Readout ``<Z_0>`` for B star circuits of degree d; optionally d<Z>/d slot."""
    b = x_root.shape[0]
    gates = _submodel_gates(d, np.asarray(x_root), [x_rel[:, k] for k in range(d)], [eps[:, k] for k in range(d)])
    circuit = qsim.Circuit(d + 1, tuple(gates), CIRCUIT_SLOTS)
    amps = _zero_states(b, d + 1)
    out = qsim.run_batch(circuit, _bindings(p), amps)
    z = qsim.expectation_batch(out, _z_observable(d), d + 1)
    if not with_grad:
        return z, None
    grads = qsim.parameter_shift_grad_batch(circuit, _bindings(p), _z_observable(d), amps)
    return z, grads


def _decode(model, d, z):
    p = model.params[d]
    return model.scaler.invert((1.0 - (p["decode_gain"] * z + p["decode_bias"])) / 2.0)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(np.asarray(a, dtype=float))):
            raise ConfigError("non-finite input")


def submodel_predict(model: QgnnModel, d: int, f_root: float, f_neighbors, eps) -> float:
    if d not in model.params:
        raise UnsupportedDegreeError(f"degree {d} not in model degree set {model.degree_set}")
    f_neighbors = np.asarray(f_neighbors, dtype=float).reshape(-1)
    eps = np.asarray(eps, dtype=float).reshape(-1)
    if f_neighbors.size != d or eps.size != d:
        raise ConfigError(f"expected {d} neighbour values and edge features")
    _check_finite([f_root], f_neighbors, eps)
    sc = model.scaler
    x_root = np.array([sc.scale(f_root)])
    x_rel = sc.relative(f_neighbors - f_root).reshape(1, d)
    z, _ = _batch_z(d, model.params[d], x_root, x_rel, eps.reshape(1, d))
    return float(_decode(model, d, z)[0])


# Graph-level evaluation --------------------------------------------------

@dataclass
class _DegreePlan:
    degree: int
    vertices: np.ndarray
    neighbors: np.ndarray
    eps: np.ndarray


def _plan(model: QgnnModel, graph: MeshGraph) -> list:
    deg = graph.degrees
    bad = [int(v) for v in np.flatnonzero(~np.isin(deg, model.degree_set))]
    if bad:
        raise UnsupportedDegreeError(
            f"unsupported degrees {sorted(set(int(deg[v]) for v in bad))} at vertices {bad}", bad)
    plans = []
    for d in model.degree_set:
        verts = np.flatnonzero(deg == d)
        if verts.size == 0:
            continue
        neigh = np.array([graph.adjacency[v] for v in verts], dtype=int).reshape(verts.size, d)
        eps = np.array([[graph.edge_feature(v, w) for w in graph.adjacency[v]] for v in verts],
                       dtype=float).reshape(verts.size, d)
        plans.append(_DegreePlan(d, verts, neigh, eps))
    return plans


def _inputs(model, plan, values):
    """values: (P, V) frames -> flattened batch inputs for one degree."""
    sc = model.scaler
    root = values[:, plan.vertices]
    neigh = values[:, plan.neighbors]
    d = plan.degree
    x_root = sc.scale(root).reshape(-1)
    x_rel = sc.relative(neigh - root[:, :, None]).reshape(x_root.size, d)
    eps = np.broadcast_to(plan.eps, neigh.shape).reshape(x_root.size, d)
    return x_root, x_rel, eps


def _predict_values(model, graph, values, plans=None):
    values = np.atleast_2d(values)
    plans = plans if plans is not None else _plan(model, graph)
    out = np.empty_like(values)
    for plan in plans:
        x_root, x_rel, eps = _inputs(model, plan, values)
        z, _ = _batch_z(plan.degree, model.params[plan.degree], x_root, x_rel, eps)
        out[:, plan.vertices] = _decode(model, plan.degree, z).reshape(values.shape[0], -1)
    return out


def model_predict(model: QgnnModel, graph: MeshGraph, frame: NodeFrame) -> NodeFrame:
    frame.check(graph)
    pred = _predict_values(model, graph, frame.values[None, :])[0]
    return NodeFrame(frame.timestamp + 1, pred)


def loss_mse(model: QgnnModel, graph: MeshGraph, frame_t: NodeFrame, frame_t1: NodeFrame) -> float:
    frame_t.check(graph)
    frame_t1.check(graph)
    pred = model_predict(model, graph, frame_t).values
    return float(np.mean((frame_t1.values - pred) ** 2))


def _stack(graph, pairs):
    for a, b in pairs:
        a.check(graph)
        b.check(graph)
    inputs = np.array([a.values for a, _ in pairs])
    labels = np.array([b.values for _, b in pairs])
    return inputs, labels


def _loss_and_grad(model, graph, inputs, labels, plans, with_grad=True):
    """Mean over pairs of the per-pair MSE, and its gradient in ``model.vector()`` order."""
    n_pairs, n_v = inputs.shape
    pred = np.empty_like(inputs)
    grad = {d: dict.fromkeys(PARAM_NAMES, 0.0) for d in model.degree_set}
    half_range = model.scaler.range / 2.0
    parts = []
    for plan in plans:
        d = plan.degree
        p = model.params[d]
        x_root, x_rel, eps = _inputs(model, plan, inputs)
        z, dz = _batch_z(d, p, x_root, x_rel, eps, with_grad)
        pv = _decode(model, d, z).reshape(n_pairs, -1)
        pred[:, plan.vertices] = pv
        parts.append((plan, z, dz))
    residual = pred - labels
    loss = float(np.mean(residual ** 2))
    if not with_grad:
        return loss, None
    scale = 2.0 / (n_pairs * n_v)
    for plan, z, dz in parts:
        d = plan.degree
        p = model.params[d]
        r = residual[:, plan.vertices].reshape(-1)
        g = grad[d]
        for slot in CIRCUIT_SLOTS:
            g[slot] = scale * float(np.sum(r * (-half_range * p["decode_gain"] * dz[slot])))
        g["decode_gain"] = scale * float(np.sum(r * (-half_range * z)))
        g["decode_bias"] = scale * float(np.sum(r * -half_range))
    vec = np.array([grad[d][k] for d in model.degree_set for k in PARAM_NAMES])
    return loss, vec


def grad_loss(model: QgnnModel, graph: MeshGraph, frame_t: NodeFrame, frame_t1: NodeFrame) -> dict:
    """Gradient of :func:`loss_mse` as ``{degree: {param: value}}``."""
    inputs, labels = _stack(graph, [(frame_t, frame_t1)])
    _, vec = _loss_and_grad(model, graph, inputs, labels, _plan(model, graph))
    it = iter(vec)
    return {d: {k: float(next(it)) for k in PARAM_NAMES} for d in model.degree_set}


# Training ----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    learning_rate: float = 0.05
    seed: int = 0
    optimizer: str = "momentum"
    beta: float = 0.9

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ConfigError("learning_rate must be a finite non-negative number")
        if self.optimizer not in ("plain_gd", "momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError("momentum beta must lie in [0, 1)")


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    final_loss: float = float("nan")


def _group(dataset):
    groups = {}
    for graph, a, b in dataset:
        groups.setdefault(id(graph), (graph, []))[1].append((a, b))
    return list(groups.values())


def dataset_loss(model: QgnnModel, dataset, with_grad=False):
    """Mean per-pair MSE over ``(graph, frame_t, frame_t1)`` triples."""
    total, n, grad = 0.0, 0, None
    for graph, pairs in _group(dataset):
        inputs, labels = _stack(graph, pairs)
        loss, g = _loss_and_grad(model, graph, inputs, labels, _plan(model, graph), with_grad)
        total += loss * len(pairs)
        n += len(pairs)
        if with_grad:
            grad = g * len(pairs) if grad is None else grad + g * len(pairs)
    if n == 0:
        raise ConfigError("empty dataset")
    return total / n, (grad / n if with_grad else None)


def train(model: QgnnModel, dataset, cfg: TrainConfig):
    """Full-batch descent; ``losses[e]`` is the loss before the update of epoch ``e``."""
    dataset = list(dataset)
    if not dataset:
        raise ConfigError("empty dataset")
    groups = _group(dataset)
    prepared = [(graph, *_stack(graph, pairs), _plan(model, graph), len(pairs)) for graph, pairs in groups]
    n_total = sum(g[-1] for g in prepared)

    def evaluate(m, with_grad):
        loss, grad = 0.0, np.zeros(m.vector().size)
        for graph, inputs, labels, plans, count in prepared:
            l, g = _loss_and_grad(m, graph, inputs, labels, plans, with_grad)
            loss += l * count / n_total
            if with_grad:
                grad += g * count / n_total
        return loss, grad

    report = TrainReport()
    theta = model.vector()
    velocity = np.zeros_like(theta)
    for epoch in range(cfg.epochs):
        loss, grad = evaluate(model, True)
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        report.losses.append(loss)
        if cfg.optimizer == "momentum":
            velocity = cfg.beta * velocity + grad
            theta = theta - cfg.learning_rate * velocity
        else:
            theta = theta - cfg.learning_rate * grad
        model = model.with_vector(theta)
    final, _ = evaluate(model, False)
    if not math.isfinite(final):
        raise DivergenceError(f"non-finite loss after epoch {cfg.epochs - 1}")
    report.final_loss = final
    return model, report


def rollout(model: QgnnModel, graph: MeshGraph, frame0: NodeFrame, steps: int) -> list:
    """Autoregressive predictions ``frame0 -> f1 -> ... -> f_steps`` (``frame0`` excluded)."""
    if steps < 1:
        raise ConfigError("rollout needs steps >= 1")
    plans = _plan(model, graph)
    frame0.check(graph)
    sc = model.scaler
    lo, hi = sc.f_min - 10 * sc.range, sc.f_max + 10 * sc.range
    frames, current = [], frame0
    for step in range(steps):
        vals = _predict_values(model, graph, current.values[None, :], plans)[0]
        if not np.all(np.isfinite(vals)) or vals.min() < lo or vals.max() > hi:
            raise DivergenceError(f"rollout diverged at step {step + 1}")
        current = NodeFrame(current.timestamp + 1, vals)
        frames.append(current)
    return frames


def transfer_evaluate(model: QgnnModel, other_graph: MeshGraph, frames) -> dict:
    """One-step MSE of consecutive frame pairs on a graph the model was not trained on."""
    frames = list(frames)
    if len(frames) < 2:
        raise ConfigError("need at least two frames")
    pairs = list(zip(frames[:-1], frames[1:]))
    inputs, labels = _stack(other_graph, pairs)
    plans = _plan(model, other_graph)
    pred = _predict_values(model, other_graph, inputs, plans)
    per_pair = np.mean((pred - labels) ** 2, axis=1)
    return {"mse": float(np.mean(per_pair)), "per_pair_mse": [float(v) for v in per_pair]}


def permutation_check(model: QgnnModel, graph: MeshGraph, frame: NodeFrame, trials: int = 3,
                      seed: int = 0, tol: float = 1e-10) -> bool:
    """Shuffle every vertex's (neighbour, edge-feature) pairs and compare predictions."""
    rng = qsim.make_rng(seed)
    vals = frame.values
    for v in range(graph.n_vertices):
        neigh = np.array(graph.adjacency[v], dtype=int)
        eps = np.array([graph.edge_feature(v, w) for w in neigh])
        ref = submodel_predict(model, len(neigh), vals[v], vals[neigh], eps)
        for _ in range(trials):
            perm = rng.permutation(len(neigh))
            got = submodel_predict(model, len(neigh), vals[v], vals[neigh[perm]], eps[perm])
            if abs(got - ref) > tol:
                return False
    return True
