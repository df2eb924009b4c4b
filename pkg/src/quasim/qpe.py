"""Eigenfrequency estimation by simulated quantum phase estimation.

Register layout: ancilla ``j`` is qubit ``j`` and controls ``U**(2**j)``; the
system register occupies qubits ``n_ancilla ..``.  The evolution is
``U = exp(+i H t)`` so an eigenvalue ``lam`` shows up as the phase
``lam * t / (2 pi)`` in ``[0, 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fem, qsim
from .errors import CapacityError, ConfigError

MAX_ANCILLA = 12
MAX_SYSTEM_QUBITS = 12
PADDING_MARGIN = 0.10
SIGN_CONVENTION = "U = exp(+iHt), phase = lambda*t/(2*pi)"


@dataclass(frozen=True)
class InputState:
    """``kind`` is ``exact_eigenvector`` (with ``index``), ``uniform`` or ``custom`` (with ``vector``)."""

    kind: str = "uniform"
    index: int = 0
    vector: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("exact_eigenvector", "uniform", "custom"):
            raise ConfigError(f"unknown input_state {self.kind!r}")
        if self.kind == "custom" and not self.vector:
            raise ConfigError("custom input_state needs a vector")

    @classmethod
    def parse(cls, spec) -> "InputState":
        """Accepts ``"uniform"``, ``"exact:2"`` / ``"exact_eigenvector(2)"`` or a dict."""
        if isinstance(spec, InputState):
            return spec
        if isinstance(spec, dict):
            kind = spec.get("kind", "uniform")
            return cls(kind, int(spec.get("index", 0)), tuple(spec["vector"]) if spec.get("vector") else None)
        text = str(spec).strip()
        if text == "uniform":
            return cls("uniform")
        for prefix in ("exact:", "exact_eigenvector:"):
            if text.startswith(prefix):
                return cls("exact_eigenvector", _parse_index(text[len(prefix):]))
        if text.startswith("exact_eigenvector(") and text.endswith(")"):
            return cls("exact_eigenvector", _parse_index(text[len("exact_eigenvector("):-1]))
        raise ConfigError(f"cannot parse input_state {spec!r}")

    def to_doc(self):
        if self.kind == "exact_eigenvector":
            return {"kind": self.kind, "index": self.index}
        if self.kind == "custom":
            return {"kind": self.kind, "vector": list(self.vector)}
        return {"kind": self.kind}


def _parse_index(text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"bad eigenvector index {text!r}") from None


@dataclass(frozen=True)
class QpeConfig:
    n_ancilla: int = 8
    evolution_time: float | None = None
    shots: int = 1000
    seed: int = 0
    input_state: InputState = field(default_factory=InputState)

    def __post_init__(self):
        object.__setattr__(self, "input_state", InputState.parse(self.input_state))
        if not 1 <= self.n_ancilla <= MAX_ANCILLA:
            raise CapacityError(f"ancilla cap: n_ancilla must be in [1, {MAX_ANCILLA}], got {self.n_ancilla}")
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        if self.evolution_time is not None and not self.evolution_time > 0:
            raise ConfigError("evolution_time must be positive")


@dataclass(frozen=True)
class PhaseHistogram:
    entries: dict
    n_ancilla: int
    shots: int

    def __post_init__(self):
        if sum(self.entries.values()) != self.shots:
            raise ConfigError("histogram counts do not sum to shots")


@dataclass(frozen=True)
class EigenEstimate:
    phase: float
    lambda_estimate: float
    omega_estimate: float
    weight: float


def evolution_unitary(op: fem.HermitianOperator, t: float) -> np.ndarray:
    if op.dim > 2 ** MAX_SYSTEM_QUBITS:
        raise CapacityError(f"operator dimension {op.dim} exceeds {2 ** MAX_SYSTEM_QUBITS}")
    lam, vecs = fem.jacobi_eigh(op.matrix)
    return (vecs * np.exp(1j * lam * t)) @ vecs.T


def embed_operator(op: fem.HermitianOperator) -> fem.HermitianOperator:
    """Pad to a power-of-two dimension with a diagonal value above the Gershgorin bound."""
    dim = op.dim
    size = 1 << max(0, (dim - 1).bit_length())
    if size == dim:
        return op
    bound = fem.gershgorin_bound(op)
    pad = bound + PADDING_MARGIN * abs(bound)
    if pad <= bound:
        pad = bound + 1.0
    out = np.zeros((size, size))
    out[:dim, :dim] = op.matrix
    out[range(dim, size), range(dim, size)] = pad
    return fem.HermitianOperator(out, physical_dim=op.physical_dim, padding_value=pad)


def choose_evolution_time(lambda_upper: float, n_ancilla: int) -> float:
    """Largest ``t`` that keeps every ``lam <= lambda_upper`` below phase 1."""
    if not lambda_upper > 0:
        raise ConfigError("lambda_upper must be positive")
    return 2.0 * math.pi * (1.0 - 2.0 ** -n_ancilla) / lambda_upper


def _system_qubits(dim):
    s = max(1, (dim - 1).bit_length())
    if 2 ** s != dim:
        raise ConfigError(f"unitary dimension {dim} is not a power of two")
    return s


def build_qpe_circuit(u: np.ndarray, n_ancilla: int) -> qsim.Circuit:
    u = np.asarray(u, dtype=complex)
    s = _system_qubits(u.shape[0])
    if n_ancilla + s > qsim.MAX_QUBITS:
        raise CapacityError(f"QPE needs {n_ancilla + s} qubits, cap is {qsim.MAX_QUBITS}")
    system = tuple(range(n_ancilla, n_ancilla + s))
    gates = [qsim.h(j) for j in range(n_ancilla)]
    power = u
    for j in range(n_ancilla):
        gates.append(qsim.unitary(system, power, controls=(j,)))
        power = power @ power
    gates += list(qsim.inverse_qft_circuit(n_ancilla).gates)
    return qsim.Circuit(n_ancilla + s, tuple(gates))


def _input_amplitudes(op: fem.HermitianOperator, spec: InputState) -> np.ndarray:
    dim, phys = op.dim, op.physical_dim
    if spec.kind == "custom":
        v = np.asarray(spec.vector, dtype=complex)
        if v.size > dim:
            raise ConfigError(f"custom vector has {v.size} entries, operator dimension is {dim}")
        return qsim.Statevector.from_vector(np.concatenate([v, np.zeros(dim - v.size)])).amplitudes
    lam, vecs = fem.jacobi_eigh(op.matrix[:phys, :phys])
    if spec.kind == "exact_eigenvector":
        if not 0 <= spec.index < phys:
            raise ConfigError(f"unknown eigenvector index {spec.index} (have {phys})")
        chosen = vecs[:, spec.index]
    else:
        chosen = vecs.sum(axis=1) / math.sqrt(phys)
    out = np.zeros(dim, dtype=complex)
    out[:phys] = chosen
    return out / np.linalg.norm(out)


def qpe_state(op: fem.HermitianOperator, cfg: QpeConfig) -> qsim.Statevector:
    """Full pre-measurement statevector of the QPE circuit."""
    op = embed_operator(op)
    if cfg.evolution_time is None:
        raise ConfigError("evolution_time must be set for run_qpe")
    s = _system_qubits(op.dim)
    if cfg.n_ancilla + s > qsim.MAX_QUBITS:
        raise CapacityError(f"QPE needs {cfg.n_ancilla + s} qubits, cap is {qsim.MAX_QUBITS}")
    u = evolution_unitary(op, cfg.evolution_time)
    circuit = build_qpe_circuit(u, cfg.n_ancilla)
    system = _input_amplitudes(op, cfg.input_state)
    ancilla0 = np.zeros(2 ** cfg.n_ancilla)
    ancilla0[0] = 1.0
    initial = qsim.Statevector(circuit.n_qubits, np.kron(system, ancilla0))
    return qsim.run_circuit(circuit, {}, initial)


def phase_distribution(op: fem.HermitianOperator, cfg: QpeConfig) -> np.ndarray:
    """Exact ancilla outcome probabilities, indexed by the ancilla register value."""
    state = qpe_state(op, cfg)
    return qsim.marginal_probabilities(state, range(cfg.n_ancilla))


def run_qpe(op: fem.HermitianOperator, cfg: QpeConfig) -> PhaseHistogram:
    probs = phase_distribution(op, cfg)
    entries = qsim.sample_probabilities(probs, cfg.shots, cfg.seed, cfg.n_ancilla)
    return PhaseHistogram(entries, cfg.n_ancilla, cfg.shots)


def phases_to_frequencies(hist: PhaseHistogram, t: float, min_weight: float = 0.0) -> list:
    if not t > 0:
        raise ConfigError("evolution time must be positive")
    if not 0.0 <= min_weight < 1.0:
        raise ConfigError("min_weight must lie in [0, 1)")
    out = []
    for bits, count in hist.entries.items():
        weight = count / hist.shots
        if weight < min_weight:
            continue
        phase = int(bits, 2) / 2 ** hist.n_ancilla
        lam = 2.0 * math.pi * phase / t
        out.append(EigenEstimate(phase, lam, math.sqrt(max(lam, 0.0)), weight))
    out.sort(key=lambda e: (-e.weight, e.phase))
    return out


def omega_grid_step(lam_hat: float, lambda_resolution: float) -> float:
    """Widest frequency gap between the grid point ``lam_hat`` and its neighbours."""
    lam_hat = max(lam_hat, 0.0)
    up = math.sqrt(lam_hat + lambda_resolution) - math.sqrt(lam_hat)
    down = math.sqrt(lam_hat) - math.sqrt(max(lam_hat - lambda_resolution, 0.0))
    return max(up, down)


@dataclass(frozen=True)
class QpeReport:
    n_ancilla: int
    evolution_time: float
    lambda_resolution: float
    histogram: dict
    estimates: list
    classical_omegas: tuple
    shots: int
    seed: int
    input_state: InputState


def qpe_modal(matrices: fem.FemMatrices, cfg: QpeConfig, min_weight: float = 0.0) -> QpeReport:
    """Run the full pipeline and pair each estimate with the classical oracle.

    Each estimate dict carries ``phase, lambda, omega, weight,
    nearest_classical_omega, grid_resolution``; bins that decode above the
    physical Gershgorin bound (padding eigenvalues) are dropped.
    """
    op = fem.reduce_generalized(matrices)
    embedded = embed_operator(op)
    if _system_qubits(embedded.dim) + cfg.n_ancilla > qsim.MAX_QUBITS:
        raise CapacityError("qubit cap exceeded")
    bound = fem.gershgorin_bound(op)
    t = cfg.evolution_time
    if t is None:
        upper = fem.gershgorin_bound(embedded)
        if upper <= 0:
            upper = 1.0
        t = choose_evolution_time(upper, cfg.n_ancilla)
        cfg = QpeConfig(cfg.n_ancilla, t, cfg.shots, cfg.seed, cfg.input_state)
    hist = run_qpe(embedded, cfg)
    resolution = 2.0 * math.pi / (t * 2 ** cfg.n_ancilla)
    classical = fem.modal_analysis(matrices).omegas
    estimates = []
    for est in phases_to_frequencies(hist, t, min_weight):
        if embedded.padding_value is not None and est.lambda_estimate > bound + resolution:
            continue
        nearest = float(classical[np.argmin(np.abs(classical - est.omega_estimate))])
        estimates.append({
            "phase": est.phase,
            "lambda": est.lambda_estimate,
            "omega": est.omega_estimate,
            "weight": est.weight,
            "nearest_classical_omega": nearest,
            "grid_resolution": omega_grid_step(est.lambda_estimate, resolution),
        })
    return QpeReport(cfg.n_ancilla, t, resolution, dict(sorted(hist.entries.items())), estimates,
                     tuple(float(w) for w in classical), cfg.shots, cfg.seed, cfg.input_state)


def resolution_sweep(matrices: fem.FemMatrices, ancillas, shots: int = 1000, seed: int = 0,
                     eigen_index: int = 0) -> list:
    """Rows ``(n_ancilla, best_estimate_error, grid_resolution)`` for exact-eigenvector input."""
    ancillas = list(ancillas)
    if not ancillas:
        raise ConfigError("empty ancilla range")
    rows = []
    for n in ancillas:
        cfg = QpeConfig(n, None, shots, seed, InputState("exact_eigenvector", eigen_index))
        report = qpe_modal(matrices, cfg)
        target = report.classical_omegas[eigen_index]
        top = report.estimates[0]
        rows.append({
            "n_ancilla": n,
            "best_estimate": top["omega"],
            "classical_omega": target,
            "best_estimate_error": abs(top["omega"] - target),
            "grid_resolution": top["grid_resolution"],
        })
    return rows
