"""Dense statevector simulator.

Conventions
-----------
* Qubit 0 is the least-significant bit of the basis index, so on two
  qubits the basis index 1 is ``|q1 q0> = |01>``.
* Bitstrings (histogram keys) are written most-significant first, i.e.
  the highest listed qubit is the leftmost character.
* For ``Gate.unitary`` acting on ``targets = (t0, t1, ...)`` bit ``j`` of the
  matrix row/column index belongs to ``targets[j]``.
* Pauli strings in an :class:`Observable` are indexed by qubit: character
  ``k`` acts on qubit ``k``.

Every routine also has a batched form (``*_batch``) operating on amplitude
arrays of shape ``(B, 2**n)``; angle offsets, slot coefficients and slot
bindings may then be arrays of shape ``(B,)``.  The QGNN trainer relies on
this to evaluate thousands of small circuits in one numpy pass.

Sampling uses numpy's ``PCG64`` bit generator seeded with the user seed, and
``Generator.multinomial`` over the outcome probabilities.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import CapacityError, ConfigError

MAX_QUBITS = 24

_SQRT1_2 = 1.0 / math.sqrt(2.0)


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator used for every random draw in the toolkit."""
    return np.random.Generator(np.random.PCG64(seed))


class GateKind(str, enum.Enum):
    HADAMARD = "h"
    PAULI_X = "x"
    RX = "rx"
    RY = "ry"
    RZ = "rz"
    CNOT = "cnot"
    CONTROLLED_RY = "cry"
    CONTROLLED_PHASE = "cphase"
    DENSE_UNITARY = "unitary"


_ROTATIONS = {GateKind.RX, GateKind.RY, GateKind.RZ, GateKind.CONTROLLED_RY, GateKind.CONTROLLED_PHASE}


@dataclass(frozen=True)
class Param:
    """Affine gate angle ``offset + sum(coeff * slot_value)``.

    ``offset`` and coefficients may be numpy arrays for batched evaluation.
    """

    offset: object = 0.0
    coeffs: tuple = ()

    @classmethod
    def slot(cls, name: str, coeff=1.0, offset=0.0) -> "Param":
        return cls(offset, ((name, coeff),))

    @property
    def slots(self) -> tuple:
        return tuple(name for name, _ in self.coeffs)

    def scaled(self, k: float) -> "Param":
        return Param(self.offset * k, tuple((s, c * k) for s, c in self.coeffs))

    def shifted(self, delta) -> "Param":
        return Param(self.offset + delta, self.coeffs)

    def value(self, bindings: Mapping[str, object]):
        total = self.offset
        for name, coeff in self.coeffs:
            if name not in bindings:
                raise ConfigError(f"unbound parameter slot {name!r}")
            total = total + coeff * bindings[name]
        return total


def _as_param(angle) -> Param | None:
    if angle is None or isinstance(angle, Param):
        return angle
    if isinstance(angle, str):
        return Param.slot(angle)
    return Param(angle)


@dataclass(frozen=True)
class Gate:
    kind: GateKind
    targets: tuple
    controls: tuple = ()
    angle: Param | None = None
    matrix: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", GateKind(self.kind))
        object.__setattr__(self, "targets", tuple(int(q) for q in self.targets))
        object.__setattr__(self, "controls", tuple(int(q) for q in self.controls))
        object.__setattr__(self, "angle", _as_param(self.angle))
        qubits = self.targets + self.controls
        if len(set(qubits)) != len(qubits):
            raise ConfigError(f"{self.kind.value}: targets and controls must be disjoint and distinct")
        if not self.targets:
            raise ConfigError(f"{self.kind.value}: at least one target required")
        if self.kind in _ROTATIONS and self.angle is None:
            raise ConfigError(f"{self.kind.value}: angle required")
        if self.kind == GateKind.DENSE_UNITARY:
            m = np.asarray(self.matrix, dtype=complex)
            dim = 2 ** len(self.targets)
            if m.shape != (dim, dim):
                raise ConfigError(f"unitary on {len(self.targets)} qubits needs a {dim}x{dim} matrix")
            if not np.allclose(m.conj().T @ m, np.eye(dim), rtol=0.0, atol=1e-10):
                raise ConfigError("dense matrix is not unitary within 1e-10")
            m.setflags(write=False)
            object.__setattr__(self, "matrix", m)
        elif len(self.targets) != 1:
            raise ConfigError(f"{self.kind.value} acts on exactly one target")

    @property
    def qubits(self) -> tuple:
        return self.targets + self.controls

    @property
    def slots(self) -> tuple:
        return self.angle.slots if self.angle is not None else ()

    def adjoint(self) -> "Gate":
        if self.kind == GateKind.DENSE_UNITARY:
            return Gate(self.kind, self.targets, self.controls, matrix=self.matrix.conj().T)
        if self.kind in _ROTATIONS:
            return Gate(self.kind, self.targets, self.controls, self.angle.scaled(-1.0))
        return self


# Gate constructors -------------------------------------------------------

def h(q):
    return Gate(GateKind.HADAMARD, (q,))


def x(q):
    return Gate(GateKind.PAULI_X, (q,))


def rx(q, angle):
    return Gate(GateKind.RX, (q,), angle=angle)


def ry(q, angle):
    return Gate(GateKind.RY, (q,), angle=angle)


def rz(q, angle):
    return Gate(GateKind.RZ, (q,), angle=angle)


def cnot(control, target):
    return Gate(GateKind.CNOT, (target,), (control,))


def cry(control, target, angle):
    return Gate(GateKind.CONTROLLED_RY, (target,), (control,), angle)


def cphase(control, target, angle):
    return Gate(GateKind.CONTROLLED_PHASE, (target,), (control,), angle)


def unitary(targets, matrix, controls=()):
    return Gate(GateKind.DENSE_UNITARY, tuple(targets), tuple(controls), matrix=matrix)


@dataclass(frozen=True)
class Circuit:
    """Ordered gate program.

    ``slots`` declares the parameter slots; when omitted it is derived from
    the gates.  ``parameter_slots`` reports how many gates each slot feeds.
    """

    n_qubits: int
    gates: tuple = ()
    slots: tuple | None = None

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise CapacityError(f"circuit needs 1..{MAX_QUBITS} qubits, got {self.n_qubits}")
        gates = tuple(self.gates)
        object.__setattr__(self, "gates", gates)
        for g in gates:
            for q in g.qubits:
                if not 0 <= q < self.n_qubits:
                    raise ConfigError(f"qubit index {q} outside [0, {self.n_qubits})")
        used = []
        for g in gates:
            used.extend(s for s in g.slots if s not in used)
        if self.slots is None:
            object.__setattr__(self, "slots", tuple(used))
        else:
            object.__setattr__(self, "slots", tuple(self.slots))
            missing = [s for s in used if s not in self.slots]
            if missing:
                raise ConfigError(f"undeclared parameter slots: {missing}")

    @property
    def parameter_slots(self) -> dict:
        counts = {s: 0 for s in self.slots}
        for g in self.gates:
            for s in g.slots:
                counts[s] += 1
        return counts

    def adjoint(self) -> "Circuit":
        return Circuit(self.n_qubits, tuple(g.adjoint() for g in reversed(self.gates)), self.slots)

    def __add__(self, other: "Circuit") -> "Circuit":
        n = max(self.n_qubits, other.n_qubits)
        slots = self.slots + tuple(s for s in other.slots if s not in self.slots)
        return Circuit(n, self.gates + other.gates, slots)


@dataclass(frozen=True)
class Statevector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.shape != (2 ** self.n_qubits,):
            raise ConfigError(f"expected {2 ** self.n_qubits} amplitudes, got shape {amps.shape}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_vector(cls, vector) -> "Statevector":
        """Amplitude-encode ``vector`` (zero-padded to a power of two, normalized)."""
        v = np.asarray(vector, dtype=complex).ravel()
        if v.size == 0:
            raise ConfigError("empty vector")
        n = max(1, math.ceil(math.log2(v.size)))
        if n > MAX_QUBITS:
            raise CapacityError(f"vector needs {n} qubits (cap {MAX_QUBITS})")
        norm = np.linalg.norm(v)
        if not np.isfinite(norm) or norm == 0.0:
            raise ConfigError("vector must be finite and nonzero")
        out = np.zeros(2 ** n, dtype=complex)
        out[: v.size] = v / norm
        return cls(n, out)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class Observable:
    """Real linear combination of Pauli strings (character ``k`` acts on qubit ``k``)."""

    terms: tuple

    def __post_init__(self):
        terms = []
        for coeff, paulis in self.terms:
            paulis = paulis.upper()
            if set(paulis) - set("IXYZ"):
                raise ConfigError(f"bad Pauli string {paulis!r}")
            terms.append((float(coeff), paulis))
        object.__setattr__(self, "terms", tuple(terms))

    @classmethod
    def z(cls, qubit: int, n_qubits: int) -> "Observable":
        s = ["I"] * n_qubits
        s[qubit] = "Z"
        return cls(((1.0, "".join(s)),))

    @property
    def n_qubits(self) -> int:
        return len(self.terms[0][1]) if self.terms else 0


def init_state(n_qubits: int, basis_index: int = 0) -> Statevector:
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise CapacityError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
    if not 0 <= basis_index < 2 ** n_qubits:
        raise ConfigError(f"basis index {basis_index} out of range for {n_qubits} qubits")
    amps = np.zeros(2 ** n_qubits, dtype=complex)
    amps[basis_index] = 1.0
    return Statevector(n_qubits, amps)


# Batched kernels ---------------------------------------------------------
#
# Internally a batch lives in a tensor of shape (2,)*n + (B,): qubit q is
# axis n-1-q and the batch is the trailing, contiguous axis, so per-gate
# slices are contiguous blocks and (B,) angle arrays broadcast for free.

def _to_tensor(a, n):
    return np.array(a.T, order="C").reshape((2,) * n + (a.shape[0],))


def _from_tensor(psi, n):
    return psi.reshape(2 ** n, -1).T


def _slices(n, target, controls):
    idx0 = [slice(None)] * (n + 1)
    for c in controls:
        idx0[n - 1 - c] = 1
    idx1 = list(idx0)
    idx0[n - 1 - target] = 0
    idx1[n - 1 - target] = 1
    return tuple(idx0), tuple(idx1)


def _apply_2x2(psi, n, target, controls, m00, m01, m10, m11):
    """In-place 2x2 (optionally controlled) update; entries are scalars or (B,) arrays."""
    idx0, idx1 = _slices(n, target, controls)
    a0 = psi[idx0]
    a1 = psi[idx1]
    new0 = m00 * a0 + m01 * a1
    psi[idx1] = m10 * a0 + m11 * a1
    psi[idx0] = new0


def _apply_real_2x2(psi, n, target, controls, m00, m01, m10, m11):
    """Same as :func:`_apply_2x2` for real entries, done on the float view."""
    idx0, idx1 = _slices(n, target, controls)
    if np.iscomplexobj(psi):
        view = psi.view(np.float64)
        m00, m01, m10, m11 = (np.repeat(m, 2) if np.ndim(m) else m for m in (m00, m01, m10, m11))
    else:
        view = psi
    a0 = view[idx0]
    a1 = view[idx1]
    new0 = m00 * a0
    new0 += m01 * a1
    new1 = m10 * a0
    new1 += m11 * a1
    view[idx0] = new0
    view[idx1] = new1


def _apply_swap(psi, n, target, controls):
    idx0, idx1 = _slices(n, target, controls)
    tmp = psi[idx0].copy()
    psi[idx0] = psi[idx1]
    psi[idx1] = tmp


def _apply_diag(psi, n, target, controls, d0, d1):
    idx0, idx1 = _slices(n, target, controls)
    if not (np.ndim(d0) == 0 and d0 == 1.0):
        psi[idx0] *= d0
    psi[idx1] *= d1


def _apply_dense(psi, n, targets, controls, matrix):
    ctrl_axes = [n - 1 - c for c in controls]
    tgt_axes = [n - 1 - q for q in reversed(targets)]
    rest = [a for a in range(n + 1) if a not in ctrl_axes and a not in tgt_axes]
    perm = ctrl_axes + tgt_axes + rest
    t = np.ascontiguousarray(psi.transpose(perm))
    shape = t.shape
    t = t.reshape(2 ** len(controls), 2 ** len(targets), -1)
    t[-1] = matrix @ t[-1]
    psi[...] = t.reshape(shape).transpose(np.argsort(perm))


def _apply_gate_tensor(psi, n, gate: Gate, bindings):
    k = gate.kind
    t = gate.targets[0]
    if k == GateKind.HADAMARD:
        _apply_real_2x2(psi, n, t, gate.controls, _SQRT1_2, _SQRT1_2, _SQRT1_2, -_SQRT1_2)
    elif k in (GateKind.PAULI_X, GateKind.CNOT):
        _apply_swap(psi, n, t, gate.controls)
    elif k == GateKind.DENSE_UNITARY:
        _apply_dense(psi, n, gate.targets, gate.controls, gate.matrix)
    else:
        theta = np.asarray(gate.angle.value(bindings), dtype=float)
        if k in (GateKind.RY, GateKind.CONTROLLED_RY):
            c, s = np.cos(theta / 2), np.sin(theta / 2)
            _apply_real_2x2(psi, n, t, gate.controls, c, -s, s, c)
        elif k == GateKind.RX:
            c, s = np.cos(theta / 2), np.sin(theta / 2)
            _apply_2x2(psi, n, t, gate.controls, c, -1j * s, -1j * s, c)
        elif k == GateKind.RZ:
            _apply_diag(psi, n, t, gate.controls, np.exp(-0.5j * theta), np.exp(0.5j * theta))
        elif k == GateKind.CONTROLLED_PHASE:
            _apply_diag(psi, n, t, gate.controls, 1.0, np.exp(1j * theta))
        else:  # pragma: no cover - enum is closed
            raise ConfigError(f"unknown gate {k}")


_REAL_KINDS = {GateKind.HADAMARD, GateKind.PAULI_X, GateKind.CNOT, GateKind.RY, GateKind.CONTROLLED_RY}


def _real_program(gates) -> bool:
    return all(g.kind in _REAL_KINDS for g in gates)


def _start_tensor(amps, n, gates):
    """Working tensor; real-valued when both the input and every gate are real."""
    a = _as_batch(amps, n)
    if _real_program(gates) and not np.any(a.imag):
        return _to_tensor(np.ascontiguousarray(a.real), n)
    return _to_tensor(a, n)


def _as_batch(amps, n):
    a = np.asarray(amps, dtype=complex)
    if a.ndim == 1:
        a = a[None, :]
    if a.shape[-1] != 2 ** n:
        raise ConfigError(f"amplitude length {a.shape[-1]} does not match {n} qubits")
    return a


def run_gates_batch(gates: Sequence[Gate], n_qubits: int, bindings: Mapping, amps) -> np.ndarray:
    """Apply ``gates`` to a batch of states; returns a new ``(B, 2**n)`` array."""
    psi = _start_tensor(amps, n_qubits, gates)
    for g in gates:
        _apply_gate_tensor(psi, n_qubits, g, bindings)
    return _from_tensor(psi, n_qubits).astype(complex)


def run_batch(circuit: Circuit, bindings: Mapping, amps) -> np.ndarray:
    return run_gates_batch(circuit.gates, circuit.n_qubits, bindings, amps)


def _apply_pauli_string(psi, n, paulis):
    for q, p in enumerate(paulis):
        if p == "X":
            _apply_swap(psi, n, q, ())
        elif p == "Y":
            _apply_2x2(psi, n, q, (), 0.0, -1j, 1j, 0.0)
        elif p == "Z":
            _apply_diag(psi, n, q, (), 1.0, -1.0)


def _z_signs(paulis, n):
    idx = np.arange(2 ** n)
    signs = np.ones(2 ** n)
    for q, p in enumerate(paulis):
        if p == "Z":
            signs = signs * (1 - 2 * ((idx >> q) & 1))
    return signs


def _expectation_tensor(psi, obs: Observable, n):
    """Expectation per batch element for a tensor in internal layout."""
    flat = psi.reshape(2 ** n, -1)
    total = np.zeros(flat.shape[1])
    probs = None
    for coeff, paulis in obs.terms:
        if set(paulis) <= {"I", "Z"}:
            if probs is None:
                probs = flat.real ** 2 + flat.imag ** 2
            total += coeff * np.sum(probs * _z_signs(paulis, n)[:, None], axis=0)
        else:
            other = psi.astype(complex)
            _apply_pauli_string(other, n, paulis)
            total += coeff * np.sum((flat.conj() * other.reshape(2 ** n, -1)).real, axis=0)
    return total


def expectation_batch(amps, obs: Observable, n_qubits: int) -> np.ndarray:
    if obs.n_qubits != n_qubits:
        raise ConfigError(f"observable acts on {obs.n_qubits} qubits, state has {n_qubits}")
    return _expectation_tensor(_to_tensor(_as_batch(amps, n_qubits), n_qubits), obs, n_qubits)


# Single-state API --------------------------------------------------------

def apply_gate(state: Statevector, gate: Gate) -> Statevector:
    for q in gate.qubits:
        if not 0 <= q < state.n_qubits:
            raise ConfigError(f"qubit index {q} outside [0, {state.n_qubits})")
    if gate.slots:
        raise ConfigError(f"gate references unbound slots {gate.slots}; use run_circuit")
    out = run_gates_batch([gate], state.n_qubits, {}, state.amplitudes)
    return Statevector(state.n_qubits, out[0])


def run_circuit(circuit: Circuit, bindings: Mapping | None = None, initial: Statevector | None = None) -> Statevector:
    bindings = dict(bindings or {})
    missing = [s for s in circuit.slots if s not in bindings]
    if missing:
        raise ConfigError(f"unbound parameter slots: {missing}")
    if initial is None:
        initial = init_state(circuit.n_qubits)
    if initial.n_qubits != circuit.n_qubits:
        raise ConfigError("initial state and circuit disagree on qubit count")
    out = run_batch(circuit, bindings, initial.amplitudes)
    return Statevector(circuit.n_qubits, out[0])


def expectation(state: Statevector, obs: Observable) -> float:
    return float(expectation_batch(state.amplitudes, obs, state.n_qubits)[0])


def marginal_probabilities(state: Statevector, qubits: Sequence[int] | None = None) -> np.ndarray:
    """Outcome probabilities of ``qubits``; index bit ``j`` is ``qubits[j]``."""
    n = state.n_qubits
    probs = state.probabilities()
    if qubits is None:
        return probs
    qubits = list(qubits)
    p = probs.reshape((2,) * n)
    keep = [n - 1 - q for q in qubits]
    drop = tuple(a for a in range(n) if a not in keep)
    p = p.sum(axis=drop) if drop else p
    # remaining axes are ordered by decreasing qubit index; reorder to MSB = qubits[-1]
    remaining = sorted(keep)
    order = [remaining.index(n - 1 - q) for q in reversed(qubits)]
    return np.transpose(p, order).reshape(-1)


def sample_probabilities(probs, shots: int, seed: int, width: int) -> dict:
    if shots < 1:
        raise ConfigError("shots must be >= 1")
    p = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    p = p / p.sum()
    counts = make_rng(seed).multinomial(shots, p)
    return {format(i, f"0{width}b"): int(c) for i, c in enumerate(counts) if c}


def sample(state: Statevector, shots: int, seed: int, qubits: Sequence[int] | None = None) -> dict:
    """Shot histogram ``bitstring -> count``, reproducible for a fixed seed."""
    probs = marginal_probabilities(state, qubits)
    width = state.n_qubits if qubits is None else len(qubits)
    return sample_probabilities(probs, shots, seed, width)


# Parameter-shift gradients -----------------------------------------------

def _shift_rule_gates(circuit: Circuit) -> list:
    """Rewrite parameterized gates into single-qubit rotations.

    CRY(a) -> RY(a/2) CNOT RY(-a/2) CNOT on the target.
    CP(a)  -> RZ_c(a/2) RZ_t(a/2) CNOT RZ_t(-a/2) CNOT, exact up to global phase.
    """
    out = []
    for g in circuit.gates:
        if not g.slots:
            out.append(g)
            continue
        if g.kind in (GateKind.RX, GateKind.RY, GateKind.RZ) and not g.controls:
            out.append(g)
        elif g.kind == GateKind.CONTROLLED_RY and len(g.controls) == 1:
            c, t = g.controls[0], g.targets[0]
            half = g.angle.scaled(0.5)
            out += [ry(t, half), cnot(c, t), ry(t, half.scaled(-1.0)), cnot(c, t)]
        elif g.kind == GateKind.CONTROLLED_PHASE and len(g.controls) == 1:
            c, t = g.controls[0], g.targets[0]
            half = g.angle.scaled(0.5)
            out += [rz(c, half), rz(t, half), cnot(c, t), rz(t, half.scaled(-1.0)), cnot(c, t)]
        else:
            raise ConfigError(f"no parameter-shift rule for {g.kind.value} with {len(g.controls)} controls")
    return out


def parameter_shift_grad_batch(circuit: Circuit, bindings: Mapping, obs: Observable, amps, slots=None) -> dict:
    """Per-batch-element gradients of ``<obs>`` with respect to ``slots``.

    Every occurrence of a slot contributes ``coeff * (E(+pi/2) - E(-pi/2)) / 2``
    evaluated on the rotation it feeds; occurrences accumulate.
    """
    n = circuit.n_qubits
    slots = tuple(circuit.slots if slots is None else slots)
    gates = _shift_rule_gates(circuit)
    if obs.n_qubits != n:
        raise ConfigError(f"observable acts on {obs.n_qubits} qubits, circuit has {n}")
    a = _as_batch(amps, n)
    grads = {s: np.zeros(a.shape[0]) for s in slots}
    psi = _start_tensor(a, n, gates)
    for i, g in enumerate(gates):
        wanted = [(s, c) for s, c in g.angle.coeffs if s in grads] if g.angle is not None else []
        if wanted:
            diff = 0.0
            for sign in (1.0, -1.0):
                shifted = Gate(g.kind, g.targets, g.controls, g.angle.shifted(sign * math.pi / 2))
                branch = psi.copy()
                _apply_gate_tensor(branch, n, shifted, bindings)
                for later in gates[i + 1:]:
                    _apply_gate_tensor(branch, n, later, bindings)
                diff = diff + sign * _expectation_tensor(branch, obs, n)
            for s, c in wanted:
                grads[s] = grads[s] + c * diff / 2.0
        _apply_gate_tensor(psi, n, g, bindings)
    return grads


def parameter_shift_grad(circuit: Circuit, bindings: Mapping, obs: Observable, initial: Statevector | None = None) -> dict:
    missing = [s for s in circuit.slots if s not in bindings]
    if missing:
        raise ConfigError(f"unbound parameter slots: {missing}")
    if initial is None:
        initial = init_state(circuit.n_qubits)
    grads = parameter_shift_grad_batch(circuit, bindings, obs, initial.amplitudes)
    return {s: float(v[0]) for s, v in grads.items()}


# Fourier transform circuits ----------------------------------------------

def _swap(a, b):
    return [cnot(a, b), cnot(b, a), cnot(a, b)]


def qft_circuit(n_qubits: int) -> Circuit:
    """QFT: ``|x> -> 2**(-n/2) sum_k exp(2 pi i x k / 2**n) |k>`` (LSB-first indices)."""
    if n_qubits < 1:
        raise ConfigError("QFT needs at least one qubit")
    gates = []
    for i in reversed(range(n_qubits)):
        gates.append(h(i))
        for j in reversed(range(i)):
            gates.append(cphase(j, i, math.pi / 2 ** (i - j)))
    for i in range(n_qubits // 2):
        gates += _swap(i, n_qubits - 1 - i)
    return Circuit(n_qubits, tuple(gates))


def inverse_qft_circuit(n_qubits: int) -> Circuit:
    return qft_circuit(n_qubits).adjoint()
