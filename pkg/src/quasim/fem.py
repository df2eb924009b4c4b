"""Classical structural oracle: assembly, modal analysis and FRF synthesis.

Units are whatever consistent set the caller uses (SI by convention); nothing
is converted internally.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConfigError, ConvergenceError, FactorizationError

JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-12
SYMMETRY_TOL = 1e-12


def _check_symmetric(a: np.ndarray, name: str) -> None:
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} has non-finite entries")
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ConfigError(f"{name} is not symmetric within {SYMMETRY_TOL}")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FemMatrices:
    mass: np.ndarray
    stiffness: np.ndarray

    def __post_init__(self):
        m, k = _frozen(self.mass), _frozen(self.stiffness)
        _check_symmetric(m, "mass")
        _check_symmetric(k, "stiffness")
        if m.shape != k.shape:
            raise ConfigError(f"mass {m.shape} and stiffness {k.shape} differ in shape")
        if m.shape[0] < 1:
            raise ConfigError("system has no degrees of freedom")
        object.__setattr__(self, "mass", m)
        object.__setattr__(self, "stiffness", k)

    @property
    def n_dof(self) -> int:
        return self.mass.shape[0]


@dataclass(frozen=True)
class HermitianOperator:
    """Real symmetric matrix used as a Hamiltonian.

    ``physical_dim`` counts the leading rows that belong to the structural
    problem; rows beyond it are padding added by the QPE embedding.
    """

    matrix: np.ndarray
    physical_dim: int | None = None
    padding_value: float | None = None

    def __post_init__(self):
        h = _frozen(self.matrix)
        _check_symmetric(h, "operator")
        object.__setattr__(self, "matrix", h)
        if self.physical_dim is None:
            object.__setattr__(self, "physical_dim", h.shape[0])

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class ModalResult:
    omegas: np.ndarray
    omega_squared: np.ndarray
    mode_shapes: np.ndarray
    rigid: np.ndarray = field(default=None)

    @property
    def n_modes(self) -> int:
        return self.omegas.shape[0]


@dataclass(frozen=True)
class FrfConfig:
    damping_ratios: tuple
    omega_grid: tuple
    input_dof: int = 0
    output_dof: int = 0

    def __post_init__(self):
        z = tuple(float(v) for v in np.atleast_1d(self.damping_ratios))
        if any(not 0.0 <= v < 1.0 for v in z):
            raise ConfigError("damping ratios must lie in [0, 1)")
        object.__setattr__(self, "damping_ratios", z)
        object.__setattr__(self, "omega_grid", tuple(float(w) for w in self.omega_grid))


@dataclass(frozen=True)
class FrfPoint:
    omega: float
    value: complex
    singular: bool = False


# Assembly ----------------------------------------------------------------

def assemble_bar(n_elements: int, youngs_modulus: float = 1.0, area: float = 1.0, density: float = 1.0,
                 length: float = 1.0, fixed_left: bool = True) -> FemMatrices:
    """Axial bar with linear elements and consistent mass."""
    if n_elements < 1:
        raise ConfigError("need at least one element")
    if min(youngs_modulus, area, density, length) <= 0:
        raise ConfigError("material constants and length must be positive")
    h = length / n_elements
    ke = youngs_modulus * area / h * np.array([[1.0, -1.0], [-1.0, 1.0]])
    me = density * area * h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    n_nodes = n_elements + 1
    k = np.zeros((n_nodes, n_nodes))
    m = np.zeros((n_nodes, n_nodes))
    for e in range(n_elements):
        k[e:e + 2, e:e + 2] += ke
        m[e:e + 2, e:e + 2] += me
    if fixed_left:
        k, m = k[1:, 1:], m[1:, 1:]
    return FemMatrices(m, k)


def grid_laplacian(nx: int, ny: int) -> np.ndarray:
    """Graph Laplacian of the 4-connected ``nx`` x ``ny`` grid (node ``iy*nx + ix``)."""
    n = nx * ny
    lap = np.zeros((n, n))
    for iy in range(ny):
        for ix in range(nx):
            v = iy * nx + ix
            for w in ((v + 1) if ix + 1 < nx else None, (v + nx) if iy + 1 < ny else None):
                if w is not None:
                    lap[v, w] = lap[w, v] = -1.0
                    lap[v, v] += 1.0
                    lap[w, w] += 1.0
    return lap


def assemble_membrane(nx: int, ny: int, spacing: float = 1.0, mass_per_node: float = 1.0,
                      stiffness_per_edge: float = 1.0, clamped_boundary: bool = False) -> FemMatrices:
    """Lumped-mass spring grid standing in for a thin plate.

    ``spacing`` only has to be positive; stiffness is given per edge.
    """
    if nx < 2 or ny < 2:
        raise ConfigError("membrane grid needs nx, ny >= 2")
    if min(spacing, mass_per_node, stiffness_per_edge) <= 0:
        raise ConfigError("spacing, mass and stiffness must be positive")
    k = stiffness_per_edge * grid_laplacian(nx, ny)
    m = mass_per_node * np.eye(nx * ny)
    if clamped_boundary:
        interior = [iy * nx + ix for iy in range(1, ny - 1) for ix in range(1, nx - 1)]
        if not interior:
            raise ConfigError("clamped grid has no interior nodes")
        k = k[np.ix_(interior, interior)]
        m = m[np.ix_(interior, interior)]
    return FemMatrices(m, k)


# Eigen machinery ---------------------------------------------------------

def _round_robin(n):
    """Pairings for one cyclic sweep: ``n - 1`` rounds of disjoint index pairs."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array([min(players[i], players[n - 1 - i]) for i in range(half)])
        q = np.array([max(players[i], players[n - 1 - i]) for i in range(half)])
        rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(a, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Cyclic Jacobi eigensolver for a real symmetric matrix.

    Sweeps visit every off-diagonal pair once, in round-robin order so the
    ``n/2`` disjoint rotations of each round are applied together.  Pairs
    whose entry is already below the sweep threshold are skipped.  Stops when
    the off-diagonal Frobenius norm falls below ``tol * ||A||_F``.

    Returns ascending eigenvalues and orthonormal eigenvectors (columns).
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if n == 1:
        return a.diagonal().copy(), np.ones((1, 1))
    size = n + (n % 2)
    work = np.zeros((size, size))
    work[:n, :n] = a
    v = np.eye(size)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), np.eye(n)
    rounds = _round_robin(size)

    def off_norm(m):
        return np.linalg.norm(m - np.diag(np.diag(m)))

    for _ in range(max_sweeps):
        off = off_norm(work)
        if off <= tol * scale:
            break
        threshold = 0.1 * off / size
        for p, q in rounds:
            apq = work[p, q]
            active = np.abs(apq) > max(threshold, 1e-300)
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            tau = (work[q, q] - work[p, p]) / (2.0 * apq)
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            cols_p, cols_q = work[:, p].copy(), work[:, q].copy()
            work[:, p] = c * cols_p - s * cols_q
            work[:, q] = s * cols_p + c * cols_q
            rows_p, rows_q = work[p, :].copy(), work[q, :].copy()
            work[p, :] = c[:, None] * rows_p - s[:, None] * rows_q
            work[q, :] = s[:, None] * rows_p + c[:, None] * rows_q
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    else:
        if off_norm(work) > tol * scale:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps (ill-conditioned input?)")
    vals = np.diag(work)[:n]
    vecs = v[:n, :n] if n == size else v[:n, :]
    if size != n:
        # drop the padding column: the one concentrated on the dummy index
        dummy = int(np.argmax(np.abs(v[n, :])))
        keep = [j for j in range(size) if j != dummy]
        vals = np.diag(work)[keep]
        vecs = v[:n, keep]
    order = np.argsort(vals, kind="stable")
    return vals[order], vecs[:, order]


def _cholesky(m: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("mass matrix is not positive definite") from exc


def reduce_generalized(fem: FemMatrices) -> HermitianOperator:
    """Standard form ``H = L^-1 K L^-T`` with ``M = L L^T``."""
    lower = _cholesky(fem.mass)
    y = solve_triangular(lower, fem.stiffness, lower=True)
    h = solve_triangular(lower, y.T, lower=True).T
    return HermitianOperator(0.5 * (h + h.T))


def modal_analysis(fem: FemMatrices, tol: float = JACOBI_TOL) -> ModalResult:
    lower = _cholesky(fem.mass)
    op = reduce_generalized(fem)
    lam, y = jacobi_eigh(op.matrix, tol=tol)
    phi = solve_triangular(lower.T, y, lower=False)
    norms = np.sqrt(np.einsum("ij,ik,kj->j", phi, fem.mass, phi))
    phi = phi / norms
    # sign: largest-magnitude entry positive
    pivots = np.argmax(np.abs(phi), axis=0)
    phi = phi * np.sign(phi[pivots, np.arange(phi.shape[1])])
    spread = max(float(np.max(np.abs(lam))), 1e-300)
    rigid = np.abs(lam) <= 1e-10 * spread
    lam = np.where(rigid, 0.0, lam)
    omegas = np.sqrt(np.clip(lam, 0.0, None))
    return ModalResult(_frozen(omegas), _frozen(lam), _frozen(phi), _frozen(rigid).astype(bool))


def frf(modal: ModalResult, cfg: FrfConfig) -> list:
    """Receptance ``H_pq(w) = sum_i phi_pi phi_qi / (w_i^2 - w^2 + 2 i zeta_i w_i w)``.

    Rigid-body modes are left out of the sum.  A grid point that hits an
    undamped resonance (denominator below ``1e-12`` of the squared
    frequencies involved) is returned with ``singular=True`` and a NaN value.
    """
    n_modes = modal.n_modes
    zetas = np.asarray(cfg.damping_ratios, dtype=float)
    if zetas.size == 1:
        zetas = np.full(n_modes, zetas[0])
    if zetas.size != n_modes:
        raise ConfigError(f"need 1 or {n_modes} damping ratios, got {zetas.size}")
    dofs = modal.mode_shapes.shape[0]
    for d in (cfg.input_dof, cfg.output_dof):
        if not 0 <= d < dofs:
            raise ConfigError(f"dof {d} out of range [0, {dofs})")
    rigid = modal.rigid if modal.rigid is not None else np.zeros(n_modes, dtype=bool)
    residues = modal.mode_shapes[cfg.output_dof] * modal.mode_shapes[cfg.input_dof]
    out = []
    for w in cfg.omega_grid:
        total = 0j
        singular = False
        for i in range(n_modes):
            if rigid[i]:
                continue
            wi = modal.omegas[i]
            den = complex(modal.omega_squared[i] - w * w, 2.0 * zetas[i] * wi * w)
            if abs(den) <= 1e-12 * max(modal.omega_squared[i], w * w):
                singular = True
                break
            total += residues[i] / den
        out.append(FrfPoint(w, complex("nan") if singular else total, singular))
    return out


def gershgorin_bound(op: HermitianOperator) -> float:
    h = op.matrix
    off = np.sum(np.abs(h), axis=1) - np.abs(np.diag(h))
    return float(np.max(np.diag(h) + off))
