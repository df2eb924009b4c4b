"""Explicit graph-Laplacian heat diffusion with a moving point source.

Temperatures are in arbitrary normalized units.  One step reads

    f'_v = f_v + alpha_dt * sum_{w in N(v)} (f_w - f_v) + P * [v == path[step]]

followed by re-pinning of fixed boundary values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, StabilityError
from .graph import MeshGraph, NodeFrame, build_grid_mesh
from .qsim import make_rng

LASER_OFF = -1


@dataclass(frozen=True)
class LaserPath:
    positions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(int(p) for p in self.positions))

    def __len__(self):
        return len(self.positions)

    def cycled(self, steps: int) -> "LaserPath":
        """Repeat the path until it covers ``steps`` steps."""
        if not self.positions:
            return LaserPath((LASER_OFF,) * steps)
        reps = math.ceil(steps / len(self.positions))
        return LaserPath((self.positions * reps)[:steps])


@dataclass(frozen=True)
class HeatScenario:
    mesh: MeshGraph
    alpha_dt: float = 0.1
    source_power: float = 1.0
    path: LaserPath = field(default_factory=LaserPath)
    boundary: str = "insulated"
    fixed_value: float = 0.0
    initial_temperature: float = 0.0

    def __post_init__(self):
        if self.boundary not in ("insulated", "fixed"):
            raise ConfigError(f"boundary must be 'insulated' or 'fixed', got {self.boundary!r}")
        if self.source_power < 0:
            raise ConfigError("source_power must be non-negative")
        if not self.alpha_dt > 0:
            raise ConfigError("alpha_dt must be positive")
        for p in self.path.positions:
            if p != LASER_OFF and not 0 <= p < self.mesh.n_vertices:
                raise ConfigError(f"laser position {p} is not a mesh vertex")

    def check_stability(self) -> None:
        d_max = int(self.mesh.degrees.max())
        if self.alpha_dt * d_max >= 1.0:
            raise StabilityError(
                f"unstable explicit step: alpha_dt * d_max = {self.alpha_dt} * {d_max} >= 1")


def _edge_arrays(mesh: MeshGraph):
    e = np.array(mesh.edges, dtype=int).reshape(-1, 2)
    return e[:, 0], e[:, 1]


def diffusion_step(frame: NodeFrame, scenario: HeatScenario, step_index: int) -> NodeFrame:
    scenario.check_stability()
    frame.check(scenario.mesh)
    f = frame.values
    v, w = _edge_arrays(scenario.mesh)
    flux = np.zeros_like(f)
    diff = f[w] - f[v]
    np.add.at(flux, v, diff)
    np.add.at(flux, w, -diff)
    out = f + scenario.alpha_dt * flux
    if step_index < len(scenario.path):
        pos = scenario.path.positions[step_index]
        if pos != LASER_OFF:
            out[pos] += scenario.source_power
    if scenario.boundary == "fixed":
        out[scenario.mesh.boundary_vertices()] = scenario.fixed_value
    return NodeFrame(frame.timestamp + 1, out)


def initial_frame(scenario: HeatScenario) -> NodeFrame:
    vals = np.full(scenario.mesh.n_vertices, float(scenario.initial_temperature))
    if scenario.boundary == "fixed":
        vals[scenario.mesh.boundary_vertices()] = scenario.fixed_value
    return NodeFrame(0, vals)


def simulate(scenario: HeatScenario, steps: int) -> list:
    """Frames ``0..steps`` starting from the uniform initial temperature.

    Steps past the end of a non-empty laser path are an error; an empty path
    means the laser stays off.
    """
    if steps < 0:
        raise ConfigError("steps must be >= 0")
    if len(scenario.path) and steps > len(scenario.path):
        raise ConfigError(f"laser path covers {len(scenario.path)} steps, {steps} requested")
    scenario.check_stability()
    frames = [initial_frame(scenario)]
    for i in range(steps):
        frames.append(diffusion_step(frames[-1], scenario, i))
    return frames


def rect_laser_path(mesh: MeshGraph, start: int, rect_width: int, rect_height: int, dwell: int = 1) -> LaserPath:
    """Clockwise perimeter of a rectangle whose lower-left corner is ``start``."""
    if mesh.shape is None:
        raise ConfigError("rectangular paths need a grid mesh")
    if rect_width < 1 or rect_height < 1 or dwell < 1:
        raise ConfigError("rectangle sides and dwell must be >= 1")
    nx, ny = mesh.shape
    x0, y0 = start % nx, start // nx
    if not (0 <= start < mesh.n_vertices and x0 + rect_width < nx and y0 + rect_height < ny):
        raise ConfigError("rectangle does not fit in the grid")
    pts = [(x0, y0 + j) for j in range(rect_height)]
    pts += [(x0 + i, y0 + rect_height) for i in range(rect_width)]
    pts += [(x0 + rect_width, y0 + rect_height - j) for j in range(rect_height)]
    pts += [(x0 + rect_width - i, y0) for i in range(rect_width)]
    return LaserPath(tuple(iy * nx + ix for ix, iy in pts for _ in range(dwell)))


@dataclass(frozen=True)
class HeatDataset:
    graph: MeshGraph
    pairs: list
    split: dict
    provenance: dict

    def subset(self, name: str) -> list:
        if name == "all":
            return list(self.pairs)
        return [self.pairs[i] for i in self.split[name]]


def generate_dataset(scenario: HeatScenario, steps: int, val_fraction: float = 0.2, seed: int = 0) -> HeatDataset:
    if not 0.0 <= val_fraction < 1.0:
        raise ConfigError("val_fraction must lie in [0, 1)")
    frames = simulate(scenario, steps)
    pairs = list(zip(frames[:-1], frames[1:]))
    order = make_rng(seed).permutation(len(pairs))
    n_val = int(round(val_fraction * len(pairs)))
    split = {"train": sorted(int(i) for i in order[n_val:]),
             "validation": sorted(int(i) for i in order[:n_val])}
    provenance = {
        "nx": scenario.mesh.shape[0] if scenario.mesh.shape else None,
        "ny": scenario.mesh.shape[1] if scenario.mesh.shape else None,
        "alpha_dt": scenario.alpha_dt,
        "source_power": scenario.source_power,
        "boundary": scenario.boundary,
        "fixed_value": scenario.fixed_value,
        "initial_temperature": scenario.initial_temperature,
        "path": list(scenario.path.positions),
        "steps": steps,
        "seed": seed,
    }
    return HeatDataset(scenario.mesh, pairs, split, provenance)


def default_scenario(nx: int = 8, ny: int = 8, steps: int = 200, alpha_dt: float = 0.1,
                     source_power: float = 1.0, dwell: int = 2, **kw) -> HeatScenario:
    """Laser looping around a rectangle inset one vertex from the border."""
    mesh = build_grid_mesh(nx, ny)
    w, hgt = max(1, nx - 3), max(1, ny - 3)
    loop = rect_laser_path(mesh, nx + 1, w, hgt, dwell)
    return HeatScenario(mesh, alpha_dt, source_power, loop.cycled(steps), **kw)
