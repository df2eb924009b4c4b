"""Mesh graphs and per-node feature frames."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

D_MAX_SUPPORTED = 8


@dataclass(frozen=True)
class MeshGraph:
    """Undirected graph with one real feature per edge.

    ``shape`` is ``(nx, ny)`` for grid meshes (vertex ``iy*nx + ix``) and
    ``None`` otherwise.
    """

    n_vertices: int
    edges: tuple
    edge_features: dict = field(default=None, compare=False)
    shape: tuple | None = None
    adjacency: tuple = field(init=False, compare=False)

    def __post_init__(self):
        if self.n_vertices < 1:
            raise ConfigError("graph needs at least one vertex")
        norm = set()
        for v, w in self.edges:
            v, w = int(v), int(w)
            if v == w:
                raise ConfigError(f"self-loop at vertex {v}")
            if not (0 <= v < self.n_vertices and 0 <= w < self.n_vertices):
                raise ConfigError(f"edge ({v}, {w}) references a missing vertex")
            norm.add((min(v, w), max(v, w)))
        edges = tuple(sorted(norm))
        feats = {}
        given = self.edge_features or {}
        for e in edges:
            val = given.get(e, given.get((e[1], e[0]), 1.0))
            feats[e] = float(val)
        neigh = [[] for _ in range(self.n_vertices)]
        for v, w in edges:
            neigh[v].append(w)
            neigh[w].append(v)
        adjacency = tuple(tuple(sorted(n)) for n in neigh)
        if max(len(n) for n in adjacency) > D_MAX_SUPPORTED:
            raise ConfigError(f"vertex degree above supported maximum {D_MAX_SUPPORTED}")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "edge_features", feats)
        object.__setattr__(self, "adjacency", adjacency)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.adjacency], dtype=int)

    def edge_feature(self, v: int, w: int) -> float:
        return self.edge_features[(min(v, w), max(v, w))]

    def relabel(self, perm) -> "MeshGraph":
        """Graph with vertex ``v`` renamed to ``perm[v]``."""
        perm = [int(p) for p in perm]
        if sorted(perm) != list(range(self.n_vertices)):
            raise ConfigError("relabeling must be a permutation")
        edges = [(perm[v], perm[w]) for v, w in self.edges]
        feats = {(perm[v], perm[w]): f for (v, w), f in self.edge_features.items()}
        return MeshGraph(self.n_vertices, tuple(edges), feats)

    def boundary_vertices(self) -> list:
        """Border of a grid mesh; for general graphs, vertices below the maximum degree."""
        if self.shape is not None:
            nx, ny = self.shape
            return [iy * nx + ix for iy in range(ny) for ix in range(nx)
                    if ix in (0, nx - 1) or iy in (0, ny - 1)]
        deg = self.degrees
        return [int(v) for v in np.flatnonzero(deg < deg.max())]


def build_grid_mesh(nx: int, ny: int) -> MeshGraph:
    """4-connected ``nx`` x ``ny`` grid with unit edge features."""
    if nx < 2 or ny < 2:
        raise ConfigError("grid needs nx, ny >= 2")
    edges = []
    for iy in range(ny):
        for ix in range(nx):
            v = iy * nx + ix
            if ix + 1 < nx:
                edges.append((v, v + 1))
            if iy + 1 < ny:
                edges.append((v, v + nx))
    return MeshGraph(nx * ny, tuple(edges), shape=(nx, ny))


@dataclass(frozen=True)
class NodeFrame:
    timestamp: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1:
            raise ConfigError("frame values must be one-dimensional")
        if not np.all(np.isfinite(vals)):
            raise ConfigError("frame values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def check(self, graph: MeshGraph) -> None:
        if self.values.shape[0] != graph.n_vertices:
            raise ConfigError(f"frame has {self.values.shape[0]} values, graph has {graph.n_vertices} vertices")
