"""Shared data model: atomic systems, radius graphs and disjoint-union batches."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

SUPERNODE_Z = 119


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AtomicSystem:
    """One adsorbate + catalyst sample.

    Arrays are copied and made read-only on construction. Call
    :func:`validate_system` to check the invariants; construction itself
    only coerces dtypes so that invalid inputs can still be reported on.
    """

    positions: np.ndarray
    atomic_numbers: np.ndarray
    tags: np.ndarray
    cell: np.ndarray = field(default_factory=lambda: np.eye(3))
    pbc: tuple = (False, False, False)
    energy: float | None = None
    forces: np.ndarray | None = None
    sid: str = ""
    supernode_cardinality: Mapping[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(self.positions, np.float64).reshape(-1, 3))
        object.__setattr__(self, "atomic_numbers", _frozen(self.atomic_numbers, np.int64).reshape(-1))
        object.__setattr__(self, "tags", _frozen(self.tags, np.int64).reshape(-1))
        object.__setattr__(self, "cell", _frozen(self.cell, np.float64).reshape(3, 3))
        object.__setattr__(self, "pbc", tuple(bool(p) for p in self.pbc))
        if self.energy is not None:
            object.__setattr__(self, "energy", float(self.energy))
        if self.forces is not None:
            object.__setattr__(self, "forces", _frozen(self.forces, np.float64).reshape(-1, 3))
        if self.supernode_cardinality is not None:
            card = {int(k): int(v) for k, v in dict(self.supernode_cardinality).items()}
            object.__setattr__(self, "supernode_cardinality", card)

    @property
    def num_atoms(self) -> int:
        return len(self.atomic_numbers)

    def cardinalities(self) -> np.ndarray:
        """Per-node cardinality, 0 for regular atoms."""
        out = np.zeros(self.num_atoms, dtype=np.int64)
        for k, v in (self.supernode_cardinality or {}).items():
            out[k] = v
        return out

    def replace(self, **changes) -> "AtomicSystem":
        kw = dict(
            positions=self.positions, atomic_numbers=self.atomic_numbers, tags=self.tags,
            cell=self.cell, pbc=self.pbc, energy=self.energy, forces=self.forces,
            sid=self.sid, supernode_cardinality=self.supernode_cardinality,
        )
        kw.update(changes)
        return AtomicSystem(**kw)

    def same_as(self, other: "AtomicSystem") -> bool:
        """Exact (bitwise) equality of all fields."""
        def eq(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(a, b)
        return (
            eq(self.positions, other.positions)
            and eq(self.atomic_numbers, other.atomic_numbers)
            and eq(self.tags, other.tags)
            and eq(self.cell, other.cell)
            and self.pbc == other.pbc
            and self.energy == other.energy
            and eq(self.forces, other.forces)
            and self.sid == other.sid
            and (self.supernode_cardinality or {}) == (other.supernode_cardinality or {})
        )


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate_system(system: AtomicSystem) -> ValidationReport:
    """Check every AtomicSystem invariant, returning the violations found."""
    v = []
    n = len(system.positions)
    if n < 1:
        v.append("system has no atoms")
    if len(system.atomic_numbers) != n:
        v.append(f"atomic_numbers length {len(system.atomic_numbers)} != {n}")
    if len(system.tags) != n:
        v.append(f"tags length {len(system.tags)} != {n}")
    for i, z in enumerate(system.atomic_numbers):
        if z < 1:
            v.append(f"atomic number out of range at index {i}")
    for i, t in enumerate(system.tags):
        if t not in (0, 1, 2):
            v.append(f"tag out of {{0,1,2}} at index {i}")
    if not np.all(np.isfinite(system.positions)):
        v.append("non-finite positions")
    if any(system.pbc):
        det = np.linalg.det(system.cell)
        if not np.isfinite(det) or abs(det) < 1e-12:
            v.append("cell not invertible")
    if system.forces is not None and len(system.forces) != n:
        v.append(f"force_labels rows {len(system.forces)} != {n}")
    for k, c in (system.supernode_cardinality or {}).items():
        if not 0 <= k < n:
            v.append(f"supernode_cardinality key {k} out of range")
            continue
        if c < 1:
            v.append(f"supernode cardinality not positive at index {k}")
        if not (system.atomic_numbers[k] >= SUPERNODE_Z or system.tags[k] == 0):
            v.append(f"supernode_cardinality key {k} is not a supernode")
    return ValidationReport(tuple(v))


@dataclass(frozen=True, eq=False)
class Graph:
    """Directed edge list. Edge ``e`` points ``src[e] -> dst[e]`` and its
    displacement is ``pos[dst] + offsets[e] @ cell - pos[src]``.
    Messages are aggregated at ``dst``."""

    num_nodes: int
    edge_index: np.ndarray  # (2, E)
    cell_offsets: np.ndarray  # (E, 3) int
    distances: np.ndarray  # (E,)
    cutoff: float = float("inf")

    def __post_init__(self):
        object.__setattr__(self, "num_nodes", int(self.num_nodes))
        object.__setattr__(self, "edge_index", _frozen(self.edge_index, np.int64).reshape(2, -1))
        object.__setattr__(self, "cell_offsets", _frozen(self.cell_offsets, np.int64).reshape(-1, 3))
        object.__setattr__(self, "distances", _frozen(self.distances, np.float64).reshape(-1))

    @property
    def src(self) -> np.ndarray:
        return self.edge_index[0]

    @property
    def dst(self) -> np.ndarray:
        return self.edge_index[1]

    @property
    def num_edges(self) -> int:
        return self.edge_index.shape[1]

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.src.tolist(), self.dst.tolist()))

    def edge_set(self) -> list[tuple[int, int, int, int, int]]:
        """Sorted multiset of (src, dst, ox, oy, oz) tuples."""
        return sorted(
            (int(s), int(d), *map(int, o))
            for s, d, o in zip(self.src, self.dst, self.cell_offsets)
        )

    def same_as(self, other: "Graph") -> bool:
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.edge_index, other.edge_index)
            and np.array_equal(self.cell_offsets, other.cell_offsets)
            and np.array_equal(self.distances, other.distances)
            and (self.cutoff == other.cutoff)
        )


def edge_vectors(positions: np.ndarray, cell: np.ndarray, graph: Graph) -> np.ndarray:
    return positions[graph.dst] + graph.cell_offsets @ cell - positions[graph.src]


def check_graph(graph: Graph, system: AtomicSystem, tol: float = 1e-9) -> list[str]:
    """Graph invariants against its owning system. Edges touching a supernode
    are exempt from the cutoff bound."""
    v = []
    if graph.num_nodes != system.num_atoms:
        v.append(f"graph has {graph.num_nodes} nodes, system {system.num_atoms}")
        return v
    if graph.num_edges and (graph.edge_index.min() < 0 or graph.edge_index.max() >= graph.num_nodes):
        v.append("edge index out of range")
        return v
    d = np.linalg.norm(edge_vectors(system.positions, system.cell, graph), axis=1)
    bad = np.flatnonzero(np.abs(d - graph.distances) > tol)
    if bad.size:
        v.append(f"cached distance mismatch at edge {bad[0]}")
    super_mask = system.cardinalities() > 0
    touches = super_mask[graph.src] | super_mask[graph.dst]
    over = np.flatnonzero((graph.distances > graph.cutoff + tol) & ~touches)
    if over.size:
        v.append(f"edge {over[0]} beyond cutoff")
    loops = (graph.src == graph.dst) & ~graph.cell_offsets.any(axis=1)
    if loops.any():
        v.append(f"self-loop at edge {np.flatnonzero(loops)[0]}")
    return v


@dataclass(frozen=True, eq=False)
class Batch:
    """Disjoint union of several (system, graph) pairs."""

    systems: tuple
    graphs: tuple
    node_graph_index: np.ndarray
    node_ptr: np.ndarray
    edge_ptr: np.ndarray
    positions: np.ndarray
    atomic_numbers: np.ndarray
    tags: np.ndarray
    cardinalities: np.ndarray
    edge_index: np.ndarray
    cell_offsets: np.ndarray
    edge_shifts: np.ndarray  # offsets @ cell of the owning graph, (E, 3)
    distances: np.ndarray
    edge_graph_index: np.ndarray

    @property
    def num_graphs(self) -> int:
        return len(self.systems)

    @property
    def num_nodes(self) -> int:
        return len(self.atomic_numbers)

    @property
    def num_edges(self) -> int:
        return self.edge_index.shape[1]

    @property
    def src(self):
        return self.edge_index[0]

    @property
    def dst(self):
        return self.edge_index[1]


def make_batch(systems, graphs) -> Batch:
    systems = tuple(systems)
    graphs = tuple(graphs)
    if not systems or len(systems) != len(graphs):
        raise ValueError(f"need equal, non-empty lists (got {len(systems)} systems, {len(graphs)} graphs)")
    for k, (s, g) in enumerate(zip(systems, graphs)):
        if g.num_nodes != s.num_atoms:
            raise ValueError(f"graph {k} has {g.num_nodes} nodes but system has {s.num_atoms}")
        if g.num_edges and (g.edge_index.min() < 0 or g.edge_index.max() >= g.num_nodes):
            raise ValueError(f"graph {k} edge index out of range")
    n_nodes = np.array([s.num_atoms for s in systems])
    n_edges = np.array([g.num_edges for g in graphs])
    node_ptr = np.concatenate([[0], np.cumsum(n_nodes)])
    edge_ptr = np.concatenate([[0], np.cumsum(n_edges)])
    gids = np.arange(len(systems))
    edge_index = np.concatenate(
        [g.edge_index + node_ptr[k] for k, g in enumerate(graphs)], axis=1)
    shifts = np.concatenate(
        [g.cell_offsets @ s.cell for s, g in zip(systems, graphs)], axis=0)
    return Batch(
        systems=systems,
        graphs=graphs,
        node_graph_index=np.repeat(gids, n_nodes),
        node_ptr=node_ptr,
        edge_ptr=edge_ptr,
        positions=np.concatenate([s.positions for s in systems]),
        atomic_numbers=np.concatenate([s.atomic_numbers for s in systems]),
        tags=np.concatenate([s.tags for s in systems]),
        cardinalities=np.concatenate([s.cardinalities() for s in systems]),
        edge_index=edge_index.reshape(2, -1),
        cell_offsets=np.concatenate([g.cell_offsets for g in graphs]).reshape(-1, 3),
        edge_shifts=shifts.reshape(-1, 3),
        distances=np.concatenate([g.distances for g in graphs]),
        edge_graph_index=np.repeat(gids, n_edges),
    )


def unbatch(batch: Batch) -> list[tuple[AtomicSystem, Graph]]:
    """Recover each (system, graph) from the batch's concatenated arrays."""
    out = []
    for k, (s, g) in enumerate(zip(batch.systems, batch.graphs)):
        n0, n1 = batch.node_ptr[k], batch.node_ptr[k + 1]
        e0, e1 = batch.edge_ptr[k], batch.edge_ptr[k + 1]
        system = s.replace(
            positions=batch.positions[n0:n1],
            atomic_numbers=batch.atomic_numbers[n0:n1],
            tags=batch.tags[n0:n1],
        )
        graph = Graph(
            num_nodes=n1 - n0,
            edge_index=batch.edge_index[:, e0:e1] - n0,
            cell_offsets=batch.cell_offsets[e0:e1],
            distances=batch.distances[e0:e1],
            cutoff=g.cutoff,
        )
        out.append((system, graph))
    return out
