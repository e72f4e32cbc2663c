"""Graph rewiring: drop or aggregate the sub-surface (tag 0) atoms."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from phast.core import SUPERNODE_Z, AtomicSystem, Graph
from phast.graph import GraphBuildConfig, build_radius_graph


class RewireStrategy(str, enum.Enum):
    NONE = "none"
    REMOVE_TAG0 = "remove_tag0"
    SUPERNODE_PER_GRAPH = "supernode_per_graph"
    SUPERNODE_PER_ATOM_TYPE = "supernode_per_atom_type"

    @classmethod
    def parse(cls, value) -> "RewireStrategy":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"sn_graph": "supernode_per_graph", "sn_atom_type": "supernode_per_atom_type"}
        return cls(aliases.get(key, key))


class StrategyInapplicable(ValueError):
    """Raised when a supernode strategy is asked to run without tag-0 atoms."""


def _remap_cardinality(card, keep):
    if not card:
        return card
    new_index = {int(old): new for new, old in enumerate(keep)}
    return {new_index[k]: v for k, v in card.items() if k in new_index}


def remove_tag0(system: AtomicSystem) -> AtomicSystem:
    """Filter out all tag-0 atoms; identity when there are none."""
    keep = np.flatnonzero(system.tags != 0)
    if len(keep) == system.num_atoms:
        return system
    if len(keep) == 0:
        raise ValueError(f"system {system.sid!r}: every atom has tag 0")
    return system.replace(
        positions=system.positions[keep],
        atomic_numbers=system.atomic_numbers[keep],
        tags=system.tags[keep],
        forces=None if system.forces is None else system.forces[keep],
        supernode_cardinality=_remap_cardinality(system.supernode_cardinality, keep),
    )


def filter_graph(graph: Graph, keep: np.ndarray) -> Graph:
    """Induced subgraph on the (sorted) node indices ``keep``, renumbered densely."""
    new_index = np.full(graph.num_nodes, -1, dtype=np.int64)
    new_index[keep] = np.arange(len(keep))
    mask = (new_index[graph.src] >= 0) & (new_index[graph.dst] >= 0)
    return Graph(
        num_nodes=len(keep),
        edge_index=new_index[graph.edge_index[:, mask]],
        cell_offsets=graph.cell_offsets[mask],
        distances=graph.distances[mask],
        cutoff=graph.cutoff,
    )


def _sorted_graph(num_nodes, src, dst, offsets, dist, cutoff):
    order = np.lexsort((offsets[:, 2], offsets[:, 1], offsets[:, 0], src, dst))
    return Graph(num_nodes, np.stack([src[order], dst[order]]), offsets[order], dist[order], cutoff)


def _aggregate(system: AtomicSystem, graph: Graph, groups: list[np.ndarray], codes: list[int]):
    """Replace each index set in ``groups`` by one node at its mean position.

    Adjacency to the new node is the boolean max over the set; distinct new
    nodes are fully connected; self-loops are dropped.
    """
    removed = np.concatenate(groups)
    keep = np.setdiff1d(np.arange(system.num_atoms), removed)
    n_keep, n_new = len(keep), len(groups)
    new_index = np.full(system.num_atoms, -1, dtype=np.int64)
    new_index[keep] = np.arange(n_keep)
    for k, g in enumerate(groups):
        new_index[g] = n_keep + k
    super_pos = np.stack([system.positions[g].mean(axis=0) for g in groups])
    positions = np.concatenate([system.positions[keep], super_pos])

    s, d = new_index[graph.src], new_index[graph.dst]
    regular = (s < n_keep) & (d < n_keep)
    src_l = [s[regular]]
    dst_l = [d[regular]]
    off_l = [graph.cell_offsets[regular]]
    dist_l = [graph.distances[regular]]

    touching = ~regular & (s != d)
    pairs = np.unique(np.stack([s[touching], d[touching]], axis=1), axis=0)
    # supernode pairs are fully connected regardless of original adjacency
    pairs = pairs[~((pairs[:, 0] >= n_keep) & (pairs[:, 1] >= n_keep))]
    sn = np.arange(n_keep, n_keep + n_new)
    ss = np.array([(a, b) for a in sn for b in sn if a != b], dtype=np.int64).reshape(-1, 2)
    pairs = np.concatenate([pairs, ss])
    vec = positions[pairs[:, 1]] - positions[pairs[:, 0]]
    src_l.append(pairs[:, 0])
    dst_l.append(pairs[:, 1])
    off_l.append(np.zeros((len(pairs), 3), dtype=np.int64))
    dist_l.append(np.linalg.norm(vec, axis=1))

    forces = None
    if system.forces is not None:
        forces = np.concatenate([system.forces[keep], np.zeros((n_new, 3))])
    card = _remap_cardinality(system.supernode_cardinality, keep) or {}
    card.update({n_keep + k: len(g) for k, g in enumerate(groups)})
    new_system = system.replace(
        positions=positions,
        atomic_numbers=np.concatenate([system.atomic_numbers[keep], codes]),
        tags=np.concatenate([system.tags[keep], np.zeros(n_new, dtype=np.int64)]),
        forces=forces,
        supernode_cardinality=card,
    )
    new_graph = _sorted_graph(
        n_keep + n_new,
        np.concatenate(src_l), np.concatenate(dst_l),
        np.concatenate(off_l).astype(np.int64), np.concatenate(dist_l),
        graph.cutoff,
    )
    return new_system, new_graph


def supernode_per_graph(system: AtomicSystem, graph: Graph):
    S = np.flatnonzero(system.tags == 0)
    if len(S) == 0:
        raise StrategyInapplicable(f"system {system.sid!r} has no tag-0 atoms")
    return _aggregate(system, graph, [S], [SUPERNODE_Z])


def supernode_per_atom_type(system: AtomicSystem, graph: Graph):
    S = np.flatnonzero(system.tags == 0)
    if len(S) == 0:
        raise StrategyInapplicable(f"system {system.sid!r} has no tag-0 atoms")
    elements = np.unique(system.atomic_numbers[S])
    groups = [S[system.atomic_numbers[S] == z] for z in elements]
    return _aggregate(system, graph, groups, [int(z) for z in elements])


def rewire(system: AtomicSystem, strategy, build: GraphBuildConfig = GraphBuildConfig(), graph: Graph | None = None):
    """Apply ``strategy`` and return a fresh (system, graph) pair.

    Supernode strategies fall back to ``none`` when there is nothing to
    aggregate.
    """
    strategy = RewireStrategy.parse(strategy)
    if strategy is RewireStrategy.REMOVE_TAG0:
        reduced = remove_tag0(system)
        return reduced, build_radius_graph(reduced, build)
    if graph is None:
        graph = build_radius_graph(system, build)
    if strategy is RewireStrategy.NONE or not (system.tags == 0).any():
        return system, graph
    if strategy is RewireStrategy.SUPERNODE_PER_GRAPH:
        return supernode_per_graph(system, graph)
    return supernode_per_atom_type(system, graph)


def cardinality_encoding(cardinality: int, dim: int) -> np.ndarray:
    """Sinusoidal positional encoding of a supernode's member count."""
    if dim < 2 or dim % 2:
        raise ValueError(f"dim must be even and >= 2, got {dim}")
    return cardinality_encodings(np.array([cardinality]), dim)[0]


def cardinality_encodings(cardinalities: np.ndarray, dim: int) -> np.ndarray:
    if dim < 2 or dim % 2:
        raise ValueError(f"dim must be even and >= 2, got {dim}")
    m = np.arange(dim // 2)
    freq = 10000.0 ** (-2.0 * m / dim)
    angle = np.asarray(cardinalities, dtype=np.float64)[:, None] * freq[None, :]
    out = np.empty((len(angle), dim))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out


@dataclass
class RewiringStats:
    atoms_remaining_pct: float
    edges_remaining_pct: float
    per_sample: list[dict]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["sample_id", "nodes_before", "nodes_after", "edges_before", "edges_after"])
            w.writeheader()
            w.writerows(self.per_sample)


def rewiring_stats(dataset, strategy, build: GraphBuildConfig = GraphBuildConfig()) -> RewiringStats:
    if not dataset:
        raise ValueError("empty dataset")
    rows = []
    for system in dataset:
        full = build_radius_graph(system, build)
        new_system, new_graph = rewire(system, strategy, build, graph=full)
        rows.append({
            "sample_id": system.sid,
            "nodes_before": system.num_atoms,
            "nodes_after": new_system.num_atoms,
            "edges_before": full.num_edges,
            "edges_after": new_graph.num_edges,
        })
    nb = sum(r["nodes_before"] for r in rows)
    na = sum(r["nodes_after"] for r in rows)
    eb = sum(r["edges_before"] for r in rows)
    ea = sum(r["edges_after"] for r in rows)
    return RewiringStats(100.0 * na / nb, 100.0 * ea / eb if eb else 100.0, rows)
