"""Cutoff radius graphs under periodic boundary conditions."""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from phast.core import AtomicSystem, Graph


@dataclass(frozen=True)
class GraphBuildConfig:
    cutoff: float = 6.0
    max_neighbors: int | None = None
    enforce_pbc: bool = True

    def __post_init__(self):
        if not self.cutoff > 0:
            raise ValueError(f"cutoff must be positive, got {self.cutoff}")
        if self.max_neighbors is not None and self.max_neighbors < 1:
            raise ValueError(f"max_neighbors must be >= 1, got {self.max_neighbors}")


def cell_heights(cell: np.ndarray) -> np.ndarray:
    """Perpendicular height of the cell along each lattice direction."""
    vol = abs(np.linalg.det(cell))
    a, b, c = cell
    areas = np.array([
        np.linalg.norm(np.cross(b, c)),
        np.linalg.norm(np.cross(c, a)),
        np.linalg.norm(np.cross(a, b)),
    ])
    return vol / areas


def periodic_axes(system: AtomicSystem, config: GraphBuildConfig) -> np.ndarray:
    pbc = np.array(system.pbc, dtype=bool) if config.enforce_pbc else np.zeros(3, bool)
    if pbc.any():
        det = np.linalg.det(system.cell)
        if not np.isfinite(det) or abs(det) < 1e-12:
            raise ValueError(f"system {system.sid!r}: periodic but cell is not invertible")
    return pbc


def _offset_ranges(system, pbc, cutoff):
    """Integer offset bounds per axis covering every image within ``cutoff``.

    For wrapped positions this is ``[-ceil(c/h), ceil(c/h)]``; unwrapped
    positions widen it by their fractional spread.
    """
    ranges = []
    if pbc.any():
        heights = cell_heights(system.cell)
        frac = system.positions @ np.linalg.inv(system.cell)
    for k in range(3):
        if not pbc[k]:
            ranges.append(range(0, 1))
            continue
        r = cutoff / heights[k]
        spread = frac[:, k].max() - frac[:, k].min()
        lo = math.floor(-r - spread - 1e-9)
        hi = math.ceil(r + spread + 1e-9)
        ranges.append(range(lo, hi + 1))
    return ranges


def _finalize(system, src, dst, offsets, dist, config):
    if config.max_neighbors is not None and len(dst):
        order = np.lexsort((src, offsets[:, 2], offsets[:, 1], offsets[:, 0], dist, dst))
        dst_sorted = dst[order]
        starts = np.searchsorted(dst_sorted, dst_sorted, side="left")
        rank = np.arange(len(order)) - starts
        keep = order[rank < config.max_neighbors]
        src, dst, offsets, dist = src[keep], dst[keep], offsets[keep], dist[keep]
    order = np.lexsort((offsets[:, 2], offsets[:, 1], offsets[:, 0], src, dst))
    return Graph(
        num_nodes=system.num_atoms,
        edge_index=np.stack([src[order], dst[order]]),
        cell_offsets=offsets[order],
        distances=dist[order],
        cutoff=config.cutoff,
    )


def build_radius_graph(system: AtomicSystem, config: GraphBuildConfig = GraphBuildConfig()) -> Graph:
    """All directed edges ``(i, j, o)`` with ``0 < |x_j + o @ cell - x_i| <= cutoff``.

    Image search: for every candidate lattice offset the full pair-distance
    matrix is evaluated at once.
    """
    pbc = periodic_axes(system, config)
    pos = system.positions
    c2 = config.cutoff ** 2
    src_l, dst_l, off_l, d_l = [], [], [], []
    for o in itertools.product(*_offset_ranges(system, pbc, config.cutoff)):
        o = np.array(o)
        shift = o @ system.cell
        diff = pos[None, :, :] + shift - pos[:, None, :]  # [i, j] = x_j + shift - x_i
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        mask = d2 <= c2
        if not o.any():
            np.fill_diagonal(mask, False)
        i, j = np.nonzero(mask)
        if i.size == 0:
            continue
        d = np.sqrt(d2[i, j])
        nz = d > 0
        src_l.append(i[nz])
        dst_l.append(j[nz])
        off_l.append(np.broadcast_to(o, (int(nz.sum()), 3)))
        d_l.append(d[nz])
    if src_l:
        src, dst = np.concatenate(src_l), np.concatenate(dst_l)
        offsets, dist = np.concatenate(off_l), np.concatenate(d_l)
    else:
        src = dst = np.zeros(0, dtype=np.int64)
        offsets, dist = np.zeros((0, 3), dtype=np.int64), np.zeros(0)
    return _finalize(system, src, dst, offsets.astype(np.int64), dist, config)


def brute_force_radius_graph(system: AtomicSystem, config: GraphBuildConfig = GraphBuildConfig()) -> Graph:
    """Reference enumeration with scalar loops over every offset with
    ``|component| <= ceil(cutoff / min cell height)`` on periodic axes."""
    pbc = periodic_axes(system, config)
    if pbc.any():
        m = math.ceil(config.cutoff / cell_heights(system.cell)[pbc].min())
    else:
        m = 0
    axes = [range(-m, m + 1) if p else range(0, 1) for p in pbc]
    pos = system.positions.tolist()
    cell = system.cell.tolist()
    src, dst, offs, dist = [], [], [], []
    for o in itertools.product(*axes):
        shift = [sum(o[k] * cell[k][c] for k in range(3)) for c in range(3)]
        for i in range(len(pos)):
            for j in range(len(pos)):
                v = [pos[j][c] + shift[c] - pos[i][c] for c in range(3)]
                d = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
                if 0 < d <= config.cutoff:
                    src.append(i)
                    dst.append(j)
                    offs.append(o)
                    dist.append(d)
    return _finalize(
        system,
        np.array(src, dtype=np.int64),
        np.array(dst, dtype=np.int64),
        np.array(offs, dtype=np.int64).reshape(-1, 3),
        np.array(dist, dtype=np.float64),
        config,
    )


def worker_count() -> int:
    env = os.environ.get("PHAST_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def build_graphs(systems, config: GraphBuildConfig = GraphBuildConfig(), workers: int | None = None) -> list[Graph]:
    """Build graphs for many systems; output order follows input order."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(systems) < 2:
        return [build_radius_graph(s, config) for s in systems]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: build_radius_graph(s, config), systems))
