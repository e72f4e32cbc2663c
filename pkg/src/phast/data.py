"""Dataset I/O and the synthetic adsorbate-on-slab generator.

Labels come from a Morse pair potential whose parameters are derived from
element properties, so physics-aware embeddings have something to find.
"""

from __future__ import annotations

import json
import math
import shlex
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from phast.core import AtomicSystem, Graph
from phast.elements import ALLEN_EV_TO_PAULING, MAX_Z, ElementTable, default_table
from phast.graph import GraphBuildConfig, build_radius_graph

SPLITS = ("train", "val_id", "val_ood_ads", "val_ood_cat", "val_ood_both")
VAL_SPLITS = SPLITS[1:]


class DataFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# JSON lines


def system_to_record(s: AtomicSystem) -> dict:
    rec = {
        "positions": s.positions.tolist(),
        "atomic_numbers": s.atomic_numbers.tolist(),
        "tags": s.tags.tolist(),
        "cell": s.cell.tolist(),
        "pbc": list(s.pbc),
        "energy": s.energy,
        "forces": None if s.forces is None else s.forces.tolist(),
        "sid": s.sid,
    }
    if s.supernode_cardinality:
        rec["supernode_cardinality"] = {str(k): v for k, v in s.supernode_cardinality.items()}
    return rec


_MANDATORY = ("positions", "atomic_numbers", "tags", "cell", "pbc")


def record_to_system(rec: dict) -> AtomicSystem:
    missing = [k for k in _MANDATORY if k not in rec]
    if missing:
        raise DataFormatError(f"missing mandatory key(s) {missing}")
    n = len(rec["positions"])
    if len(rec["atomic_numbers"]) != n or len(rec["tags"]) != n:
        raise DataFormatError(f"atomic_numbers/tags length differs from {n} positions")
    if rec.get("forces") is not None and len(rec["forces"]) != n:
        raise DataFormatError("forces length differs from positions")
    card = rec.get("supernode_cardinality")
    return AtomicSystem(
        positions=rec["positions"],
        atomic_numbers=rec["atomic_numbers"],
        tags=rec["tags"],
        cell=rec["cell"],
        pbc=tuple(rec["pbc"]),
        energy=rec.get("energy"),
        forces=rec.get("forces"),
        sid=str(rec.get("sid", "")),
        supernode_cardinality={int(k): v for k, v in card.items()} if card else None,
    )


def write_jsonl(systems, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in systems:
            fh.write(json.dumps(system_to_record(s)))
            fh.write("\n")


def read_jsonl(path) -> list[AtomicSystem]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(record_to_system(json.loads(line)))
            except (json.JSONDecodeError, DataFormatError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# extended XYZ


def _parse_comment(line: str) -> dict:
    info = {}
    for tok in shlex.split(line):
        if "=" in tok:
            k, v = tok.split("=", 1)
            info[k.strip()] = v
        else:
            info[tok] = "T"
    return info


def _parse_properties(spec: str):
    parts = spec.split(":")
    if len(parts) % 3:
        raise DataFormatError(f"malformed Properties {spec!r}")
    cols, start = {}, 0
    for k in range(0, len(parts), 3):
        name, kind, width = parts[k].lower(), parts[k + 1].upper(), int(parts[k + 2])
        cols[name] = (kind, start, width)
        start += width
    return cols


def _truthy(v: str) -> bool:
    return v.strip().upper() in ("T", "TRUE", "1")


def read_extxyz(path, table: ElementTable | None = None) -> list[AtomicSystem]:
    table = table or default_table()
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    systems, i, frame = [], 0, 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        try:
            n = int(lines[i].split()[0])
        except ValueError:
            raise DataFormatError(f"{path}:{i + 1}: expected atom count") from None
        info = _parse_comment(lines[i + 1] if i + 1 < len(lines) else "")
        props = _parse_properties(info.get("Properties", "species:S:1:pos:R:3"))
        if "tags" not in props:
            raise DataFormatError(f"{path}: frame {frame}: tags column required")
        body = lines[i + 2:i + 2 + n]
        if len(body) != n:
            raise DataFormatError(f"{path}: frame {frame}: expected {n} atom lines")
        if "pbc" in info:
            pbc = tuple(_truthy(t) for t in info["pbc"].split())
        else:
            pbc = (True, True, True) if "Lattice" in info else (False, False, False)
        if "Lattice" in info:
            cell = np.array(info["Lattice"].split(), dtype=np.float64).reshape(3, 3)
        elif any(pbc):
            raise DataFormatError(f"{path}: frame {frame}: periodic frame without Lattice")
        else:
            cell = np.eye(3)
        rows = [ln.split() for ln in body]
        _, s0, _ = props["species"]
        _, p0, _ = props["pos"]
        _, t0, _ = props["tags"]
        numbers = [table.number(r[s0]) for r in rows]
        positions = [[float(x) for x in r[p0:p0 + 3]] for r in rows]
        tags = [int(r[t0]) for r in rows]
        forces = None
        if "forces" in props:
            _, f0, _ = props["forces"]
            forces = [[float(x) for x in r[f0:f0 + 3]] for r in rows]
        energy = float(info["energy"]) if "energy" in info else None
        systems.append(AtomicSystem(positions, numbers, tags, cell, pbc, energy, forces,
                                    sid=info.get("sid", f"{Path(path).stem}-{frame}")))
        i += 2 + n
        frame += 1
    return systems


def write_extxyz(systems, path, table: ElementTable | None = None) -> None:
    table = table or default_table()
    with open(path, "w", encoding="utf-8") as fh:
        for s in systems:
            props = "species:S:1:pos:R:3:tags:I:1" + (":forces:R:3" if s.forces is not None else "")
            lattice = " ".join(repr(float(x)) for x in s.cell.ravel())
            pbc = " ".join("T" if p else "F" for p in s.pbc)
            head = f'Lattice="{lattice}" Properties={props} pbc="{pbc}" sid={s.sid}'
            if s.energy is not None:
                head += f" energy={s.energy!r}"
            fh.write(f"{s.num_atoms}\n{head}\n")
            for k in range(s.num_atoms):
                cols = [table.symbol(int(s.atomic_numbers[k]))] + [repr(float(x)) for x in s.positions[k]]
                cols.append(str(int(s.tags[k])))
                if s.forces is not None:
                    cols += [repr(float(x)) for x in s.forces[k]]
                fh.write(" ".join(cols) + "\n")


# ---------------------------------------------------------------------------
# Morse oracle


@dataclass
class OracleParams:
    """Morse parameters per element pair, as (MAX_Z+1)^2 matrices (NaN where
    undefined), plus the shared width ``a`` and cutoff ``r_c``."""

    D_e: np.ndarray
    r_e: np.ndarray
    a: float = 1.5
    r_c: float = 6.0

    def pair(self, z1: int, z2: int):
        return float(self.D_e[z1, z2]), float(self.r_e[z1, z2]), self.a


def derive_oracle_params(table: ElementTable | None = None, elements=None, a: float = 1.5, r_c: float = 6.0) -> OracleParams:
    """``r_e = r_cov(z1) + r_cov(z2)``, ``D_e = 0.5 + 0.4 |chi1 - chi2|`` eV
    with chi the Allen electronegativity on the Pauling-like scale."""
    table = table or default_table()
    rcov = table.prop("covalent_radius")
    chi = table.prop("electronegativity_allen") * ALLEN_EV_TO_PAULING
    if elements is not None:
        for z in elements:
            if not 1 <= z <= MAX_Z or np.isnan(rcov[z]) or np.isnan(chi[z]):
                raise KeyError(f"element Z={z} lacks covalent radius or electronegativity")
    return OracleParams(
        D_e=0.5 + 0.4 * np.abs(chi[:, None] - chi[None, :]),
        r_e=rcov[:, None] + rcov[None, :],
        a=a,
        r_c=r_c,
    )


def morse(d, D_e, r_e, a):
    """Pair energy ``D_e[(1 - e^{-a(d - r_e)})^2 - 1]`` and its d-derivative."""
    x = np.exp(-a * (d - r_e))
    energy = D_e * ((1.0 - x) ** 2 - 1.0)
    denergy = 2.0 * D_e * a * x * (1.0 - x)
    return energy, denergy


def oracle_energy_forces(system: AtomicSystem, params: OracleParams, mode: str = "interaction"):
    """Morse energy over pairs within ``r_c`` (all periodic images) and the
    exact forces ``-dE/dx``.

    ``mode="total"`` sums every pair; ``"interaction"`` only pairs with one
    adsorbate (tag 2) and one catalyst atom.
    """
    g = build_radius_graph(system, GraphBuildConfig(cutoff=params.r_c))
    z = system.atomic_numbers
    src, dst = g.src, g.dst
    if mode == "interaction":
        ads = system.tags == 2
        keep = ads[src] != ads[dst]
    elif mode == "total":
        keep = np.ones(len(src), bool)
    else:
        raise ValueError(f"unknown oracle mode {mode!r}")
    src, dst = src[keep], dst[keep]
    d = g.distances[keep]
    vec = system.positions[dst] + g.cell_offsets[keep] @ system.cell - system.positions[src]
    D_e, r_e = params.D_e[z[src], z[dst]], params.r_e[z[src], z[dst]]
    if np.isnan(D_e).any() or np.isnan(r_e).any():
        raise KeyError("oracle parameters undefined for some element pair")
    e, de = morse(d, D_e, r_e, params.a)
    energy = 0.5 * e.sum()  # each pair appears as two directed edges
    # dE/dx_dst = 0.5 de * u, dE/dx_src = -0.5 de * u
    contrib = (0.5 * de / d)[:, None] * vec
    grad = np.zeros_like(system.positions)
    np.add.at(grad, dst, contrib)
    np.add.at(grad, src, -contrib)
    return float(energy), -grad


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass
class GeneratorConfig:
    seed: int = 0
    n_train: int = 2000
    n_val: int = 500
    catalyst_element_pool: list = field(default_factory=lambda: [13, 26, 27, 28, 29, 30, 42, 44, 45, 46, 47, 77, 78, 79])
    adsorbate_element_pool: list = field(default_factory=lambda: [1, 6, 7, 8])
    ood_catalyst_pool: list = field(default_factory=lambda: [24, 48, 75, 76])
    ood_adsorbate_pool: list = field(default_factory=lambda: [9, 16, 17])
    max_catalyst_elements: int = 2
    lattice_constant: float = 3.8
    slab_layers: int = 3
    surface_size: int = 4
    adsorbate_size: tuple = (1, 3)
    adsorbate_height: tuple = (1.5, 2.5)
    jitter_sigma: float = 0.05
    vacuum: float = 20.0
    target_tag0_fraction: float = 0.65
    energy_mode: str = "interaction"

    def __post_init__(self):
        self.adsorbate_size = tuple(self.adsorbate_size)
        self.adsorbate_height = tuple(self.adsorbate_height)
        if self.slab_layers < 2:
            raise ValueError("slab_layers must be >= 2")
        if set(self.catalyst_element_pool) & set(self.ood_catalyst_pool):
            raise ValueError("ID and OOD catalyst pools overlap")
        if set(self.adsorbate_element_pool) & set(self.ood_adsorbate_pool):
            raise ValueError("ID and OOD adsorbate pools overlap")
        lo, hi = self.adsorbate_size
        k2 = self.surface_size ** 2
        frac = (self.slab_layers - 1) * k2 / (self.slab_layers * k2 + 0.5 * (lo + hi))
        if abs(frac - self.target_tag0_fraction) > 0.03:
            warnings.warn(
                f"slab geometry gives a tag-0 fraction of {frac:.3f}, "
                f"target is {self.target_tag0_fraction:.3f}", stacklevel=2)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown generator options {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def pools(self, split: str):
        cat_ood = split in ("val_ood_cat", "val_ood_both")
        ads_ood = split in ("val_ood_ads", "val_ood_both")
        return (self.ood_catalyst_pool if cat_ood else self.catalyst_element_pool,
                self.ood_adsorbate_pool if ads_ood else self.adsorbate_element_pool)

    def all_elements(self):
        return sorted(set(self.catalyst_element_pool) | set(self.adsorbate_element_pool)
                      | set(self.ood_catalyst_pool) | set(self.ood_adsorbate_pool))


class GenerationError(RuntimeError):
    pass


def _min_image_distance(positions, cell, p):
    """Smallest distance from point ``p`` to any atom, periodic in x and y."""
    best = np.inf
    for ox in (-1, 0, 1):
        for oy in (-1, 0, 1):
            shift = ox * cell[0] + oy * cell[1]
            d = np.linalg.norm(positions + shift - p, axis=1)
            best = min(best, d.min())
    return best


def _slab(config: GeneratorConfig, rng, elements):
    a_nn = config.lattice_constant / math.sqrt(2.0)
    dz = config.lattice_constant / 2.0
    k = config.surface_size
    pos, tags = [], []
    for layer in range(config.slab_layers):
        off = 0.5 * a_nn * (layer % 2)
        for ix in range(k):
            for iy in range(k):
                pos.append([ix * a_nn + off, iy * a_nn + off, layer * dz])
                tags.append(1 if layer == config.slab_layers - 1 else 0)
    pos = np.array(pos) + rng.normal(0.0, config.jitter_sigma, (len(pos), 3))
    numbers = rng.choice(elements, size=len(pos))
    height = (config.slab_layers - 1) * dz
    cell = np.diag([k * a_nn, k * a_nn, height + config.adsorbate_height[1] + 3.0 + config.vacuum])
    return pos, numbers, np.array(tags), cell, height, a_nn, off


def generate_system(config: GeneratorConfig, oracle: OracleParams, split: str, index: int) -> AtomicSystem:
    split_code = SPLITS.index(split)
    rng = np.random.default_rng([config.seed, split_code, index])
    cat_pool, ads_pool = config.pools(split)
    for _ in range(100):
        n_el = int(rng.integers(1, min(config.max_catalyst_elements, len(cat_pool)) + 1))
        cat_el = rng.choice(cat_pool, size=n_el, replace=False)
        pos, numbers, tags, cell, top, a_nn, _ = _slab(config, rng, cat_el)
        n_ads = int(rng.integers(config.adsorbate_size[0], config.adsorbate_size[1] + 1))
        ads_z = rng.choice(ads_pool, size=n_ads)
        site = rng.uniform(0.0, config.surface_size * a_nn, 2)
        h = rng.uniform(*config.adsorbate_height)
        ads_pos = [np.array([site[0], site[1], top + h])]
        for m in range(1, n_ads):
            bond = oracle.r_e[ads_z[m - 1], ads_z[m]]
            direction = rng.normal(size=3)
            direction[2] = abs(direction[2]) + 0.5
            direction /= np.linalg.norm(direction)
            ads_pos.append(ads_pos[-1] + bond * direction)
        ok = True
        for m, p in enumerate(ads_pos):
            if _min_image_distance(np.concatenate([pos] + [q[None] for q in ads_pos[:m]]), cell, p) < 0.5:
                ok = False
                break
        if ok:
            break
    else:
        raise GenerationError(f"{split}[{index}]: no feasible geometry after 100 tries")
    system = AtomicSystem(
        positions=np.concatenate([pos, np.array(ads_pos)]),
        atomic_numbers=np.concatenate([numbers, ads_z]),
        tags=np.concatenate([tags, np.full(n_ads, 2)]),
        cell=cell,
        pbc=(True, True, False),
        sid=f"{split}-{config.seed}-{index}",
    )
    energy, forces = oracle_energy_forces(system, oracle, config.energy_mode)
    return system.replace(energy=energy, forces=forces)


def generate_split(config: GeneratorConfig, oracle: OracleParams, split: str, n: int | None = None):
    n = (config.n_train if split == "train" else config.n_val) if n is None else n
    return [generate_system(config, oracle, split, i) for i in range(n)]


def generate_dataset(config: GeneratorConfig, oracle: OracleParams | None = None) -> dict[str, list[AtomicSystem]]:
    """Train split plus the four validation splits (ID, OOD adsorbate, OOD
    catalyst, OOD both), fully determined by ``config.seed``."""
    oracle = oracle or derive_oracle_params(elements=config.all_elements())
    return {split: generate_split(config, oracle, split) for split in SPLITS}


def write_dataset(dataset: dict, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split, systems in dataset.items():
        write_jsonl(systems, out / f"{split}.jsonl")


def read_dataset(in_dir, splits=SPLITS) -> dict[str, list[AtomicSystem]]:
    d = Path(in_dir)
    return {s: read_jsonl(d / f"{s}.jsonl") for s in splits if (d / f"{s}.jsonl").exists()}


def write_graphs(graphs, path) -> None:
    """Store a list of graphs in one ``.npz`` (concatenated with pointers)."""
    graphs = list(graphs)
    e = np.array([g.num_edges for g in graphs], dtype=np.int64)
    np.savez(
        path,
        num_nodes=np.array([g.num_nodes for g in graphs], dtype=np.int64),
        edge_ptr=np.concatenate([[0], np.cumsum(e)]).astype(np.int64),
        edge_index=np.concatenate([g.edge_index for g in graphs], axis=1) if graphs else np.zeros((2, 0), np.int64),
        cell_offsets=np.concatenate([g.cell_offsets for g in graphs]) if graphs else np.zeros((0, 3), np.int64),
        distances=np.concatenate([g.distances for g in graphs]) if graphs else np.zeros(0),
        cutoff=np.array([g.cutoff for g in graphs], dtype=np.float64),
    )


def read_graphs(path) -> list[Graph]:
    with np.load(path) as z:
        ptr = z["edge_ptr"]
        return [
            Graph(int(z["num_nodes"][k]), z["edge_index"][:, ptr[k]:ptr[k + 1]],
                  z["cell_offsets"][ptr[k]:ptr[k + 1]], z["distances"][ptr[k]:ptr[k + 1]],
                  float(z["cutoff"][k]))
            for k in range(len(z["num_nodes"]))
        ]
