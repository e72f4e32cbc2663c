"""Invariant message-passing backbones with energy and force heads."""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from phast import autodiff as ad
from phast.core import Batch
from phast.elements import ElementTable, default_table
from phast.embeddings import EmbeddingConfig, EmbeddingTables, embed_atoms
from phast.core import SUPERNODE_Z

BACKBONES = ("schnet_lite", "dimelite")
ENERGY_HEADS = ("global_sum", "w_init", "w_final")
FORCE_HEADS = ("none", "from_energy", "direct")


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "schnet_lite"
    hidden: int = 64
    layers: int = 3
    rbf_count: int = 32
    angular_count: int = 4
    int_dim: int = 8
    cutoff: float = 6.0

    def __post_init__(self):
        if self.kind not in BACKBONES:
            raise ValueError(f"unknown backbone {self.kind!r}")
        if min(self.hidden, self.layers, self.rbf_count) < 1:
            raise ValueError("hidden, layers and rbf_count must be >= 1")
        if self.kind == "dimelite" and min(self.angular_count, self.int_dim) < 1:
            raise ValueError("angular_count and int_dim must be >= 1")


@dataclass(frozen=True)
class HeadConfig:
    energy_head: str = "global_sum"
    force_head: str = "none"

    def __post_init__(self):
        if self.energy_head not in ENERGY_HEADS:
            raise ValueError(f"unknown energy head {self.energy_head!r}")
        if self.force_head not in FORCE_HEADS:
            raise ValueError(f"unknown force head {self.force_head!r}")


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)
    embeddings: EmbeddingConfig = field(default_factory=EmbeddingConfig)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(
            backbone=BackboneConfig(**d.get("backbone", {})),
            heads=HeadConfig(**d.get("heads", {})),
            embeddings=EmbeddingConfig(**d.get("embeddings", {})),
        )


class BatchIndex:
    """Scatter/gather indices derived from a batch's structure."""

    def __init__(self, batch: Batch, wedges: bool = False):
        n, e = batch.num_nodes, batch.num_edges
        self.src = ad.SegmentIndex(batch.src, n)
        self.dst = ad.SegmentIndex(batch.dst, n)
        self.graph = ad.SegmentIndex(batch.node_graph_index, batch.num_graphs)
        self.wedge_in = self.wedge_out = None
        if wedges:
            w_in, w_out = triplets(batch.src, batch.dst, batch.cell_offsets, n)
            self.wedge_in = ad.SegmentIndex(w_in, e)
            self.wedge_out = ad.SegmentIndex(w_out, e)

    @property
    def num_wedges(self) -> int:
        return 0 if self.wedge_in is None else len(self.wedge_in.ids)


def triplets(src, dst, offsets, num_nodes):
    """Directed-edge pairs ``(k -> j, j -> i)`` sharing ``j``.

    Returns ``(incoming, outgoing)`` edge indices; the reverse of an edge
    (same endpoints, negated offset) is not counted as its neighbour.
    """
    order = np.argsort(dst, kind="stable")
    counts = np.bincount(dst, minlength=num_nodes)
    ptr = np.concatenate([[0], np.cumsum(counts)])
    per_edge = counts[src]
    w_out = np.repeat(np.arange(len(src)), per_edge)
    starts = np.repeat(ptr[src], per_edge)
    within = np.arange(len(w_out)) - np.repeat(np.cumsum(per_edge) - per_edge, per_edge)
    w_in = order[starts + within]
    reverse = (src[w_in] == dst[w_out]) & (offsets[w_in] == -offsets[w_out]).all(axis=1)
    return w_in[~reverse], w_out[~reverse]


def angular_basis(cos_theta, count):
    """``[cos^0, cos^1, ..., cos^(count-1)]`` per row."""
    c = cos_theta if isinstance(cos_theta, ad.Tensor) else ad.Tensor(cos_theta)
    c = ad.reshape(c, (-1, 1))
    cols = [ad.Tensor(np.ones(c.shape))]
    p = c
    for _ in range(1, count):
        cols.append(p)
        p = p * c
    return ad.concat_cols(cols) if len(cols) > 1 else cols[0]


@dataclass
class Output:
    energy: ad.Tensor
    forces: ad.Tensor | None
    h0: ad.Tensor
    hL: ad.Tensor
    no_edges: bool = False


class PhastModel:
    """Embedding block + backbone + energy head (+ optional force head).

    Parameters live in ``self.params`` in a fixed insertion order. ``shift``
    and ``scale`` are fixed normalisers: ``E = scale * sum(...) + shift``.
    """

    def __init__(self, config: ModelConfig, table: ElementTable | None = None, seed: int = 0):
        self.config = config
        self.table = table or default_table()
        rng = np.random.default_rng(seed)
        b = config.backbone
        self.emb = EmbeddingTables(config.embeddings, self.table, rng)
        self.params: dict[str, ad.Parameter] = dict(self.emb.params)
        self.energy_shift = 0.0
        self.energy_scale = 1.0
        self.force_scale = 1.0
        self.alpha_override: float | None = None
        self.centers = np.linspace(0.0, b.cutoff, b.rbf_count)
        self.width = b.cutoff / b.rbf_count if b.rbf_count > 1 else b.cutoff

        H, K = b.hidden, b.rbf_count
        self._dense(rng, "in", config.embeddings.d_total, H)
        if b.kind == "schnet_lite":
            self._dense(rng, "filter1", K, H)
            for l in range(b.layers):
                self._dense(rng, f"int{l}.filter2", H, H)
                self._dense(rng, f"int{l}.in2f", H, H, bias=False)
                self._dense(rng, f"int{l}.update1", H, H)
                self._dense(rng, f"int{l}.update2", H, H)
        else:
            I, P = b.int_dim, b.angular_count
            self._dense(rng, "edge_emb", 2 * H + K, H)
            for l in range(b.layers):
                self._dense(rng, f"int{l}.kj", H, H)
                self._dense(rng, f"int{l}.rbf", K, H, bias=False)
                self._dense(rng, f"int{l}.down", H, I, bias=False)
                self._dense(rng, f"int{l}.sbf", P, I, bias=False)
                self._dense(rng, f"int{l}.up", I, H, bias=False)
                self._dense(rng, f"int{l}.ji", H, H)
                self._dense(rng, f"int{l}.update", H, H)
                self._dense(rng, f"out{l}.rbf", K, H, bias=False)
                self._dense(rng, f"out{l}.lin", H, H)
        self._dense(rng, "energy.out1", H, H // 2 or 1)
        self._dense(rng, "energy.out2", H // 2 or 1, 1, zero=True)
        if config.heads.energy_head != "global_sum":
            d_in = config.embeddings.d_total if config.heads.energy_head == "w_init" else H
            self._dense(rng, "alpha.1", d_in, H // 2 or 1)
            self._dense(rng, "alpha.2", H // 2 or 1, 1)
        if config.heads.force_head == "direct":
            self._dense(rng, "force.1", H + K, H)
            self._dense(rng, "force.2", H, 1, zero=True)

    # -- parameters -----------------------------------------------------

    def _dense(self, rng, name, fan_in, fan_out, bias=True, zero=False):
        lim = 1.0 / np.sqrt(fan_in)
        w = np.zeros((fan_in, fan_out)) if zero else rng.uniform(-lim, lim, (fan_in, fan_out))
        self.params[f"{name}.W"] = ad.Parameter(f"{name}.W", w)
        if bias:
            self.params[f"{name}.b"] = ad.Parameter(f"{name}.b", np.zeros(fan_out))

    def _lin(self, x, name):
        W = self.params[f"{name}.W"].tensor()
        b = self.params.get(f"{name}.b")
        return ad.linear(x, W, None if b is None else b.tensor())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.value.size for p in self.params.values()))

    # -- forward --------------------------------------------------------

    def index(self, batch: Batch) -> BatchIndex:
        wedges = self.config.backbone.kind == "dimelite"
        cached = getattr(batch, "_phast_index", None)
        if cached is None or (wedges and cached.wedge_in is None):
            cached = BatchIndex(batch, wedges=wedges)
            object.__setattr__(batch, "_phast_index", cached)
        return cached

    def embed(self, batch: Batch) -> ad.Tensor:
        return embed_atoms(batch.atomic_numbers, batch.tags, batch.cardinalities,
                           self.config.embeddings, self.emb)

    def edge_geometry(self, batch: Batch, idx: BatchIndex, positions):
        r = ad.gather_rows(positions, idx.dst) + batch.edge_shifts - ad.gather_rows(positions, idx.src)
        d = ad.vector_norm_rows(r)
        return r, d

    def backbone(self, batch, idx, h0, r, d):
        b = self.config.backbone
        rbf = ad.gaussian_rbf(d, self.centers, self.width)
        h = self._lin(h0, "in")
        if b.kind == "schnet_lite":
            # the first filter layer is shared by all interactions
            f1 = ad.shifted_softplus(self._lin(rbf, "filter1"))
            for l in range(b.layers):
                W = self._lin(f1, f"int{l}.filter2")
                x = self._lin(h, f"int{l}.in2f")
                agg = ad.segment_sum(ad.gather_rows(x, idx.src) * W, idx.dst)
                h = h + self._lin(ad.shifted_softplus(self._lin(agg, f"int{l}.update1")), f"int{l}.update2")
            return h, rbf
        # directional variant: messages live on edges, wedges carry angles
        cos = ad.cosine_rows(-1.0 * ad.gather_rows(r, idx.wedge_in), ad.gather_rows(r, idx.wedge_out), eps=1e-12)
        ang = angular_basis(cos, b.angular_count)
        m = ad.shifted_softplus(self._lin(
            ad.concat_cols([ad.gather_rows(h, idx.src), ad.gather_rows(h, idx.dst), rbf]), "edge_emb"))
        out = h
        for l in range(b.layers):
            x = ad.shifted_softplus(self._lin(m, f"int{l}.kj")) * self._lin(rbf, f"int{l}.rbf")
            x = ad.shifted_softplus(self._lin(x, f"int{l}.down"))
            w = ad.gather_rows(x, idx.wedge_in) * self._lin(ang, f"int{l}.sbf")
            agg = ad.shifted_softplus(self._lin(ad.segment_sum(w, idx.wedge_out), f"int{l}.up"))
            m = m + ad.shifted_softplus(self._lin(ad.shifted_softplus(self._lin(m, f"int{l}.ji")) + agg, f"int{l}.update"))
            node = ad.segment_sum(m * self._lin(rbf, f"out{l}.rbf"), idx.dst)
            out = out + self._lin(ad.shifted_softplus(node), f"out{l}.lin")
        return out, rbf

    def atom_energies(self, h0, hL):
        hat = self._lin(ad.shifted_softplus(self._lin(hL, "energy.out1")), "energy.out2")
        head = self.config.heads.energy_head
        if head == "global_sum":
            return hat
        if self.alpha_override is not None:
            return hat * self.alpha_override
        src = h0 if head == "w_init" else hL
        alpha = ad.sigmoid(self._lin(ad.shifted_softplus(self._lin(src, "alpha.1")), "alpha.2"))
        return alpha * hat

    def energy(self, batch, idx, h0, hL):
        per_graph = ad.segment_sum(self.atom_energies(h0, hL), idx.graph)
        return ad.reshape(per_graph, (-1,)) * self.energy_scale + self.energy_shift

    def direct_forces(self, idx, hL, rbf, r, d):
        dv = d.value if isinstance(d, ad.Tensor) else d
        if np.any(dv <= 0):
            raise ValueError("zero-distance edge in direct force head")
        pair = ad.gather_rows(hL, idx.src) + ad.gather_rows(hL, idx.dst)
        s = self._lin(ad.shifted_softplus(self._lin(ad.concat_cols([pair, rbf]), "force.1")), "force.2")
        unit = r / ad.reshape(d, (-1, 1))
        return ad.segment_sum(s * unit, idx.dst) * self.force_scale

    def forward(self, batch: Batch, positions=None) -> Output:
        """Energies (and direct forces when configured).

        ``positions`` may be a watched Tensor so that energy gradients with
        respect to atom positions can be taken.
        """
        idx = self.index(batch)
        pos = positions if positions is not None else ad.Tensor(batch.positions)
        h0 = self.embed(batch)
        no_edges = batch.num_edges == 0
        if no_edges:
            warnings.warn("batch has no edges; only atom-wise updates apply", RuntimeWarning, stacklevel=2)
        r, d = self.edge_geometry(batch, idx, pos)
        hL, rbf = self.backbone(batch, idx, h0, r, d)
        energy = self.energy(batch, idx, h0, hL)
        forces = None
        if self.config.heads.force_head == "direct":
            forces = self.direct_forces(idx, hL, rbf, r, d)
        return Output(energy, forces, h0, hL, no_edges)

    def predict(self, batch: Batch, forces: bool | None = None):
        """Inference. Returns ``(energy, forces or None, tape_nodes)``.

        Energy-gradient forces need a tape and a backward pass; direct
        forces and plain energies run without recording anything.
        """
        head = self.config.heads.force_head
        if forces is None:
            forces = head != "none"
        if forces and head == "from_energy":
            with ad.Tape() as tape:
                pos = tape.watch(batch.positions)
                out = self.forward(batch, pos)
                total = ad.sum_all(out.energy)
            grads = tape.backward(total, accumulate=False)
            return out.energy.value, -grads[pos], len(tape)
        out = self.forward(batch)
        f = out.forces.value if (forces and out.forces is not None) else None
        return out.energy.value, f, 0

    # -- serialisation ----------------------------------------------------

    def fixed_arrays(self) -> dict[str, np.ndarray]:
        return {
            "fixed.energy_shift": np.array([self.energy_shift]),
            "fixed.energy_scale": np.array([self.energy_scale]),
            "fixed.force_scale": np.array([self.force_scale]),
            "fixed.H_F_supernode": self.emb.H_F[SUPERNODE_Z].copy(),
        }

    def load_fixed(self, arrays):
        self.energy_shift = float(arrays["fixed.energy_shift"][0])
        self.energy_scale = float(arrays["fixed.energy_scale"][0])
        self.force_scale = float(arrays["fixed.force_scale"][0])
        self.emb.H_F[SUPERNODE_Z] = arrays["fixed.H_F_supernode"]


MAGIC = b"PHSTCKPT"
FORMAT_VERSION = 1


def save_checkpoint(model: PhastModel, path, config_echo: dict | None = None, extra: dict | None = None) -> None:
    """Binary checkpoint: magic, u32 version, u32 manifest length, JSON
    manifest, then contiguous little-endian float64 arrays."""
    arrays = {name: p.value for name, p in model.params.items()}
    arrays.update(model.fixed_arrays())
    entries, offset = [], 0
    for name, a in arrays.items():
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size * 8
    manifest = {
        "model": model.config.to_dict(),
        "config": config_echo or {},
        "extra": extra or {},
        "arrays": entries,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path, table: ElementTable | None = None):
    """Returns ``(model, manifest)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a phast checkpoint")
    version, n = struct.unpack("<II", data[8:16])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    manifest = json.loads(data[16:16 + n].decode("utf-8"))
    base = 16 + n
    arrays = {}
    for e in manifest["arrays"]:
        size = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        arrays[e["name"]] = np.frombuffer(data, dtype="<f8", count=size, offset=start).reshape(e["shape"]).copy()
    model = PhastModel(ModelConfig.from_dict(manifest["model"]), table=table)
    for name, p in model.params.items():
        if name not in arrays:
            raise ValueError(f"{path}: missing parameter {name}")
        if arrays[name].shape != p.value.shape:
            raise ValueError(f"{path}: shape mismatch for {name}")
        p.value = arrays[name]
        p.zero_grad()
    model.load_fixed(arrays)
    return model, manifest
