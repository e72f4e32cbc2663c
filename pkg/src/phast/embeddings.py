"""Per-atom input features: learnable element/tag/period/group tables,
fixed physical properties and supernode cardinality encodings."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from phast import autodiff as ad
from phast.core import SUPERNODE_Z
from phast.elements import MAX_Z, PROPERTIES, ElementTable
from phast.rewiring import cardinality_encodings

MAX_CODE = SUPERNODE_Z
PHYS_WIDTH = len(PROPERTIES) + 1
N_PERIODS = 7
N_GROUPS = 18


@dataclass(frozen=True)
class EmbeddingConfig:
    use_z: bool = True
    use_tag: bool = False
    use_phys: bool = False
    learn_phys: bool = False
    use_period_group: bool = False
    d_z: int = 64
    d_tag: int = 32
    d_phys_out: int = 32
    d_period: int = 16
    d_group: int = 16
    d_cardinality: int = 0

    def __post_init__(self):
        if not (self.use_z or self.use_tag or self.use_phys or self.use_period_group):
            raise ValueError("at least one embedding source must be enabled")
        if self.learn_phys and not self.use_phys:
            raise ValueError("learn_phys requires use_phys")
        if self.d_cardinality % 2:
            raise ValueError("d_cardinality must be even")

    @classmethod
    def variant(cls, name: str, **dims) -> "EmbeddingConfig":
        """Named ablation variants: baseline (element only), tag-embed,
        phys-embed, l-phys-embed, pg, all."""
        flags = {
            "baseline": {},
            "tag-embed": dict(use_tag=True),
            "phys-embed": dict(use_phys=True),
            "l-phys-embed": dict(use_phys=True, learn_phys=True),
            "pg": dict(use_period_group=True),
            "all": dict(use_tag=True, use_phys=True, use_period_group=True),
        }
        key = name.replace("_", "-").lower()
        if key not in flags:
            raise ValueError(f"unknown embedding variant {name!r}")
        return cls(**flags[key], **dims)

    def widths(self) -> dict[str, int]:
        """Enabled pieces in their fixed order."""
        w = {}
        if self.use_z:
            w["z"] = self.d_z
        if self.use_tag:
            w["tag"] = self.d_tag
        if self.use_phys:
            w["phys"] = self.d_phys_out if self.learn_phys else PHYS_WIDTH
        if self.use_period_group:
            w["period"] = self.d_period
            w["group"] = self.d_group
        if self.d_cardinality:
            w["cardinality"] = self.d_cardinality
        return w

    @property
    def d_total(self) -> int:
        return sum(self.widths().values())

    def to_dict(self):
        return asdict(self)


def build_phys_matrix(table: ElementTable) -> np.ndarray:
    """Z-scored property matrix, shape (MAX_Z + 1, 12).

    Columns are standardised over the non-missing entries of elements
    1..100; missing entries become 0 and set the final mask column. A
    zero-variance column scores to all zeros.
    """
    vals = table.values[1:MAX_Z + 1]
    miss = table.missing[1:MAX_Z + 1]
    out = np.zeros((MAX_Z + 1, PHYS_WIDTH))
    for j, name in enumerate(PROPERTIES):
        ok = ~miss[:, j]
        if not ok.any():
            raise ValueError(f"property column {name!r} is entirely missing")
        col = vals[ok, j]
        std = col.std()
        scored = (vals[:, j] - col.mean()) / std if std > 0 else np.zeros(len(vals))
        out[1:, j] = np.where(ok, scored, 0.0)
    out[1:, -1] = miss.any(axis=1).astype(np.float64)
    return out


class EmbeddingTables:
    """Learnable lookup tables plus the fixed physical-property matrix."""

    def __init__(self, config: EmbeddingConfig, table: ElementTable, rng: np.random.Generator):
        self.config = config
        n = MAX_CODE + 1
        self.params: dict[str, ad.Parameter] = {}
        if config.use_z:
            self.params["emb.H_Z"] = ad.Parameter("emb.H_Z", rng.normal(0, 1, (n, config.d_z)))
        if config.use_tag:
            self.params["emb.H_T"] = ad.Parameter("emb.H_T", rng.normal(0, 1, (3, config.d_tag)))
        self.H_F = np.zeros((n, PHYS_WIDTH))
        if config.use_phys:
            self.H_F[:MAX_Z + 1] = build_phys_matrix(table)
            if config.learn_phys:
                lim = 1.0 / np.sqrt(PHYS_WIDTH)
                self.params["emb.phys_W"] = ad.Parameter(
                    "emb.phys_W", rng.uniform(-lim, lim, (PHYS_WIDTH, config.d_phys_out)))
                self.params["emb.phys_b"] = ad.Parameter("emb.phys_b", np.zeros(config.d_phys_out))
        self.period_index = np.zeros(n, dtype=np.int64)
        self.group_index = np.zeros(n, dtype=np.int64)
        self.period_index[:MAX_Z + 1] = table.period
        self.group_index[:MAX_Z + 1] = table.group
        if config.use_period_group:
            self.params["emb.H_P"] = ad.Parameter("emb.H_P", rng.normal(0, 1, (N_PERIODS + 1, config.d_period)))
            self.params["emb.H_G"] = ad.Parameter("emb.H_G", rng.normal(0, 1, (N_GROUPS + 1, config.d_group)))
        self.known = np.zeros(n, dtype=bool)
        self.known[1:MAX_Z + 1] = True
        self.known[SUPERNODE_Z] = True

    def fill_supernode_row(self, constituent_numbers) -> None:
        """Set the property row of the per-graph supernode code to the mean
        of the rows of the atoms it stands for."""
        z = np.asarray(constituent_numbers, dtype=np.int64)
        if len(z):
            self.H_F[SUPERNODE_Z] = self.H_F[z].mean(axis=0)


def embed_atoms(Z, T, cardinalities, config: EmbeddingConfig, tables: EmbeddingTables):
    """Concatenate the enabled pieces in order Z, T, F, P, G, cardinality."""
    Z = np.asarray(Z, dtype=np.int64)
    T = np.asarray(T, dtype=np.int64)
    card = np.zeros(len(Z), dtype=np.int64) if cardinalities is None else np.asarray(cardinalities)
    valid = (Z >= 0) & (Z <= MAX_CODE)
    valid[valid] = tables.known[Z[valid]]
    if not valid.all():
        raise KeyError(f"unknown atomic code {int(Z[~valid][0])}")
    if config.d_cardinality and (card > 0).any() and not config.use_tag:
        raise ValueError("cardinality encoding requested for supernodes but tag embedding disabled")
    p = tables.params
    pieces = []
    if config.use_z:
        pieces.append(ad.gather_rows(p["emb.H_Z"].tensor(), Z))
    if config.use_tag:
        pieces.append(ad.gather_rows(p["emb.H_T"].tensor(), T))
    if config.use_phys:
        F = tables.H_F[Z]
        if config.learn_phys:
            pieces.append(ad.shifted_softplus(ad.linear(F, p["emb.phys_W"].tensor(), p["emb.phys_b"].tensor())))
        else:
            pieces.append(ad.Tensor(F))
    if config.use_period_group:
        pieces.append(ad.gather_rows(p["emb.H_P"].tensor(), tables.period_index[Z]))
        pieces.append(ad.gather_rows(p["emb.H_G"].tensor(), tables.group_index[Z]))
    if config.d_cardinality:
        enc = cardinality_encodings(np.maximum(card, 1), config.d_cardinality)
        enc[card <= 0] = 0.0
        pieces.append(ad.Tensor(enc))
    if len(pieces) == 1:
        return pieces[0]
    return ad.concat_cols(pieces)
