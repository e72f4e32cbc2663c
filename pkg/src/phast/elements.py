"""Per-element physical properties shipped as ``data/elements.csv``."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

PROPERTIES = (
    "atomic_radius",
    "atomic_volume",
    "atomic_density",
    "dipole_polarizability",
    "electron_affinity",
    "electronegativity_allen",
    "vdw_radius",
    "metallic_radius",
    "covalent_radius",
    "ionization_energy_1",
    "ionization_energy_2",
)
COLUMNS = PROPERTIES + ("period", "group")
MAX_Z = 100

# Allen electronegativity is stored in eV; this factor maps it to the
# Pauling-like scale.
ALLEN_EV_TO_PAULING = 0.169


@dataclass(frozen=True, eq=False)
class ElementTable:
    """Property arrays indexed by atomic number (row 0 unused).

    Missing values are NaN in ``values``; ``missing`` is the explicit flag.
    ``period``/``group`` use 0 for "none" (f-block groups, absent rows).
    """

    symbols: tuple
    values: np.ndarray  # (MAX_Z + 1, 11)
    missing: np.ndarray  # (MAX_Z + 1, 11) bool
    period: np.ndarray
    group: np.ndarray

    def prop(self, name: str) -> np.ndarray:
        return self.values[:, PROPERTIES.index(name)]

    def value(self, z: int, name: str) -> float:
        if not 1 <= z <= MAX_Z:
            raise KeyError(f"no element with atomic number {z}")
        j = PROPERTIES.index(name)
        if self.missing[z, j]:
            raise KeyError(f"{name} missing for Z={z}")
        return float(self.values[z, j])

    def number(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise KeyError(f"unknown species symbol {symbol!r}") from None

    def symbol(self, z: int) -> str:
        return self.symbols[z]


def read_element_table(path) -> ElementTable:
    n = MAX_Z + 1
    values = np.full((n, len(PROPERTIES)), np.nan)
    period = np.zeros(n, dtype=np.int64)
    group = np.zeros(n, dtype=np.int64)
    symbols = [""] * n
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    absent = [c for c in COLUMNS if c not in (reader.fieldnames or ())]
    if absent:
        raise ValueError(f"element table missing columns {absent}")
    for row in reader:
        z = int(row["atomic_number"])
        if not 1 <= z <= MAX_Z:
            continue
        symbols[z] = row.get("symbol", "")
        for j, p in enumerate(PROPERTIES):
            if row[p].strip():
                values[z, j] = float(row[p])
        period[z] = int(row["period"]) if row["period"].strip() else 0
        group[z] = int(row["group"]) if row["group"].strip() else 0
    return ElementTable(tuple(symbols), values, np.isnan(values), period, group)


@lru_cache(maxsize=1)
def default_table() -> ElementTable:
    with resources.as_file(resources.files("phast") / "data" / "elements.csv") as p:
        return read_element_table(Path(p))
