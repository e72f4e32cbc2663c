"""Regenerate ``src/phast/data/elements.csv`` from the ``mendeleev`` package.

Needs ``pip install mendeleev``; the package itself only reads the CSV.
Radii are converted from pm to Angstrom. Energies are in eV, density in
g/cm^3, atomic volume in cm^3/mol, dipole polarizability in atomic units.
"""

import csv
import math
from pathlib import Path

from mendeleev.fetch import fetch_ionization_energies, fetch_table

OUT = Path(__file__).resolve().parents[1] / "src" / "phast" / "data" / "elements.csv"
COLUMNS = [
    "atomic_number", "symbol",
    "atomic_radius", "atomic_volume", "atomic_density", "dipole_polarizability",
    "electron_affinity", "electronegativity_allen", "vdw_radius", "metallic_radius",
    "covalent_radius", "ionization_energy_1", "ionization_energy_2", "period", "group",
]


def _fmt(x, scale=1.0):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(round(float(x) * scale, 6))


def main():
    t = fetch_table("elements").set_index("atomic_number")
    ie = fetch_ionization_energies(degree=[1, 2])
    rows = []
    for z in range(1, 101):
        e = t.loc[z]
        vol = e["atomic_weight"] / e["density"] if e["density"] and not math.isnan(e["density"]) else None
        group = e["group_id"]
        rows.append({
            "atomic_number": z,
            "symbol": e["symbol"],
            "atomic_radius": _fmt(e["atomic_radius"], 0.01),
            "atomic_volume": _fmt(vol),
            "atomic_density": _fmt(e["density"]),
            "dipole_polarizability": _fmt(e["dipole_polarizability"]),
            "electron_affinity": _fmt(e["electron_affinity"]),
            "electronegativity_allen": _fmt(e["en_allen"]),
            "vdw_radius": _fmt(e["vdw_radius"], 0.01),
            "metallic_radius": _fmt(e["metallic_radius"], 0.01),
            "covalent_radius": _fmt(e["covalent_radius_pyykko"], 0.01),
            "ionization_energy_1": _fmt(ie.loc[z, "IE1"]),
            "ionization_energy_2": _fmt(ie.loc[z, "IE2"]),
            "period": int(e["period"]),
            "group": "" if group is None or math.isnan(group) else int(group),
        })
    with open(OUT, "w", newline="", encoding="utf-8") as fh:
        fh.write("# phast element table v1 (source: mendeleev 1.3.0)\n")
        w = csv.DictWriter(fh, fieldnames=COLUMNS)
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {OUT}")


if __name__ == "__main__":
    main()
