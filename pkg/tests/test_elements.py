import numpy as np
import pytest

from phast.elements import COLUMNS, MAX_Z, PROPERTIES, default_table, read_element_table


def test_shape_and_columns():
    t = default_table()
    assert len(PROPERTIES) == 11
    assert len(COLUMNS) == 13
    assert t.values.shape == (MAX_Z + 1, 11)


def test_spot_values():
    t = default_table()
    # covalent radius of carbon ~0.75 A, Pt period 6 group 10, O Allen EN 3.61 Pauling-scale
    assert t.value(6, "covalent_radius") == pytest.approx(0.75, abs=0.05)
    assert t.period[78] == 6 and t.group[78] == 10
    assert t.number("Pt") == 78 and t.symbol(8) == "O"


def test_missing_is_flagged_not_zero():
    t = default_table()
    assert t.missing.shape == t.values.shape
    assert np.all(np.isnan(t.values[t.missing]))
    j = PROPERTIES.index("metallic_radius")
    assert t.missing[1, j]  # hydrogen has no metallic radius


def test_unknown_symbol():
    with pytest.raises(KeyError, match="unknown species symbol"):
        default_table().number("Xx")


def test_csv_round_trip(tmp_path):
    src = default_table()
    path = tmp_path / "t.csv"
    lines = ["# comment", ",".join(["atomic_number", "symbol", *COLUMNS])]
    for z in range(1, MAX_Z + 1):
        vals = ["" if np.isnan(v) else repr(float(v)) for v in src.values[z]]
        lines.append(",".join([str(z), src.symbols[z], *vals, str(src.period[z]), str(src.group[z])]))
    path.write_text("\n".join(lines) + "\n")
    t = read_element_table(path)
    np.testing.assert_array_equal(t.missing, src.missing)
    np.testing.assert_array_equal(np.nan_to_num(t.values), np.nan_to_num(src.values))
