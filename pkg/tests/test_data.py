import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phast.core import AtomicSystem
from phast.data import (SPLITS, DataFormatError, GeneratorConfig, derive_oracle_params, generate_dataset,
                        generate_system, morse, oracle_energy_forces, read_extxyz, read_graphs, read_jsonl,
                        write_dataset, write_extxyz, write_graphs, write_jsonl)
from phast.elements import PROPERTIES, default_table
from phast.graph import build_radius_graph

from conftest import random_system
from test_graph import random_rotation


def test_jsonl_round_trip(tmp_path, rng):
    systems = [random_system(rng) for _ in range(10)]
    systems[3] = systems[3].replace(supernode_cardinality={0: 4}, tags=np.r_[0, systems[3].tags[1:]])
    write_jsonl(systems, tmp_path / "a.jsonl")
    back = read_jsonl(tmp_path / "a.jsonl")
    assert len(back) == 10
    for a, b in zip(systems, back):
        assert a.same_as(b)
        assert a.positions.tobytes() == b.positions.tobytes()
        assert a.energy == b.energy


def test_jsonl_bad_line_reports_line_number(tmp_path, rng):
    write_jsonl([random_system(rng) for _ in range(2)], tmp_path / "a.jsonl")
    lines = (tmp_path / "a.jsonl").read_text().splitlines()
    lines.append(lines[0].replace('"tags": [', '"tags": [1, '))
    (tmp_path / "b.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataFormatError, match=r"b.jsonl:3"):
        read_jsonl(tmp_path / "b.jsonl")


def test_jsonl_missing_key_and_empty(tmp_path):
    (tmp_path / "m.jsonl").write_text('{"positions": [[0,0,0]], "atomic_numbers": [1]}\n')
    with pytest.raises(DataFormatError, match="missing mandatory"):
        read_jsonl(tmp_path / "m.jsonl")
    (tmp_path / "e.jsonl").write_text("")
    assert read_jsonl(tmp_path / "e.jsonl") == []


def test_extxyz_minimal(tmp_path):
    (tmp_path / "m.xyz").write_text('1\nProperties=species:S:1:pos:R:3:tags:I:1\nH 0.0 0.0 0.0 2\n')
    (s,) = read_extxyz(tmp_path / "m.xyz")
    assert s.num_atoms == 1 and s.atomic_numbers.tolist() == [1] and s.tags.tolist() == [2]


def test_extxyz_requires_tags(tmp_path):
    (tmp_path / "m.xyz").write_text('1\nLattice="5 0 0 0 5 0 0 0 5" Properties=species:S:1:pos:R:3\nH 0 0 0\n')
    with pytest.raises(DataFormatError, match="tags column required"):
        read_extxyz(tmp_path / "m.xyz")


def test_extxyz_errors(tmp_path):
    (tmp_path / "p.xyz").write_text('1\nProperties=species:S:1:pos:R:3:tags:I:1 pbc="T T F"\nH 0 0 0 1\n')
    with pytest.raises(DataFormatError, match="without Lattice"):
        read_extxyz(tmp_path / "p.xyz")
    (tmp_path / "u.xyz").write_text('1\nProperties=species:S:1:pos:R:3:tags:I:1\nXq 0 0 0 1\n')
    with pytest.raises(KeyError, match="unknown species"):
        read_extxyz(tmp_path / "u.xyz")


def test_extxyz_multi_frame_against_hand_parse(tmp_path):
    text = (
        '2\nLattice="10 0 0 0 10 0 0 0 30" Properties=species:S:1:pos:R:3:tags:I:1 energy=-1.5 pbc="T T F"\n'
        "Pt 0.0 0.0 0.0 1\nO 0.0 0.0 2.0 2\n"
        '3\nLattice="8 0 0 0 8 0 0 0 25" Properties=species:S:1:pos:R:3:tags:I:1:forces:R:3\n'
        "Cu 1 1 1 0 0.1 0.2 0.3\nCu 2 2 1 1 0 0 0\nC 2 2 3 2 -1 0 1\n"
    )
    (tmp_path / "f.xyz").write_text(text)
    a, b = read_extxyz(tmp_path / "f.xyz")
    assert a.atomic_numbers.tolist() == [78, 8] and a.energy == -1.5 and a.pbc == (True, True, False)
    np.testing.assert_array_equal(a.positions, [[0, 0, 0], [0, 0, 2]])
    assert b.atomic_numbers.tolist() == [29, 29, 6] and b.tags.tolist() == [0, 1, 2]
    assert b.pbc == (True, True, True) and b.energy is None
    np.testing.assert_array_equal(b.forces[0], [0.1, 0.2, 0.3])
    np.testing.assert_array_equal(b.cell, np.diag([8.0, 8.0, 25.0]))


def test_extxyz_round_trip(tmp_path, rng):
    systems = [random_system(rng) for _ in range(4)]
    write_extxyz(systems, tmp_path / "r.xyz")
    for a, b in zip(systems, read_extxyz(tmp_path / "r.xyz")):
        assert a.same_as(b)


def test_graph_file_round_trip(tmp_path, rng):
    graphs = [build_radius_graph(random_system(rng)) for _ in range(4)]
    write_graphs(graphs, tmp_path / "g.npz")
    for a, b in zip(graphs, read_graphs(tmp_path / "g.npz")):
        assert a.same_as(b)


def test_oracle_params():
    t = default_table()
    p = derive_oracle_params(t)
    assert p.D_e[78, 78] == 0.5
    assert p.r_e[6, 8] == pytest.approx(t.value(6, "covalent_radius") + t.value(8, "covalent_radius"))
    np.testing.assert_array_equal(p.D_e, p.D_e.T)
    np.testing.assert_array_equal(p.r_e, p.r_e.T)
    with pytest.raises(KeyError):
        derive_oracle_params(t, elements=[57])  # La lacks a covalent radius in the table


def test_radii_sum_example():
    from dataclasses import replace
    t = default_table()
    values = t.values.copy()
    j = PROPERTIES.index("covalent_radius")
    values[1, j], values[2, j] = 1.2, 1.4
    p = derive_oracle_params(replace(t, values=values))
    assert p.r_e[1, 2] == pytest.approx(2.6)


def test_morse_minimum():
    e, de = morse(np.array([2.1]), 0.7, 2.1, 1.5)
    assert e[0] == -0.7 and de[0] == 0.0


def test_isolated_pair_at_re():
    p = derive_oracle_params()
    r = p.r_e[6, 78]
    s = AtomicSystem([[0, 0, 0], [r, 0, 0]], [78, 6], [1, 2])
    e, f = oracle_energy_forces(s, p)
    assert e == pytest.approx(-p.D_e[6, 78], abs=1e-15)
    np.testing.assert_allclose(f, 0, atol=1e-15)


def fd_forces(s, p, h=1e-5):
    out = np.zeros_like(s.positions)
    for i in range(s.num_atoms):
        for c in range(3):
            vals = []
            for sign in (1, -1):
                q = s.positions.copy()
                q[i, c] += sign * h
                vals.append(oracle_energy_forces(s.replace(positions=q), p)[0])
            out[i, c] = -(vals[0] - vals[1]) / (2 * h)
    return out


def test_forces_match_finite_differences():
    cfg = GeneratorConfig(seed=5)
    p = derive_oracle_params(elements=cfg.all_elements())
    for k in range(2):
        s = generate_system(cfg, p, "train", k)
        num = fd_forces(s, p)
        scale = np.abs(num).max()
        assert np.abs(s.forces - num).max() / scale < 1e-6


def test_generated_sample_counts():
    cfg = GeneratorConfig(slab_layers=3, surface_size=4, adsorbate_size=(2, 2))
    s = generate_system(cfg, derive_oracle_params(elements=cfg.all_elements()), "train", 0)
    assert s.num_atoms == 50 and int((s.tags == 0).sum()) == 32
    assert abs(32 / 50 - cfg.target_tag0_fraction) <= 0.02


def test_generated_structure(tiny_dataset):
    cfg, ds = tiny_dataset
    assert set(ds) == set(SPLITS)
    for split, systems in ds.items():
        cat, ads = cfg.pools(split)
        for s in systems:
            assert s.pbc == (True, True, False)
            top = s.positions[s.tags != 2, 2].max()
            assert s.cell[2, 2] - s.positions[:, 2].max() >= 20.0
            assert set(s.atomic_numbers[s.tags != 2].tolist()) <= set(cat)
            assert set(s.atomic_numbers[s.tags == 2].tolist()) <= set(ads)
            z_ads = s.positions[s.tags == 2, 2]
            assert 1.5 - 0.3 <= z_ads[0] - top + 0.3 and z_ads[0] - top <= 2.5 + 0.3
            assert 1 <= int((s.tags == 2).sum()) <= 3


def test_pools_must_be_disjoint():
    with pytest.raises(ValueError):
        GeneratorConfig(ood_catalyst_pool=[78])
    with pytest.raises(ValueError):
        GeneratorConfig(slab_layers=1)


def test_tag0_fraction_on_train_split():
    cfg = GeneratorConfig(n_train=200, n_val=0)
    systems = generate_dataset(cfg)["train"]
    frac = sum(int((s.tags == 0).sum()) for s in systems) / sum(s.num_atoms for s in systems)
    assert abs(frac - cfg.target_tag0_fraction) <= 0.03


def test_determinism_byte_identical(tmp_path):
    cfg = GeneratorConfig(seed=9, n_train=6, n_val=3)
    write_dataset(generate_dataset(cfg), tmp_path / "a")
    write_dataset(generate_dataset(cfg), tmp_path / "b")
    for split in SPLITS:
        assert (tmp_path / "a" / f"{split}.jsonl").read_bytes() == (tmp_path / "b" / f"{split}.jsonl").read_bytes()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_oracle_e3_invariance(seed):
    rng = np.random.default_rng(seed)
    cfg = GeneratorConfig(seed=1)
    p = derive_oracle_params(elements=cfg.all_elements())
    s = generate_system(cfg, p, "val_id", int(rng.integers(0, 50)))
    R = random_rotation(rng)
    if rng.integers(0, 2):
        R = R @ np.diag([1, 1, -1])
    moved = s.replace(positions=s.positions @ R.T + rng.normal(size=3), cell=s.cell @ R.T)
    e, f = oracle_energy_forces(moved, p)
    assert abs(e - s.energy) <= 1e-9 * abs(s.energy)
    np.testing.assert_allclose(f, s.forces @ R.T, atol=1e-9, rtol=0)
