import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phast.core import SUPERNODE_Z, AtomicSystem, check_graph, validate_system
from phast.graph import GraphBuildConfig, build_radius_graph
from phast.rewiring import (RewireStrategy, StrategyInapplicable, cardinality_encoding, filter_graph,
                            remove_tag0, rewire, rewiring_stats, supernode_per_atom_type,
                            supernode_per_graph)

from conftest import random_system, slab_like


def edge_multiset(g):
    return sorted(zip(g.src.tolist(), g.dst.tolist(), map(tuple, g.cell_offsets.tolist())))


def test_remove_tag0_filter_semantics():
    s = AtomicSystem(np.arange(12.0).reshape(4, 3), [1, 6, 78, 78], [2, 1, 0, 0], forces=np.ones((4, 3)))
    r = remove_tag0(s)
    assert r.num_atoms == 2 and r.tags.tolist() == [2, 1]
    np.testing.assert_array_equal(r.positions, s.positions[:2])
    assert r.forces.shape == (2, 3)


def test_remove_tag0_identity_without_tag0():
    s = AtomicSystem(np.zeros((2, 3)) + [[0, 0, 0], [1, 0, 0]], [1, 6], [1, 2])
    assert remove_tag0(s) is s


def test_remove_tag0_all_tag0_errors():
    s = AtomicSystem([[0, 0, 0], [1, 0, 0]], [1, 6], [0, 0])
    with pytest.raises(ValueError):
        remove_tag0(s)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_remove_tag0_path_equivalence(seed):
    rng = np.random.default_rng(seed)
    s = random_system(rng, n=20, pbc=(True, True, False), tags=np.r_[[1], rng.integers(0, 3, 19)])
    keep = np.flatnonzero(s.tags != 0)
    built_after = build_radius_graph(remove_tag0(s))
    filtered = filter_graph(build_radius_graph(s), keep)
    assert edge_multiset(built_after) == edge_multiset(filtered)
    np.testing.assert_array_equal(built_after.distances, filtered.distances)


def test_single_tag0_supernode():
    s = AtomicSystem([[1, 2, 3], [1, 2, 5]], [78, 8], [0, 2])
    r, g = supernode_per_graph(s, build_radius_graph(s))
    assert r.atomic_numbers.tolist() == [8, SUPERNODE_Z]
    np.testing.assert_array_equal(r.positions[-1], [1, 2, 3])
    assert r.supernode_cardinality == {1: 1}


def test_supernode_mean_position():
    pos = [[0, 0, 0], [3, 0, 0], [0, 3, 0], [1, 1, 2]]
    s = AtomicSystem(pos, [78, 78, 78, 8], [0, 0, 0, 2])
    r, _ = supernode_per_graph(s, build_radius_graph(s))
    expected = sum(np.array(p, float) for p in pos[:3]) / 3
    np.testing.assert_allclose(r.positions[-1], expected)
    np.testing.assert_allclose(r.positions[-1], [1, 1, 0])


def test_boolean_max_single_edge():
    s = AtomicSystem([[0, 0, 0], [2, 0, 0], [1, 1, 0]], [78, 78, 29], [0, 0, 1])
    r, g = supernode_per_graph(s, build_radius_graph(s))
    # surviving atom becomes node 0, the supernode node 1
    assert [(a, b) for a, b in g.edges if b == 1] == [(0, 1)]
    assert all(a != b for a, b in g.edges)


def test_per_atom_type_two_elements():
    s = AtomicSystem([[0, 0, 0], [2, 0, 0], [1, 1, 0], [1, 1, 2]], [13, 78, 29, 8], [0, 0, 1, 2])
    r, g = supernode_per_atom_type(s, build_radius_graph(s))
    sn = [i for i, t in enumerate(r.tags) if t == 0]
    assert len(sn) == 2 and sorted(r.atomic_numbers[sn]) == [13, 78]
    ss = [(a, b) for a, b in g.edges if a in sn and b in sn]
    assert sorted(ss) == [(sn[0], sn[1]), (sn[1], sn[0])]


def test_per_atom_type_single_element_matches_per_graph(rng):
    s = random_system(rng, n=10, pbc=(True, True, False), tags=[0, 0, 0, 1, 1, 1, 2, 2, 0, 1],
                      elements=[78])
    g = build_radius_graph(s)
    a, ga = supernode_per_graph(s, g)
    b, gb = supernode_per_atom_type(s, g)
    assert edge_multiset(ga) == edge_multiset(gb)
    np.testing.assert_array_equal(a.positions, b.positions)
    assert a.atomic_numbers[-1] == SUPERNODE_Z and b.atomic_numbers[-1] == 78


def test_three_elements_six_supernode_edges(rng):
    s = random_system(rng, n=9, pbc=(True, True, False), tags=[0, 0, 0, 0, 0, 0, 1, 1, 2],
                      elements=[13])
    z = np.array([13, 13, 28, 28, 78, 78, 29, 29, 8])
    s = s.replace(atomic_numbers=z)
    r, g = supernode_per_atom_type(s, build_radius_graph(s))
    sn = set(np.flatnonzero(r.tags == 0).tolist())
    assert len(sn) == 3
    count = sum(1 for a, b in g.edges if a in sn and b in sn)
    assert count == 6


def test_inapplicable_without_tag0():
    s = AtomicSystem([[0, 0, 0], [1, 0, 0]], [1, 6], [1, 2])
    with pytest.raises(StrategyInapplicable):
        supernode_per_graph(s, build_radius_graph(s))
    r, _ = rewire(s, "supernode_per_graph")
    assert r is s


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_node_accounting_and_invariants(seed):
    rng = np.random.default_rng(seed)
    s = slab_like(rng, int(rng.integers(1, 10)))
    g = build_radius_graph(s)
    S = int((s.tags == 0).sum())
    kinds = len(set(s.atomic_numbers[s.tags == 0].tolist()))
    expected = {"remove_tag0": s.num_atoms - S, "supernode_per_graph": s.num_atoms - S + 1,
                "supernode_per_atom_type": s.num_atoms - S + kinds, "none": s.num_atoms}
    survivors = s.tags[s.tags != 0].tolist()
    for name, n in expected.items():
        r, rg = rewire(s, name, graph=g)
        assert r.num_atoms == n == rg.num_nodes
        assert validate_system(r).ok
        if name != "none":
            assert r.tags[:len(survivors)].tolist() == survivors
        assert not check_graph(rg, r)
        assert rg.num_edges == 0 or (rg.edge_index.min() >= 0 and rg.edge_index.max() < n)
        assert not np.any((rg.src == rg.dst) & ~rg.cell_offsets.any(axis=1))
    once = remove_tag0(s)
    assert remove_tag0(once).same_as(once)


def test_parse_aliases():
    assert RewireStrategy.parse("remove-tag0") is RewireStrategy.REMOVE_TAG0
    assert RewireStrategy.parse("sn_graph") is RewireStrategy.SUPERNODE_PER_GRAPH
    with pytest.raises(ValueError):
        RewireStrategy.parse("bogus")


def test_cardinality_encoding_formula():
    v = cardinality_encoding(1, 4)
    f = 10000 ** -0.5
    np.testing.assert_allclose(v, [np.sin(1), np.cos(1), np.sin(f), np.cos(f)], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(cardinality_encoding(7, 8), cardinality_encoding(7, 8))
    for bad in (3, 0):
        with pytest.raises(ValueError):
            cardinality_encoding(1, bad)


def test_cardinality_encoding_injective():
    from phast.rewiring import cardinality_encodings
    enc = cardinality_encodings(np.arange(1, 10_001), 4)
    assert len(np.unique(enc, axis=0)) == 10_000


def test_stats_no_tag0_is_full():
    s = AtomicSystem([[0, 0, 0], [1, 0, 0]], [1, 6], [1, 2], sid="a")
    st_ = rewiring_stats([s], "remove_tag0")
    assert st_.atoms_remaining_pct == 100.0 and st_.edges_remaining_pct == 100.0


def test_stats_on_generated_slabs(tiny_dataset, tmp_path):
    _, ds = tiny_dataset
    r = rewiring_stats(ds["train"], "remove_tag0")
    assert 33.0 <= r.atoms_remaining_pct <= 37.0
    sn = rewiring_stats(ds["train"], "supernode_per_graph")
    assert r.edges_remaining_pct <= sn.edges_remaining_pct <= 100.0
    r.write_csv(tmp_path / "s.csv")
    header = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert header == "sample_id,nodes_before,nodes_after,edges_before,edges_after"
    with pytest.raises(ValueError):
        rewiring_stats([], "none")
