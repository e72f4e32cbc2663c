import numpy as np
import pytest

from phast.core import AtomicSystem
from phast.data import GeneratorConfig, derive_oracle_params, generate_dataset

CATALYST = [13, 26, 28, 29, 46, 78, 79]
ADSORBATE = [1, 6, 7, 8]


def random_cell(rng, lo=7.0, hi=11.0, skew=0.25):
    cell = np.diag(rng.uniform(lo, hi, 3))
    cell += rng.uniform(-skew, skew, (3, 3)) * cell.diagonal()[:, None] * (1 - np.eye(3))
    return cell


def random_system(rng, n=None, pbc=None, tags=None, elements=None, spread=None, forces=True):
    """Random small system with positions inside a random (skewed) cell.

    Atoms are kept at least 0.7 A apart so graph and model code stays away
    from degenerate geometry.
    """
    n = int(rng.integers(2, 13)) if n is None else n
    pbc = tuple(bool(b) for b in rng.integers(0, 2, 3)) if pbc is None else tuple(pbc)
    cell = random_cell(rng)
    pos = []
    while len(pos) < n:
        p = rng.uniform(0, 1, 3) @ cell if spread is None else rng.uniform(0, spread, 3)
        if all(np.linalg.norm(p - q) > 0.7 for q in pos):
            pos.append(p)
    elements = elements or CATALYST + ADSORBATE
    z = rng.choice(elements, n)
    t = rng.integers(0, 3, n) if tags is None else np.asarray(tags)
    f = rng.normal(0, 1, (n, 3)) if forces else None
    return AtomicSystem(np.array(pos), z, t, cell, pbc, energy=float(rng.normal()), forces=f, sid=f"r{n}")


def slab_like(rng, n_extra=4):
    """Random system with at least one atom of each tag."""
    n = 3 + n_extra
    tags = np.concatenate([[0, 1, 2], rng.integers(0, 3, n_extra)])
    return random_system(rng, n=n, pbc=(True, True, False), tags=tags)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset():
    cfg = GeneratorConfig(seed=3, n_train=24, n_val=8)
    return cfg, generate_dataset(cfg, derive_oracle_params(elements=cfg.all_elements()))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
