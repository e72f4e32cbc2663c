import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phast import autodiff as ad
from phast.losses import (LossWeights, combined_loss, cosine_similarity, loss_ec_cosine, loss_ec_grad,
                          loss_energy, loss_force, mae_improvement, metric_ec_cos, metric_ec_dist, metric_mae)

from test_graph import random_rotation


def val(t):
    return float(ad._val(t))


def test_energy_loss_examples():
    assert val(loss_energy(np.array([1.0, 2.0]), [1.0, 2.0])) == 0
    assert val(loss_energy(np.array([4.0]), [1.0])) == 3
    assert val(loss_energy(np.array([3.0, -4.0]), [0.0, 0.0])) == 3.5
    with pytest.raises(ValueError):
        loss_energy(np.zeros(0), [])


def test_force_loss_and_mask():
    pred = np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 0.0], [9.0, 9.0, 9.0]])
    target = np.zeros((3, 3))
    assert val(loss_force(pred[:2], target[:2])) == 2.5
    assert val(loss_force(pred, target, mask=np.array([True, True, False]))) == 2.5


def test_ec_grad_examples():
    g = np.array([[1.0, -2.0, 0.5]])
    assert val(loss_ec_grad(-g, g)) == 0
    assert val(loss_ec_grad(np.array([[1.0, 2.0, 2.0]]), np.zeros((1, 3)))) == 9
    with pytest.raises(ValueError):
        loss_ec_grad(np.zeros((1, 3)), None)


def test_cosine_examples():
    a = np.array([[1.0, 2.0, 3.0]])
    assert val(cosine_similarity(a, 2 * a)) == pytest.approx(1.0, abs=1e-15)
    assert val(loss_ec_cosine(a, 2 * a)) == pytest.approx(0.0, abs=1e-15)
    assert val(cosine_similarity(a, -a)) == pytest.approx(-1.0, abs=1e-15)
    assert val(loss_ec_cosine(a, -a)) == pytest.approx(2.0, abs=1e-15)
    z = np.zeros((1, 3))
    assert val(cosine_similarity(z, a)) == 0.0
    assert val(loss_ec_cosine(z, a)) == 1.0


def scalar_ec_grad(F, G):
    total = 0.0
    for i in range(len(F)):
        for c in range(3):
            total += (F[i][c] + G[i][c]) ** 2
    return total / len(F)


def scalar_cos(F, T, eps=1e-8):
    acc = 0.0
    for f, t in zip(F, T):
        dot = sum(f[c] * t[c] for c in range(3))
        nf = math.sqrt(sum(x * x for x in f))
        nt = math.sqrt(sum(x * x for x in t))
        acc += dot / max(nf * nt, eps)
    return acc / len(F)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ec_terms_match_scalar_loops(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 10))
    F, G, T = rng.normal(size=(3, n, 3))
    assert abs(val(loss_ec_grad(F, G)) - scalar_ec_grad(F.tolist(), G.tolist())) < 1e-12
    assert abs(metric_ec_dist(F, G) - scalar_ec_grad(F.tolist(), G.tolist())) < 1e-12
    assert abs(metric_ec_cos(F, T) - scalar_cos(F.tolist(), T.tolist())) < 1e-12


def test_ec_dist_zero_for_exact_gradient():
    g = np.random.default_rng(0).normal(size=(5, 3))
    assert metric_ec_dist(-g, g) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ec_grad_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    F, G = rng.normal(size=(2, 6, 3))
    R = random_rotation(rng)
    assert abs(val(loss_ec_grad(F @ R.T, G @ R.T)) - val(loss_ec_grad(F, G))) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_losses_non_negative_and_cos_bounded(seed):
    rng = np.random.default_rng(seed)
    F, T = rng.normal(size=(2, 4, 3))
    e, y = rng.normal(size=(2, 3))
    assert val(loss_energy(e, y)) >= 0 and val(loss_force(F, T)) >= 0
    assert val(loss_ec_grad(F, T)) >= 0 and val(loss_ec_cosine(F, T)) >= 0
    assert -1 <= metric_ec_cos(F, T) <= 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["grad_target", "cosine"]))
def test_combined_loss_linear_in_weights(seed, kind):
    rng = np.random.default_rng(seed)
    e, y = rng.normal(size=(2, 3))
    F, T, G = rng.normal(size=(3, 5, 3))
    lam = rng.uniform(0.1, 3, 3)
    w = LossWeights(*lam, ec_kind=kind)
    total, terms = combined_loss(w, e, y, F, T, energy_grad=G)
    expected = lam[0] * val(terms["energy"]) + lam[1] * val(terms["force"]) + lam[2] * val(terms["ec"])
    assert abs(val(total) - expected) < 1e-12
    doubled, _ = combined_loss(LossWeights(lam[0], 2 * lam[1], lam[2], ec_kind=kind), e, y, F, T, energy_grad=G)
    assert abs(val(doubled) - val(total) - lam[1] * val(terms["force"])) < 1e-12


def test_energy_only_gating():
    total, terms = combined_loss(LossWeights(), np.array([1.0]), [0.0], np.ones((1, 3)), np.zeros((1, 3)))
    assert set(terms) == {"energy"}
    w = LossWeights(ec=5.0, ec_kind="none")
    assert w.ec_weight == 0


def test_weight_validation():
    with pytest.raises(ValueError):
        LossWeights(ec_kind="other")
    with pytest.raises(ValueError):
        LossWeights(force=-1)
    with pytest.raises(ValueError):
        LossWeights(eps=0)


def test_mae_examples():
    assert metric_mae([0.1, -0.1], [0.0, 0.0]) == pytest.approx(100.0)
    assert metric_mae([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert metric_mae([0.001, 0.002, 0.003], [0, 0, 0]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        metric_mae([], [])
    with pytest.raises(ValueError):
        metric_mae([1.0], [1.0, 2.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-10, 10))
def test_mae_permutation_and_scale(seed, c):
    rng = np.random.default_rng(seed)
    r = rng.normal(size=7)
    perm = rng.permutation(7)
    assert metric_mae(r[perm], np.zeros(7)) == pytest.approx(metric_mae(r, np.zeros(7)), rel=1e-14)
    assert metric_mae(c * r, np.zeros(7)) == pytest.approx(abs(c) * metric_mae(r, np.zeros(7)), rel=1e-12, abs=1e-12)


def test_mae_improvement_values():
    assert round(mae_improvement(630, 683), 2) == -7.76
    assert round(mae_improvement(595, 628), 2) == -5.25
    assert mae_improvement(5.0, 5.0) == 0.0
    with pytest.raises(ZeroDivisionError):
        mae_improvement(1.0, 0.0)
