"""Training losses and evaluation metrics.

Losses accept Tensors (for training) or arrays; metrics are numpy-only.
Forces follow the physics sign convention ``F = -dE/dx`` everywhere, so the
energy-conservation target for a direct force head is ``-grad E``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from phast import autodiff as ad

EC_KINDS = ("none", "grad_target", "cosine")


@dataclass(frozen=True)
class LossWeights:
    energy: float = 1.0
    force: float = 0.0
    ec: float = 0.0
    ec_kind: str = "none"
    eps: float = 1e-8
    ec_normalize: str = "atom"  # or "sum": raw sum over atoms

    def __post_init__(self):
        if self.ec_kind not in EC_KINDS:
            raise ValueError(f"unknown ec_kind {self.ec_kind!r}")
        if min(self.energy, self.force, self.ec) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.ec_normalize not in ("atom", "sum"):
            raise ValueError("ec_normalize must be 'atom' or 'sum'")

    @property
    def ec_weight(self) -> float:
        return 0.0 if self.ec_kind == "none" else self.ec

    def to_dict(self):
        return asdict(self)


def _rows(x, mask):
    if mask is None:
        return x
    idx = np.flatnonzero(mask)
    return ad.gather_rows(x, idx) if isinstance(x, ad.Tensor) else np.asarray(x)[idx]


def loss_energy(pred, target):
    """Mean over graphs of ``|y_hat - y|``."""
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if target.size == 0:
        raise ValueError("empty batch")
    diff = ad.reshape(ad.sub(pred, target), (-1, 1))
    return ad.mean_all(ad.vector_norm_rows(diff))


def loss_force(pred, target, mask=None):
    """Mean over included atoms of ``||F_hat_i - F_i||_2``."""
    p, t = _rows(pred, mask), _rows(target, mask)
    if len(t) == 0:
        raise ValueError("empty batch")
    return ad.mean_all(ad.vector_norm_rows(ad.sub(p, t)))


def loss_ec_grad(pred_forces, energy_grad, mask=None, normalize="atom"):
    """Squared distance between direct forces and ``-grad E``.

    ``energy_grad`` is a constant target (no gradient flows into it).
    """
    if energy_grad is None:
        raise ValueError("energy gradient required")
    target = -np.asarray(ad._val(energy_grad))
    p, t = _rows(pred_forces, mask), _rows(target, mask)
    diff = ad.sub(p, t)
    total = ad.sum_all(ad.square(diff))
    n = len(t)
    if n == 0:
        raise ValueError("empty batch")
    return total * (1.0 / n) if normalize == "atom" else total


def cosine_similarity(pred_forces, target_forces, eps=1e-8, mask=None):
    """Mean over atoms of ``F_hat . F / max(|F_hat| |F|, eps)``."""
    p, t = _rows(pred_forces, mask), _rows(target_forces, mask)
    return ad.mean_all(ad.cosine_rows(p, t, eps))


def loss_ec_cosine(pred_forces, target_forces, eps=1e-8, mask=None):
    """Objective term ``1 - mean cosine similarity`` (0 when aligned)."""
    return ad.sub(1.0, cosine_similarity(pred_forces, target_forces, eps, mask))


def metric_ec_dist(pred_forces, energy_grad, mask=None) -> float:
    """Per-atom mean of ``||F_hat_i + grad_i E||^2``."""
    p = np.asarray(ad._val(pred_forces))
    g = np.asarray(ad._val(energy_grad))
    if mask is not None:
        p, g = p[mask], g[mask]
    if len(p) == 0:
        return 0.0
    return float(np.mean(np.sum((p + g) ** 2, axis=1)))


def metric_ec_cos(pred_forces, target_forces, eps=1e-8, mask=None) -> float:
    return float(ad._val(cosine_similarity(ad._val(pred_forces), ad._val(target_forces), eps, mask)))


def metric_mae(predictions, labels, unit_scale=1000.0) -> float:
    """Mean absolute error, eV -> meV by default."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty arrays")
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {y.shape}")
    return float(np.mean(np.abs(p - y)) * unit_scale)


def metric_force_mae(predictions, labels, mask=None, unit_scale=1000.0) -> float:
    """Component-wise force MAE (meV/A) over included atoms."""
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if mask is not None:
        p, y = p[mask], y[mask]
    return metric_mae(p, y, unit_scale)


def mae_improvement(mae_variant: float, mae_baseline: float) -> float:
    """``100 (MAE_variant - MAE_baseline) / MAE_baseline``; negative is better."""
    if mae_baseline == 0:
        raise ZeroDivisionError("baseline MAE is zero")
    return 100.0 * (mae_variant - mae_baseline) / mae_baseline


def combined_loss(weights: LossWeights, e_pred, e_true, f_pred=None, f_true=None, mask=None, energy_grad=None):
    """``w_E L_E + w_F L_F + w_EC L_EC`` and the individual terms."""
    terms = {"energy": loss_energy(e_pred, e_true)}
    total = terms["energy"] * weights.energy
    if weights.force > 0 and f_pred is not None:
        terms["force"] = loss_force(f_pred, f_true, mask)
        total = total + terms["force"] * weights.force
    if weights.ec_weight > 0 and f_pred is not None:
        if weights.ec_kind == "grad_target":
            terms["ec"] = loss_ec_grad(f_pred, energy_grad, mask, weights.ec_normalize)
        else:
            terms["ec"] = loss_ec_cosine(f_pred, f_true, weights.eps, mask)
        total = total + terms["ec"] * weights.ec_weight
    return total, terms
