"""Evidential training objective and its gradient with respect to evidence.

Per cell, with alpha = e + 1, S = alpha_F + alpha_O and p = alpha / S::

    fit = sum_A (y_A - p_A)^2 + p_A (1 - p_A) / (S + 1)
    kl  = KL(Dir(y + (1 - y) * alpha) || Dir(1, 1))
    loss = w * (fit + lambda_t * kl)

where w is the occupied weight for Occupied cells and 1 elsewhere and
lambda_t = min(1, t / anneal_epochs). Unknown cells have y = (0, 0) and
stay in the sum.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError
from .evidential import EvidencePair, kl_from_uniform_array
from .grid import EvidentialGrid, GroundTruthGrid, Label
from .special import trigamma


@dataclass(frozen=True)
class CellTarget:
    y_F: int = 0
    y_O: int = 0

    def __post_init__(self):
        if self.y_F not in (0, 1) or self.y_O not in (0, 1) or self.y_F + self.y_O > 1:
            raise DomainError("targets are one-hot or all zero")


@dataclass(frozen=True)
class LossConfig:
    occupied_weight: float = 100.0
    anneal_epochs: int = 10

    def __post_init__(self):
        if not self.occupied_weight >= 1.0:
            raise DomainError("occupied_weight must be >= 1")
        if self.anneal_epochs < 0:
            raise DomainError("anneal_epochs must be nonnegative")

    def as_dict(self) -> dict:
        return asdict(self)


def annealing_weight(epoch: int, anneal_epochs: int = 10) -> float:
    """lambda_t = min(1, t / anneal_epochs); a zero ramp means always 1."""
    if epoch < 0:
        raise DomainError("epoch must be nonnegative")
    if anneal_epochs == 0:
        return 1.0
    return min(1.0, epoch / anneal_epochs)


# ---------------------------------------------------------- array forms


def fit_term(evidence, targets) -> np.ndarray:
    e = np.asarray(evidence, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    alpha = e + 1.0
    s = alpha.sum(axis=-1, keepdims=True)
    p = alpha / s
    return np.sum((y - p) ** 2 + p * (1.0 - p) / (s + 1.0), axis=-1)


def masked_alpha(evidence, targets) -> np.ndarray:
    """alpha with the true-class component reset to 1."""
    y = np.asarray(targets, dtype=np.float64)
    return y + (1.0 - y) * (np.asarray(evidence, dtype=np.float64) + 1.0)


def kl_term(evidence, targets) -> np.ndarray:
    return kl_from_uniform_array(masked_alpha(evidence, targets))


def fit_gradient(evidence, targets) -> np.ndarray:
    e = np.asarray(evidence, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    alpha = e + 1.0
    s = alpha.sum(axis=-1, keepdims=True)
    p = alpha / s
    g = -2.0 * (y - p) + (1.0 - 2.0 * p) / (s + 1.0)
    var = np.sum(p * (1.0 - p), axis=-1, keepdims=True)
    return (g - np.sum(g * p, axis=-1, keepdims=True)) / s - var / (s + 1.0) ** 2


def kl_gradient(evidence, targets) -> np.ndarray:
    y = np.asarray(targets, dtype=np.float64)
    a = masked_alpha(evidence, y)
    s = a.sum(axis=-1, keepdims=True)
    d = (a - 1.0) * trigamma(a) - (s - 2.0) * np.asarray(trigamma(s))
    return (1.0 - y) * d


def cell_weights(labels: np.ndarray, occupied_weight: float) -> np.ndarray:
    return np.where(np.asarray(labels) == Label.OCCUPIED, occupied_weight, 1.0)


@dataclass(frozen=True)
class LossValue:
    """A per-sample loss and its parts, all summed over cells."""

    total: float
    fit: float
    kl: float
    n_cells: int
    lambda_t: float

    @property
    def per_cell(self) -> float:
        return self.total / self.n_cells

    @property
    def mean_kl(self) -> float:
        return self.kl / self.n_cells


def evidence_loss(evidence, labels, epoch: int, cfg: LossConfig = LossConfig(), with_gradient: bool = False):
    """Loss on raw arrays. ``evidence`` is (..., 2), ``labels`` the matching Label array.

    Returns a LossValue, and the gradient d total / d evidence when asked.
    Sums use ``math.fsum`` so the result does not depend on cell order.
    """
    e = np.asarray(evidence, dtype=np.float64)
    labels = np.asarray(labels)
    if e.shape != labels.shape + (2,):
        raise DomainError(f"evidence shape {e.shape} does not match labels {labels.shape}")
    if np.any(~np.isfinite(e)) or np.any(e < 0.0):
        raise DomainError("evidence must be finite and nonnegative")
    lam = annealing_weight(epoch, cfg.anneal_epochs)
    y = np.zeros(e.shape)
    y[..., 0] = labels == Label.FREE
    y[..., 1] = labels == Label.OCCUPIED
    w = cell_weights(labels, cfg.occupied_weight)
    fit = fit_term(e, y)
    kl = kl_term(e, y)
    value = LossValue(
        total=math.fsum((w * (fit + lam * kl)).ravel()),
        fit=math.fsum((w * fit).ravel()),
        kl=math.fsum(kl.ravel()),
        n_cells=int(labels.size),
        lambda_t=lam,
    )
    if not with_gradient:
        return value
    grad = w[..., None] * (fit_gradient(e, y) + lam * kl_gradient(e, y))
    return value, grad


# ------------------------------------------------------- scalar / grid API


def cell_loss(e: EvidencePair, y: CellTarget) -> float:
    return float(fit_term([e.e_F, e.e_O], [y.y_F, y.y_O]))


def kl_regularizer(e: EvidencePair, y: CellTarget) -> float:
    return float(kl_term([e.e_F, e.e_O], [y.y_F, y.y_O]))


def _check(pred: EvidentialGrid, truth: GroundTruthGrid) -> None:
    if pred.spec != truth.spec:
        raise DomainError(f"prediction grid {pred.spec} does not match truth grid {truth.spec}")


def total_loss(pred: EvidentialGrid, truth: GroundTruthGrid, epoch: int, cfg: LossConfig = LossConfig()) -> float:
    _check(pred, truth)
    return evidence_loss(pred.evidence, truth.labels, epoch, cfg).total


def loss_gradient(pred: EvidentialGrid, truth: GroundTruthGrid, epoch: int, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """d total_loss / d evidence, shape (rows, cols, 2)."""
    _check(pred, truth)
    return evidence_loss(pred.evidence, truth.labels, epoch, cfg, with_gradient=True)[1]
