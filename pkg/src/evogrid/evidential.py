"""Belief masses, subjective opinions and binary Dirichlet distributions.

The frame of discernment is fixed to {Free, Occupied} (K = 2). Every
per-cell quantity exists in four equivalent forms::

    EvidencePair  --(+1)-->  DirichletBinary  <-->  SubjectiveOpinion  <-->  BeliefMass

Scalar value types are frozen dataclasses. Grid-sized work uses the
``*_array`` functions, which take arrays whose last axis holds the
(Free, Occupied) pair and always compute in float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .special import digamma, lgamma

K = 2
_SUM_TOL = 1e-9


def _check_unit(name: str, value: float) -> None:
    if not (math.isfinite(value) and 0.0 <= value <= 1.0):
        raise DomainError(f"{name}={value!r} must lie in [0, 1]")


@dataclass(frozen=True)
class BeliefMass:
    m_F: float
    m_O: float
    m_Theta: float

    def __post_init__(self):
        for name in ("m_F", "m_O", "m_Theta"):
            _check_unit(name, getattr(self, name))
        if abs(self.m_F + self.m_O + self.m_Theta - 1.0) > _SUM_TOL:
            raise DomainError("belief masses must sum to 1")


@dataclass(frozen=True)
class SubjectiveOpinion:
    b_F: float
    b_O: float
    u: float

    def __post_init__(self):
        for name in ("b_F", "b_O", "u"):
            _check_unit(name, getattr(self, name))
        if abs(self.b_F + self.b_O + self.u - 1.0) > _SUM_TOL:
            raise DomainError("belief and uncertainty must sum to 1")


@dataclass(frozen=True)
class EvidencePair:
    e_F: float
    e_O: float

    def __post_init__(self):
        for name in ("e_F", "e_O"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise DomainError(f"{name}={v!r} must be finite and nonnegative")


@dataclass(frozen=True)
class DirichletBinary:
    alpha_F: float
    alpha_O: float

    def __post_init__(self):
        for name in ("alpha_F", "alpha_O"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise DomainError(f"{name}={v!r} must be finite and positive")

    @property
    def strength(self) -> float:
        return self.alpha_F + self.alpha_O

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha_F, self.alpha_O], dtype=np.float64)


def _require_constructed(d: DirichletBinary) -> None:
    if d.alpha_F < 1.0 or d.alpha_O < 1.0:
        raise DomainError("Dirichlet parameters below 1 carry negative evidence")


# ---------------------------------------------------------------- conversions


def evidence_to_dirichlet(e: EvidencePair) -> DirichletBinary:
    return DirichletBinary(e.e_F + 1.0, e.e_O + 1.0)


def dirichlet_to_evidence(d: DirichletBinary) -> EvidencePair:
    _require_constructed(d)
    return EvidencePair(d.alpha_F - 1.0, d.alpha_O - 1.0)


def dirichlet_to_opinion(d: DirichletBinary) -> SubjectiveOpinion:
    """b_A = (alpha_A - 1) / S and u = K / S."""
    _require_constructed(d)
    s = d.strength
    return SubjectiveOpinion((d.alpha_F - 1.0) / s, (d.alpha_O - 1.0) / s, K / s)


def opinion_to_mass(o: SubjectiveOpinion) -> BeliefMass:
    return BeliefMass(o.b_F, o.b_O, o.u)


def mass_to_opinion(m: BeliefMass) -> SubjectiveOpinion:
    return SubjectiveOpinion(m.m_F, m.m_O, m.m_Theta)


def opinion_to_dirichlet(o: SubjectiveOpinion, u_min: float = 0.1) -> DirichletBinary:
    """Invert ``dirichlet_to_opinion``, clamping the uncertainty at ``u_min``.

    A dogmatic opinion (u = 0) would need infinite evidence. When u is
    raised to ``u_min`` the beliefs are rescaled so that the opinion still
    sums to one. ``u_min = 0`` disables the clamp and is only valid for
    opinions with u > 0.
    """
    if not (math.isfinite(u_min) and 0.0 <= u_min <= 1.0):
        raise DomainError(f"u_min={u_min!r} must lie in [0, 1]")
    u = max(o.u, u_min)
    if u <= 0.0:
        raise DomainError("dogmatic opinion (u = 0) needs u_min > 0")
    b_F, b_O = o.b_F, o.b_O
    if u > o.u:
        total = b_F + b_O
        scale = (1.0 - u) / total if total > 0.0 else 0.0
        b_F, b_O = b_F * scale, b_O * scale
    s = K / u
    return DirichletBinary(b_F * s + 1.0, b_O * s + 1.0)


def expected_probability(d: DirichletBinary) -> tuple[float, float]:
    s = d.strength
    return d.alpha_F / s, d.alpha_O / s


# ------------------------------------------------------------ densities / KL


def log_beta(alpha) -> np.ndarray:
    """Log of the multivariate beta function over the last axis."""
    a = np.asarray(alpha, dtype=np.float64)
    return np.sum(lgamma(a), axis=-1) - lgamma(np.sum(a, axis=-1))


def dirichlet_pdf(d: DirichletBinary, p) -> float:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (2,) or np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise DomainError("p must be a probability pair in [0, 1]")
    if abs(p.sum() - 1.0) > _SUM_TOL:
        raise DomainError("p must sum to 1")
    a = d.as_array()
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.log(p)
        # 0 ** 0 == 1 for alpha_A == 1
        terms = np.where(a == 1.0, 0.0, (a - 1.0) * logp)
    return float(np.exp(np.sum(terms) - log_beta(a)))


def kl_dirichlet_array(alpha1, alpha2) -> np.ndarray:
    """KL(Dir(alpha1) || Dir(alpha2)) elementwise over leading axes.

    Tiny negative values from cancellation are clipped to zero.
    """
    a1 = np.asarray(alpha1, dtype=np.float64)
    a2 = np.asarray(alpha2, dtype=np.float64)
    s1 = np.sum(a1, axis=-1)
    kl = (
        log_beta(a2)
        - log_beta(a1)
        + np.sum((a1 - a2) * (digamma(a1) - np.asarray(digamma(s1))[..., None]), axis=-1)
    )
    return np.maximum(kl, 0.0)


def kl_from_uniform_array(alpha) -> np.ndarray:
    """KL(Dir(alpha) || Dir(1, 1)) in the explicit K = 2 form used by the loss."""
    a = np.asarray(alpha, dtype=np.float64)
    a_F, a_O = a[..., 0], a[..., 1]
    s = a_F + a_O
    psi_s = digamma(s)
    kl = (
        lgamma(s)
        - lgamma(2.0)
        - lgamma(a_F)
        - lgamma(a_O)
        + (a_F - 1.0) * (digamma(a_F) - psi_s)
        + (a_O - 1.0) * (digamma(a_O) - psi_s)
    )
    return np.maximum(kl, 0.0)


def kl_dirichlet(d1: DirichletBinary, d2: DirichletBinary) -> float:
    return float(kl_dirichlet_array(d1.as_array(), d2.as_array()))


def kl_from_uniform(d: DirichletBinary) -> float:
    return float(kl_from_uniform_array(d.as_array()))


# ------------------------------------------------------------- array forms


def evidence_to_alpha_array(evidence) -> np.ndarray:
    e = np.asarray(evidence, dtype=np.float64)
    if np.any(~np.isfinite(e)) or np.any(e < 0.0):
        raise DomainError("evidence must be finite and nonnegative")
    return e + 1.0


def evidence_to_mass_array(evidence) -> np.ndarray:
    """Belief masses (m_F, m_O, m_Theta) for an evidence array (..., 2)."""
    alpha = evidence_to_alpha_array(evidence)
    s = alpha.sum(axis=-1, keepdims=True)
    out = np.empty(alpha.shape[:-1] + (3,), dtype=np.float64)
    out[..., :2] = (alpha - 1.0) / s
    out[..., 2] = K / s[..., 0]
    return out


def expected_probability_array(alpha) -> np.ndarray:
    a = np.asarray(alpha, dtype=np.float64)
    return a / a.sum(axis=-1, keepdims=True)
