import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from evogrid.errors import DomainError
from evogrid.evidential import (
    BeliefMass,
    DirichletBinary,
    EvidencePair,
    SubjectiveOpinion,
    dirichlet_pdf,
    dirichlet_to_opinion,
    evidence_to_dirichlet,
    evidence_to_mass_array,
    expected_probability,
    kl_dirichlet,
    kl_from_uniform,
    mass_to_opinion,
    opinion_to_dirichlet,
    opinion_to_mass,
)


# -------------------------------------------------------------- oracles
def _unnormalised(a, p):
    return p ** (a[0] - 1.0) * (1.0 - p) ** (a[1] - 1.0)


def quad_normaliser(a):
    return integrate.quad(lambda p: _unnormalised(a, p), 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)[0]


def quad_kl(a1, a2):
    """KL between two Beta densities by direct integration on (0, 1)."""
    z1, z2 = quad_normaliser(a1), quad_normaliser(a2)

    def integrand(p):
        f = _unnormalised(a1, p) / z1
        if f == 0.0:
            return 0.0
        g = _unnormalised(a2, p) / z2
        return f * math.log(f / g)

    return integrate.quad(integrand, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12, limit=200)[0]


# ------------------------------------------------------------ conversions
@pytest.mark.parametrize(
    "e, alpha",
    [((0, 0), (1, 1)), ((3, 1), (4, 2)), ((100, 0), (101, 1))],
)
def test_evidence_to_dirichlet(e, alpha):
    d = evidence_to_dirichlet(EvidencePair(*e))
    assert (d.alpha_F, d.alpha_O) == alpha


@pytest.mark.parametrize("e", [(-1.0, 0.0), (0.0, math.inf), (math.nan, 1.0)])
def test_evidence_rejects_bad_values(e):
    with pytest.raises(DomainError):
        EvidencePair(*e)


@pytest.mark.parametrize(
    "alpha, expected",
    [((1, 1), (0, 0, 1)), ((4, 2), (0.5, 1 / 6, 1 / 3)), ((19, 1), (0.9, 0, 0.1))],
)
def test_dirichlet_to_opinion(alpha, expected):
    o = dirichlet_to_opinion(DirichletBinary(*alpha))
    assert (o.b_F, o.b_O, o.u) == pytest.approx(expected, abs=1e-15)


def test_dirichlet_to_opinion_rejects_alpha_below_one():
    with pytest.raises(DomainError):
        dirichlet_to_opinion(DirichletBinary(0.5, 2.0))


def test_belief_is_evidence_over_strength():
    # (alpha - 1) / S and e / S coincide
    e = EvidencePair(7.25, 2.5)
    o = dirichlet_to_opinion(evidence_to_dirichlet(e))
    s = e.e_F + e.e_O + 2
    assert o.b_F == e.e_F / s
    assert o.b_O == e.e_O / s


def test_mass_opinion_bijection_examples():
    assert mass_to_opinion(BeliefMass(0, 0, 1)) == SubjectiveOpinion(0, 0, 1)
    m = opinion_to_mass(SubjectiveOpinion(0.5, 1 / 6, 1 / 3))
    assert (m.m_F, m.m_O, m.m_Theta) == (0.5, 1 / 6, 1 / 3)


@pytest.mark.parametrize(
    "b, u, alpha",
    [((0, 0), 1, (1, 1)), ((0.9, 0), 0.1, (19, 1)), ((1, 0), 0, (19, 1))],
)
def test_opinion_to_dirichlet(b, u, alpha):
    d = opinion_to_dirichlet(SubjectiveOpinion(*b, u), u_min=0.1)
    assert (d.alpha_F, d.alpha_O) == pytest.approx(alpha, rel=1e-14)


def test_clamped_opinion_round_trips():
    d = opinion_to_dirichlet(SubjectiveOpinion(1, 0, 0), u_min=0.1)
    o = dirichlet_to_opinion(d)
    assert (o.b_F, o.b_O, o.u) == pytest.approx((0.9, 0.0, 0.1), abs=1e-15)


def test_opinion_to_dirichlet_domain():
    with pytest.raises(DomainError):
        opinion_to_dirichlet(SubjectiveOpinion(0.5, 0.5, 0.0), u_min=-0.1)
    with pytest.raises(DomainError):
        opinion_to_dirichlet(SubjectiveOpinion(0.5, 0.5, 0.0), u_min=0.0)


@pytest.mark.parametrize(
    "alpha, p",
    [((1, 1), (0.5, 0.5)), ((4, 2), (2 / 3, 1 / 3)), ((101, 1), (101 / 102, 1 / 102))],
)
def test_expected_probability(alpha, p):
    assert expected_probability(DirichletBinary(*alpha)) == pytest.approx(p, rel=1e-15)


# ------------------------------------------------------------------- pdf
@pytest.mark.parametrize("p", [(0.0, 1.0), (0.3, 0.7), (1.0, 0.0)])
def test_pdf_uniform(p):
    assert dirichlet_pdf(DirichletBinary(1, 1), p) == pytest.approx(1.0, rel=1e-14)


def test_pdf_22_at_centre():
    # normaliser from quadrature, not from lgamma
    expected = 0.25 / quad_normaliser((2.0, 2.0))
    assert expected == pytest.approx(1.5, rel=1e-12)
    assert dirichlet_pdf(DirichletBinary(2, 2), (0.5, 0.5)) == pytest.approx(expected, rel=1e-12)


def test_pdf_21_at_vertex():
    expected = 1.0 / quad_normaliser((2.0, 1.0))
    assert dirichlet_pdf(DirichletBinary(2, 1), (1.0, 0.0)) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(2.0, rel=1e-12)


@pytest.mark.parametrize("alpha", [(1, 1), (2, 2), (5, 3), (20, 1)])
def test_pdf_integrates_to_one(alpha):
    d = DirichletBinary(*alpha)
    total = integrate.quad(lambda p: dirichlet_pdf(d, (p, 1.0 - p)), 0.0, 1.0, epsabs=1e-12)[0]
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("p", [(0.6, 0.6), (-0.1, 1.1), (math.nan, 0.5)])
def test_pdf_rejects_points_off_simplex(p):
    with pytest.raises(DomainError):
        dirichlet_pdf(DirichletBinary(2, 2), p)


# -------------------------------------------------------------------- KL
def test_kl_from_uniform_identity():
    assert kl_from_uniform(DirichletBinary(1, 1)) == 0.0


def test_kl_from_uniform_21_matches_quadrature():
    oracle = quad_kl((2.0, 1.0), (1.0, 1.0))
    assert oracle == pytest.approx(math.log(2) - 0.5, abs=1e-10)
    assert kl_from_uniform(DirichletBinary(2, 1)) == pytest.approx(oracle, abs=1e-9)


def test_kl_from_uniform_22_matches_quadrature():
    oracle = quad_kl((2.0, 2.0), (1.0, 1.0))
    # closed form: log 6 - 5/3
    assert oracle == pytest.approx(math.log(6) - 5 / 3, abs=1e-10)
    assert kl_from_uniform(DirichletBinary(2, 2)) == pytest.approx(oracle, abs=1e-9)


def test_kl_dirichlet_examples():
    assert kl_dirichlet(DirichletBinary(5, 3), DirichletBinary(5, 3)) == 0.0
    assert kl_dirichlet(DirichletBinary(2, 1), DirichletBinary(1, 1)) == pytest.approx(
        kl_from_uniform(DirichletBinary(2, 1)), abs=1e-12
    )
    fwd = kl_dirichlet(DirichletBinary(4, 2), DirichletBinary(2, 4))
    rev = kl_dirichlet(DirichletBinary(2, 4), DirichletBinary(4, 2))
    assert fwd == pytest.approx(quad_kl((4.0, 2.0), (2.0, 4.0)), abs=1e-9)
    assert fwd > 0
    # swapping the two classes maps one direction onto the other
    assert rev == pytest.approx(fwd, rel=1e-12)


def test_kl_dirichlet_asymmetric():
    fwd = kl_dirichlet(DirichletBinary(6, 2), DirichletBinary(1, 3))
    rev = kl_dirichlet(DirichletBinary(1, 3), DirichletBinary(6, 2))
    assert fwd == pytest.approx(quad_kl((6.0, 2.0), (1.0, 3.0)), abs=1e-8)
    assert rev == pytest.approx(quad_kl((1.0, 3.0), (6.0, 2.0)), abs=1e-8)
    assert abs(fwd - rev) > 1e-3


# ------------------------------------------------------------ properties
_mass_component = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
_alpha = st.floats(min_value=1.0, max_value=500.0, allow_nan=False)
_evidence = st.floats(min_value=0.0, max_value=1e6, allow_nan=False)


@st.composite
def masses(draw):
    m_F = draw(_mass_component)
    m_O = draw(st.floats(min_value=0.0, max_value=1.0 - m_F))
    return BeliefMass(m_F, m_O, 1.0 - m_F - m_O)


@given(masses())
def test_mass_opinion_round_trip_bit_exact(m):
    assert opinion_to_mass(mass_to_opinion(m)) == m


@given(masses())
def test_full_round_trip_through_dirichlet(m):
    if m.m_Theta <= 1e-6:
        return
    d = opinion_to_dirichlet(mass_to_opinion(m), u_min=0.0)
    back = opinion_to_mass(dirichlet_to_opinion(d))
    assert back.m_F == pytest.approx(m.m_F, abs=1e-12)
    assert back.m_O == pytest.approx(m.m_O, abs=1e-12)
    assert back.m_Theta == pytest.approx(m.m_Theta, abs=1e-12)


@given(_evidence, _evidence)
def test_expected_probability_sums_to_one(e_F, e_O):
    p = expected_probability(evidence_to_dirichlet(EvidencePair(e_F, e_O)))
    assert abs(sum(p) - 1.0) <= 1e-12


@settings(max_examples=300)
@given(_alpha, _alpha, _alpha, _alpha)
def test_kl_nonnegative(a, b, c, d):
    kl = kl_dirichlet(DirichletBinary(a, b), DirichletBinary(c, d))
    assert kl >= 0.0
    if (a, b) == (c, d):
        assert kl <= 1e-12


@given(_alpha, _alpha)
def test_kl_from_uniform_consistent_with_general_kl(a, b):
    d = DirichletBinary(a, b)
    assert kl_from_uniform(d) == pytest.approx(kl_dirichlet(d, DirichletBinary(1, 1)), abs=1e-12, rel=1e-12)


def test_evidence_to_mass_array_matches_scalar():
    rng = np.random.default_rng(3)
    e = rng.uniform(0, 40, size=(50, 2))
    m = evidence_to_mass_array(e)
    for row, masses_row in zip(e, m):
        o = dirichlet_to_opinion(evidence_to_dirichlet(EvidencePair(*row)))
        assert tuple(masses_row) == pytest.approx((o.b_F, o.b_O, o.u), abs=1e-15)
    np.testing.assert_allclose(m.sum(axis=-1), 1.0, atol=1e-12)
