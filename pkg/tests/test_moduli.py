"""Moduli of uniform continuity: exactness and combinator soundness."""

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlw.moduli import Modulus

radii = st.fractions(min_value=0, max_value=1, max_denominator=24)
consts = st.fractions(min_value=0, max_value=5, max_denominator=8)


@given(radii, consts)
def test_lipschitz_omega_exact(r, L):
    assert Modulus.lipschitz(L).omega(r) == min(Fraction(1), L * r)


@given(radii)
def test_constant_ignores_argument(r):
    assert Modulus.constant().omega(r) == 0


@given(radii, radii)
def test_omega_monotone(r1, r2):
    m = Modulus.lipschitz(Fraction(3, 2))
    lo, hi = sorted((r1, r2))
    assert m.omega(lo) <= m.omega(hi)


@given(st.fractions(min_value=0, max_value=1, max_denominator=16))
def test_delta_inverts_omega(eps):
    m = Modulus.lipschitz(2)
    d = m.delta(eps)
    # perturbations strictly below delta change the value by at most eps
    if d > 0:
        assert m.omega(d * Fraction(15, 16)) <= eps


@given(radii, consts, consts)
def test_combinators_bound_pointwise(r, a, b):
    ma, mb = Modulus.lipschitz(a), Modulus.lipschitz(b)
    assert ma.maxwith(mb).omega(r) == max(ma.omega(r), mb.omega(r))
    # plus and scale must never underestimate the true (clamped) bound
    assert ma.plus(mb).omega(r) >= min(Fraction(1), ma.omega(r) + mb.omega(r))
    assert ma.scale(3).omega(r) >= min(Fraction(1), 3 * ma.omega(r))


@given(radii, consts, consts)
def test_compose_bounds_chain(r, a, b):
    ma, mb = Modulus.lipschitz(a), Modulus.lipschitz(b)
    assert ma.compose(mb).omega(r) >= ma.omega(mb.omega(r))


def test_dominates_is_pointwise_comparison():
    assert Modulus.lipschitz(1).dominates(Modulus.lipschitz(2))
    assert not Modulus.lipschitz(2).dominates(Modulus.lipschitz(1))
    assert Modulus.lipschitz(1).dominates(Modulus.lipschitz(1))


def test_invalid_breakpoints_rejected():
    with pytest.raises(ValueError):
        Modulus(((Fraction(0), Fraction(1, 2)), (Fraction(1), Fraction(1))))
    with pytest.raises(ValueError):
        Modulus.lipschitz(-1)
