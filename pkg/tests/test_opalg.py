from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmboot.opalg import (
    GaussQ,
    MomentExpression,
    OperatorPoly,
    PolynomialPotential,
    adjoint,
    derive_recursion,
    dump_reductions,
    normal_order,
    reduce_mixed_moment,
    seed_table,
)

I = GaussQ(Fraction(0), Fraction(1))


def mono(a, b, c=1):
    return OperatorPoly.monomial(a, b, c)


def test_commutator():
    assert normal_order(mono(0, 1), mono(1, 0)) == mono(1, 1) + mono(0, 0, -I)


def test_p2_x2():
    got = normal_order(mono(0, 2), mono(2, 0))
    assert got == mono(2, 2) + mono(1, 1, GaussQ(Fraction(0), Fraction(-4))) + mono(0, 0, -2)


def test_already_normal():
    assert normal_order(mono(2, 0), mono(0, 2)) == mono(2, 2)


def test_adjoint_examples():
    assert adjoint(mono(1, 1)) == mono(1, 1) + mono(0, 0, -I)
    assert adjoint(mono(2, 0)) == mono(2, 0)
    assert adjoint(mono(1, 0, I)) == mono(1, 0, -I)


def test_zero_terms_dropped():
    op = mono(1, 1) - mono(1, 1)
    assert not op
    assert op.terms == {}


small_coeff = st.builds(
    lambda r, i: GaussQ(Fraction(r), Fraction(i)),
    st.integers(-3, 3),
    st.integers(-3, 3),
)
small_op = st.dictionaries(st.tuples(st.integers(0, 3), st.integers(0, 3)), small_coeff, max_size=3).map(OperatorPoly)


@settings(max_examples=60, deadline=None)
@given(small_op, small_op, small_op)
def test_associative(a, b, c):
    assert normal_order(a, normal_order(b, c)) == normal_order(normal_order(a, b), c)


@settings(max_examples=60, deadline=None)
@given(small_op, small_op)
def test_adjoint_antihomomorphism(a, b):
    assert adjoint(adjoint(a)) == a
    assert adjoint(normal_order(a, b)) == normal_order(adjoint(b), adjoint(a))


def test_potential_basics():
    V = PolynomialPotential.anharmonic(Fraction(1, 2), 3)
    assert V.degree == 6 and V.is_even and V.is_confining
    assert V.seed_powers() == (2, 4)
    assert V(2.0) == pytest.approx(0.5 * 4 + 64)
    assert PolynomialPotential.anharmonic(np.float64(0.2), 2).coeffs[2] == Fraction(1, 5)
    assert not PolynomialPotential([0, 0, 0, 0, -1]).is_confining


def test_quartic_recursion_t1_symbolic():
    # <x^4> = (E - 2g<x^2>)/3 for any g
    for g in (Fraction(0), Fraction(1), Fraction(-5, 2), Fraction(7, 3)):
        V = PolynomialPotential.anharmonic(g, 2)
        expected = MomentExpression({0: {1: Fraction(1, 3)}, 2: {0: -2 * g / 3}})
        assert derive_recursion(V, 1) == expected


def test_harmonic_recursion_t1():
    V = PolynomialPotential([0, 0, 3])
    assert derive_recursion(V, 1) == MomentExpression({0: {1: Fraction(1, 6)}})


def test_t0_force_balance():
    # quartic: <V'> = 2g<x> + 4<x^3> = 0
    V = PolynomialPotential.anharmonic(2, 2)
    assert derive_recursion(V, 0) == MomentExpression({1: {0: Fraction(-1)}})


def test_degenerate_leading():
    with pytest.raises(ValueError):
        derive_recursion(PolynomialPotential([1]), 1)


def test_reduction_examples():
    V = PolynomialPotential.anharmonic(1, 2)
    assert reduce_mixed_moment(1, 1, V) == MomentExpression({0: {0: GaussQ(Fraction(0), Fraction(1, 2))}})
    assert reduce_mixed_moment(2, 0, V) == MomentExpression.moment(2)
    # <p^2> = 2(E - <V>)
    assert reduce_mixed_moment(0, 2, V) == MomentExpression({0: {1: 2}, 2: {0: -2}, 4: {0: -2}})


@pytest.mark.parametrize("g,n", [(1, 2), (Fraction(-3, 2), 2), (Fraction(1, 5), 3), (0, 4)])
def test_reduction_parity(g, n):
    V = PolynomialPotential.anharmonic(g, n)
    for total in range(13):
        for b in range(total + 1):
            expr = reduce_mixed_moment(total - b, b, V)
            vanishing = expr.imag_part() if b % 2 == 0 else expr.real_part()
            assert vanishing == MomentExpression(), (total - b, b)


def test_seed_table_only_seeds():
    V = PolynomialPotential.anharmonic(1, 3)
    table = seed_table(V, 20)
    allowed = {0, *V.seed_powers()}
    for t, expr in table.items():
        assert set(expr.terms) <= allowed, t
    assert table[7] == MomentExpression()


def test_seed_table_harmonic_values():
    # harmonic oscillator ground state, omega = sqrt(2): <x^2> = 1/(2 omega), <x^4> = 3 <x^2>^2
    V = PolynomialPotential([0, 0, 1])
    E = np.sqrt(2) / 2
    table = seed_table(V, 4)
    x2 = table[2].evaluate(E, [1.0]).real
    x4 = table[4].evaluate(E, [1.0]).real
    assert x2 == pytest.approx(1 / (2 * np.sqrt(2)))
    assert x4 == pytest.approx(3 * x2**2)


def test_dump_reductions_lines():
    lines = dump_reductions(PolynomialPotential.anharmonic(1, 2), 2)
    assert len(lines) == 6
    assert lines[0].startswith("<x^0 p^0> =")
