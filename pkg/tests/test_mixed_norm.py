import math

import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from errors import DimensionMismatch, ExponentError, SpaceError
from mixed_norm import (
    MixedExponent,
    Weight,
    dual_extremal,
    holder_check,
    mixed_norm,
    pairing,
    quasi_triangle_power,
    triangle_holds,
    weighted_norm,
)
from operators import divergence_function
from space import RandomVariable, make_dyadic_space


def random_variable(space, seed):
    return RandomVariable(space, np.random.default_rng(seed).standard_normal(space.shape))


class TestMixedExponent:
    def test_parse_with_infinity(self):
        p = MixedExponent.parse("2, inf")
        assert p.entries == (2.0, math.inf)
        assert str(p) == "2,inf"
        assert not p.is_finite

    def test_rejects_nonpositive_entries(self):
        with pytest.raises(ExponentError):
            MixedExponent((1.0, 0.0))
        with pytest.raises(ExponentError):
            MixedExponent.parse("2,-1")
        with pytest.raises(ExponentError):
            MixedExponent.parse("two")

    def test_conjugate(self):
        p = MixedExponent((1.0, 2.0, 4.0, math.inf))
        q = p.conjugate()
        assert q.entries == pytest.approx((math.inf, 2.0, 4.0 / 3.0, 1.0))
        assert q.conjugate().entries == pytest.approx(p.entries)

    def test_conjugate_needs_entries_at_least_one(self):
        with pytest.raises(ExponentError):
            MixedExponent((0.5, 2.0)).conjugate()

    def test_divide(self):
        assert MixedExponent((2.0, math.inf)).divide(2.0).entries == (1.0, math.inf)
        with pytest.raises(ExponentError):
            MixedExponent((2.0,)).divide(0.0)

    def test_min_and_max(self):
        p = MixedExponent((0.8, 3.0))
        assert p.min_entry == 0.8
        assert p.max_entry == 3.0


@pytest.mark.parametrize("p", ["1,1", "2,3", "0.5,inf", "inf,inf", "0.7,1.5"])
def test_norm_of_one_is_one(dyadic_2_2, p):
    assert mixed_norm(RandomVariable.constant(dyadic_2_2, 1.0), p) == pytest.approx(1.0)


def test_ones_exponent_is_expectation(dyadic_2_3):
    f = random_variable(dyadic_2_3, 1)
    assert mixed_norm(f, "1,1") == pytest.approx(abs(f).expectation())


@pytest.mark.parametrize("p", [0.5, 1.5, 2.0, 3.0])
def test_uniform_exponent_is_single_lebesgue_norm(dyadic_2_3, p):
    f = random_variable(dyadic_2_3, 5)
    expected = float(np.sum(np.abs(f.values) ** p * dyadic_2_3.probs)) ** (1.0 / p)
    assert mixed_norm(f, MixedExponent.uniform(p, 2)) == pytest.approx(expected, rel=1e-9)


@hsettings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 16), st.sampled_from(["2,3", "0.5,1", "1.5,inf", "inf,0.8"]))
def test_monotone_in_absolute_value(seed, p):
    space = make_dyadic_space(2, 2)
    rng = np.random.default_rng(seed)
    g = RandomVariable(space, rng.standard_normal(space.shape))
    f = RandomVariable(space, g.values * rng.uniform(-1.0, 1.0, space.shape))
    assert mixed_norm(f, p) <= mixed_norm(g, p) * (1 + 1e-9)


def test_iteration_order(dyadic_2_2):
    # |f| = 1 on the slice x_1 = 0 only
    values = np.zeros(dyadic_2_2.shape)
    values[0, :] = 1.0
    f = RandomVariable(dyadic_2_2, values)
    # inner sup over x_1 gives 1 for every x_2
    assert mixed_norm(f, "inf,1") == pytest.approx(1.0)
    # inner L_1 over x_1 gives 1/4, then the sup over x_2
    assert mixed_norm(f, "1,inf") == pytest.approx(0.25)


def test_shell_diagonal_function_has_unit_norm():
    space = make_dyadic_space(2, 4)
    for p in (1.5, 2.0, 3.0):
        f = divergence_function(space, 4, p)
        assert mixed_norm(f, (p, math.inf)) == pytest.approx(1.0, abs=1e-9)


def test_dimension_mismatch(dyadic_2_2):
    with pytest.raises(DimensionMismatch):
        mixed_norm(RandomVariable.constant(dyadic_2_2, 1.0), "2")


def test_no_overflow_for_large_exponent(dyadic_1_3):
    f = RandomVariable(dyadic_1_3, np.full(dyadic_1_3.shape, 1e200))
    assert mixed_norm(f, "50") == pytest.approx(1e200)


@hsettings(max_examples=40, deadline=None)
@given(
    st.integers(0, 2 ** 16),
    st.floats(min_value=-5, max_value=5, allow_nan=False),
    st.sampled_from(["2,3", "0.5,1", "1.5,inf", "inf,0.8"]),
)
def test_homogeneity(seed, c, p):
    space = make_dyadic_space(2, 2)
    f = random_variable(space, seed)
    assert mixed_norm(f * c, p) == pytest.approx(abs(c) * mixed_norm(f, p), rel=1e-9, abs=1e-12)


def test_pairing_of_ones_and_disjoint_indicators(dyadic_1_2):
    one = RandomVariable.constant(dyadic_1_2, 1.0)
    assert pairing(one, one) == pytest.approx(1.0)
    a = RandomVariable.indicator(dyadic_1_2, [1, 1, 0, 0])
    b = RandomVariable.indicator(dyadic_1_2, [0, 0, 1, 1])
    assert pairing(a, b) == 0.0


@hsettings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 16), st.sampled_from([(2.0, 3.0), (1.0, 4.0), (math.inf, 1.5), (1.2, math.inf)]))
def test_holder_chain(seed, p):
    space = make_dyadic_space(2, 3)
    f, g = random_variable(space, seed), random_variable(space, seed + 1)
    pair, l1, bound = holder_check(f, g, MixedExponent(p))
    assert pair <= l1 + 1e-12
    assert l1 <= bound * (1 + 1e-9)


def test_dual_extremal_of_constant(dyadic_2_2):
    f = RandomVariable.constant(dyadic_2_2, 3.0)
    g = dual_extremal(f, "2,2")
    assert np.allclose(g.values, 1.0)
    assert pairing(f, g) == pytest.approx(3.0)


def test_dual_extremal_for_ones_is_sign(dyadic_2_2):
    f = random_variable(dyadic_2_2, 4)
    g = dual_extremal(f, "1,1")
    assert np.array_equal(g.values, np.sign(f.values))
    assert pairing(f, g) == pytest.approx(mixed_norm(f, "1,1"))


@pytest.mark.parametrize("p", [(3.0, 2.0), (1.5, math.inf), (math.inf, 2.0), (1.0, 3.0), (math.inf, math.inf)])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_dual_extremal_attains_norm(dyadic_2_2, p, seed):
    p = MixedExponent(p)
    f = random_variable(dyadic_2_2, seed)
    g = dual_extremal(f, p)
    assert pairing(f, g) == pytest.approx(mixed_norm(f, p), rel=1e-9)
    assert mixed_norm(g, p.conjugate()) <= 1 + 1e-9


def test_dual_extremal_of_zero(dyadic_1_2):
    g = dual_extremal(RandomVariable.constant(dyadic_1_2, 0.0), "2")
    assert not np.any(g.values)


def test_dual_extremal_needs_banach_exponent(dyadic_1_2):
    with pytest.raises(ExponentError):
        dual_extremal(RandomVariable.constant(dyadic_1_2, 1.0), "0.5")


def test_weighted_norm(dyadic_1_2):
    f = RandomVariable(dyadic_1_2, [1.0, -2.0, 0.0, 3.0])
    one = Weight(RandomVariable.constant(dyadic_1_2, 1.0))
    assert weighted_norm(f, 2.0, one) == pytest.approx(mixed_norm(f, "2"))

    w = Weight(RandomVariable(dyadic_1_2, [1.0, 2.0, 3.0, 4.0]))
    ones = RandomVariable.constant(dyadic_1_2, 1.0)
    assert weighted_norm(ones, 3.0, w) == pytest.approx(2.5 ** (1 / 3))
    chi = RandomVariable.indicator(dyadic_1_2, [1, 1, 0, 0])
    assert weighted_norm(chi, 2.0, w) == pytest.approx(0.75 ** 0.5)


def test_weighted_norm_rejects_bad_exponent(dyadic_1_2):
    w = Weight(RandomVariable.constant(dyadic_1_2, 1.0))
    for r in (0.0, -1.0, math.inf):
        with pytest.raises(ExponentError):
            weighted_norm(RandomVariable.constant(dyadic_1_2, 1.0), r, w)


def test_weight_must_be_positive(dyadic_1_2):
    with pytest.raises(SpaceError):
        Weight(RandomVariable(dyadic_1_2, [1.0, 0.0, 1.0, 1.0]))


@hsettings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 16), st.sampled_from(["0.5,0.7", "0.9,2", "2,3", "1,inf"]))
def test_quasi_triangle(seed, p):
    space = make_dyadic_space(2, 2)
    assert triangle_holds(random_variable(space, seed), random_variable(space, seed + 7), MixedExponent.parse(p))


def test_uniform_exponent_and_triangle_power():
    assert MixedExponent.uniform(3, 2).entries == (3.0, 3.0)
    assert quasi_triangle_power(MixedExponent((0.5, 2.0))) == 0.5
    assert quasi_triangle_power(MixedExponent((1.5, math.inf))) == 1.0
