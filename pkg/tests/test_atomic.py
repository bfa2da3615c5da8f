import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

import atomic
from atomic import (
    EQUIVALENCE_ITEMS,
    Atom,
    AtomKind,
    aggregate_equivalence,
    check_decomposition,
    davis_decompose,
    decompose_envelope,
    decompose_regular,
    decompose_s,
    decomposition_norm,
    envelope_from_decomposition,
    equivalence_ratios,
    equivalence_report,
    k_window,
    level_sets_match,
    validate_atom,
)
from errors import CertificateError, ConfigError, ExponentError, MeasurabilityError, RegularityError
from martingale import AdaptedEnvelope, Martingale, StoppingTime, rademacher_martingale, random_martingale
from mixed_norm import MixedExponent, grid_norm
from operators import cond_square_sequence, hardy_norms, square_sequence
from space import CoordinateSpace, make_dyadic_space, make_space


def zero_martingale(space):
    return Martingale(space, np.zeros((space.depth + 1,) + space.shape))


def sampled(space, seed, distribution="gaussian"):
    return random_martingale(space, np.random.default_rng(seed), distribution)


class TestValidateAtom:
    def test_zero_atom_is_valid(self, dyadic_1_2):
        for level in (0, 1, 3):
            atom = Atom(AtomKind.s, zero_martingale(dyadic_1_2), StoppingTime.constant(dyadic_1_2, level))
            assert validate_atom(atom, MixedExponent((1.0,))).valid

    def test_nonzero_start_is_rejected(self, dyadic_1_2):
        diffs = np.zeros((3, 4))
        diffs[0] = 0.1
        atom = Atom(AtomKind.S, Martingale(dyadic_1_2, diffs), StoppingTime.constant(dyadic_1_2, 0))
        diag = validate_atom(atom, MixedExponent((1.0,)))
        assert not diag.valid
        assert "condition 1 violated at n=0" in diag.messages

    def test_size_condition(self, dyadic_1_2):
        diffs = np.zeros((3, 4))
        diffs[1] = [1.0, 1.0, -1.0, -1.0]
        tau = StoppingTime.constant(dyadic_1_2, 0)
        small = Atom(AtomKind.S, Martingale(dyadic_1_2, diffs * 0.5), tau)
        large = Atom(AtomKind.S, Martingale(dyadic_1_2, diffs * 2.0), tau)
        assert validate_atom(small, MixedExponent((2.0,))).valid
        diag = validate_atom(large, MixedExponent((2.0,)))
        assert not diag.valid
        assert diag.max_violation == pytest.approx(1.0)


class TestKWindow:
    def test_window_brackets_values(self):
        assert k_window(np.array([0.0, 0.3, 5.0])) == (-3, 3)

    def test_zero_sequence(self):
        assert k_window(np.zeros(4)) is None


class TestDecomposeS:
    def test_zero_martingale_is_empty(self, dyadic_2_2):
        dec = decompose_s(zero_martingale(dyadic_2_2), "1.5,2")
        assert dec.terms == []
        assert decomposition_norm(dec) == 0.0

    @pytest.mark.parametrize("seed", range(4))
    def test_random_martingale_mixed_quasi_norm(self, dyadic_2_2, seed):
        f = sampled(dyadic_2_2, seed)
        dec = decompose_s(f, MixedExponent((1.5, 0.8)), t=0.5)
        check = check_decomposition(dec, f)
        assert check.passed, check.messages
        assert check.reconstruction_error < 1e-9
        assert level_sets_match(dec, f)

    def test_constant_increments_use_straddling_scales(self, dyadic_1_3):
        f = rademacher_martingale(dyadic_1_3, [1.0, 1.0, 1.0])
        dec = decompose_s(f, "2", t=1.0)
        sigma = math.sqrt(3.0)
        live = [term.k for term in dec.terms if term.mu > 0]
        assert all(2.0 ** k < sigma for k in live)
        assert check_decomposition(dec, f).passed

    def test_keeps_the_head(self, dyadic_2_2, rng):
        f = random_martingale(dyadic_2_2, rng, centered=False)
        dec = decompose_s(f, "2,2")
        assert dec.reconstruction_error(f) < 1e-9

    def test_default_aggregation_exponent(self, dyadic_2_2, rng):
        f = random_martingale(dyadic_2_2, rng)
        assert decompose_s(f, "0.6,2").t == pytest.approx(0.6)
        assert decompose_s(f, "3,2").t == pytest.approx(1.0)

    def test_invalid_aggregation_exponent(self, martingale_2_2):
        for t in (0.0, -1.0, 1.5):
            with pytest.raises(ExponentError):
                decompose_s(martingale_2_2, "2,2", t=t)

    def test_infinite_exponent_rejected(self, martingale_2_2):
        with pytest.raises(ExponentError):
            decompose_s(martingale_2_2, "inf,2")

    def test_manifest(self, martingale_2_2):
        dec = decompose_s(martingale_2_2, "2,2")
        rows = dec.manifest()
        assert [row.k for row in rows] == list(range(dec.k_window[0], dec.k_window[1] + 1))
        for row in rows:
            assert row.mu == pytest.approx(3 * 2.0 ** row.k * row.chi_norm)


class TestDecomposeEnvelope:
    def test_zero_martingale_is_empty(self, dyadic_2_2):
        assert decompose_envelope(zero_martingale(dyadic_2_2), "2,2", kind="P").terms == []

    @pytest.mark.parametrize("kind", ["P", "Q"])
    @pytest.mark.parametrize("seed", range(3))
    def test_random_martingale(self, dyadic_2_3, kind, seed):
        f = sampled(dyadic_2_3, seed)
        p = MixedExponent((1.3, 2.5))
        dec = decompose_envelope(f, p, kind=kind)
        check = check_decomposition(dec, f)
        assert check.passed, check.messages
        assert dec.kind == (AtomKind.M if kind == "P" else AtomKind.S)
        hardy = getattr(hardy_norms(f, p), "p_envelope" if kind == "P" else "q_envelope")
        assert hardy <= decomposition_norm(dec) * (1 + 1e-9)

    def test_deterministic_martingale(self, dyadic_1_3):
        f = rademacher_martingale(dyadic_1_3, [0.5, 0.25, 0.125])
        dec = decompose_envelope(f, "1", kind="P")
        assert check_decomposition(dec, f).passed
        top = float(np.abs(f.partial_sums).max())
        live = [term.k for term in dec.terms if term.mu > 0]
        assert max(live) <= math.ceil(math.log2(top))

    def test_rebuilt_envelope_dominates(self, martingale_2_2):
        dec = decompose_envelope(martingale_2_2, "2,2", kind="P")
        lam = envelope_from_decomposition(dec)
        lam.validate(dominates=np.abs(martingale_2_2.partial_sums), lag=1)

    def test_unknown_kind(self, martingale_2_2):
        with pytest.raises(ConfigError):
            decompose_envelope(martingale_2_2, "2,2", kind="M")


class TestDecomposeRegular:
    def test_zero_martingale_is_empty(self, dyadic_2_2):
        assert decompose_regular(zero_martingale(dyadic_2_2), "2,2").terms == []

    @pytest.mark.parametrize("seed", range(3))
    def test_dyadic_line(self, dyadic_1_3, seed):
        f = sampled(dyadic_1_3, seed)
        dec = decompose_regular(f, "2")
        assert check_decomposition(dec, f).passed
        assert all(ratio <= 2.0 + 1e-9 for ratio in dec.cover_ratios.values())
        assert all(math.isfinite(ratio) for ratio in dec.stopping_ratios.values())

    @pytest.mark.parametrize("kind", ["M", "S"])
    @pytest.mark.parametrize("seed", range(3))
    def test_mixed_quasi_norm(self, dyadic_2_2, kind, seed):
        f = sampled(dyadic_2_2, seed)
        dec = decompose_regular(f, MixedExponent((0.9, 1.4)), t=0.4, kind=kind)
        check = check_decomposition(dec, f)
        assert check.passed, check.messages
        assert check.reconstruction_error < 1e-9

    def test_covers_contain_stopping_sets(self, dyadic_2_2, rng):
        f = random_martingale(dyadic_2_2, rng)
        dec = decompose_regular(f, "2,2")
        for term in dec.terms:
            # stopping times from covers stop no later than first passage
            rho_finite = np.abs(f.partial_sums).max(axis=0) > 2.0 ** term.k
            assert np.all(term.atom.tau.finite_mask()[rho_finite])

    def test_t_must_be_below_min_exponent(self, martingale_2_2):
        with pytest.raises(ExponentError):
            decompose_regular(martingale_2_2, "0.9,1.4", t=0.9)

    def test_regularity_limit(self):
        eps = 2.0 ** -10
        coord = CoordinateSpace(np.array([1 - eps, eps]), (((0, 1),), ((0,), (1,))))
        space = make_space([coord])
        f = Martingale(space, np.array([[0.0, 0.0], [eps, eps - 1.0]]))
        with pytest.raises(RegularityError):
            decompose_regular(f, "2", max_regularity=16.0)
        dec = decompose_regular(f, "2")
        assert check_decomposition(dec, f).passed

    def test_cover_above_regularity_raises(self, martingale_2_2, monkeypatch):
        cover = atomic._cover_stopping_time
        monkeypatch.setattr(atomic, "_cover_stopping_time", lambda *args: (cover(*args)[0], 1e6))
        with pytest.raises(CertificateError):
            decompose_regular(martingale_2_2, "2,2")


class TestDecompositionNorm:
    def test_single_term_at_time_zero(self, dyadic_1_2):
        diffs = np.zeros((3, 4))
        diffs[1] = [1.0, 1.0, -1.0, -1.0]
        f = Martingale(dyadic_1_2, diffs)
        dec = decompose_envelope(f, "2", kind="P")
        # lambda_0 = 1 everywhere, so only k = -1 stops and it stops at time 0
        live = [term for term in dec.terms if term.mu > 0]
        assert [term.k for term in live] == [-1]
        assert np.all(live[0].atom.tau.levels == 0)
        assert decomposition_norm(dec) == pytest.approx(live[0].mu)

    @hsettings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 16), st.sampled_from([(1.5, 0.8), (2.0, 3.0), (0.7, 0.7)]))
    def test_s_decomposition_is_equivalent_to_hardy_norm(self, seed, p):
        space = make_dyadic_space(2, 2)
        f = sampled(space, seed)
        p = MixedExponent(p)
        dec = decompose_s(f, p)
        s_norm = grid_norm(space, cond_square_sequence(f)[-1], p)
        norm = decomposition_norm(dec)
        if s_norm == 0:
            assert norm == 0
        else:
            assert 0 < norm / s_norm < math.inf

    @hsettings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 16), st.sampled_from(["s", "P", "Q"]))
    def test_dropping_a_term_never_increases_norm(self, seed, kind):
        space = make_dyadic_space(2, 2)
        f = sampled(space, seed)
        p = MixedExponent((1.5, 2.0))
        dec = decompose_s(f, p) if kind == "s" else decompose_envelope(f, p, kind=kind)
        full = decomposition_norm(dec)
        for i in range(len(dec.terms)):
            smaller = dataclasses.replace(dec, terms=dec.terms[:i] + dec.terms[i + 1:])
            assert decomposition_norm(smaller) <= full * (1 + 1e-12)


class TestDavis:
    def test_zero_martingale(self, dyadic_1_4):
        result = davis_decompose(zero_martingale(dyadic_1_4), "2")
        assert result.h.is_zero()
        assert result.g.is_zero()
        assert result.certified

    def test_single_jump_goes_to_h(self):
        space = make_dyadic_space(1, 1)
        f = Martingale(space, np.array([[0.0, 0.0], [0.7, -0.7]]))
        result = davis_decompose(f, "2")
        assert np.allclose(result.h.diffs, f.diffs)
        assert result.g.is_zero()

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("kind", ["S", "M"])
    def test_random_split_is_exact(self, dyadic_1_4, seed, kind):
        f = sampled(dyadic_1_4, seed, "heavy")
        result = davis_decompose(f, "2", kind=kind)
        assert np.allclose(result.h.partial_sums + result.g.partial_sums, f.partial_sums, atol=1e-12)
        assert result.certified
        result.h.validate()
        result.g.validate()
        assert math.isfinite(result.h_variation)
        assert math.isfinite(result.g_envelope)

    def test_custom_envelope(self, dyadic_1_4, rng):
        f = random_martingale(dyadic_1_4, rng)
        lam = AdaptedEnvelope(dyadic_1_4, 2.0 * square_sequence(f))
        assert davis_decompose(f, "1.5", lam=lam).certified

    def test_envelope_must_dominate(self, dyadic_1_4, rng):
        f = random_martingale(dyadic_1_4, rng)
        lam = AdaptedEnvelope(dyadic_1_4, 0.5 * square_sequence(f))
        with pytest.raises(MeasurabilityError):
            davis_decompose(f, "2", lam=lam)

    def test_envelope_must_start_at_zero(self, dyadic_1_4, rng):
        f = random_martingale(dyadic_1_4, rng)
        lam = AdaptedEnvelope(dyadic_1_4, square_sequence(f) + 1.0)
        with pytest.raises(MeasurabilityError):
            davis_decompose(f, "2", lam=lam)

    def test_unknown_kind(self, martingale_2_2):
        with pytest.raises(ConfigError):
            davis_decompose(martingale_2_2, "2,2", kind="Q")


class TestEquivalences:
    def test_items(self):
        names = [item for item, *_ in EQUIVALENCE_ITEMS]
        assert len(names) == len(set(names)) == 13
        exact = {item for item, _, _, flag, _ in EQUIVALENCE_ITEMS if flag}
        assert exact == {"M<=P", "S<=Q", "S<=sqrtR*s"}

    def test_deterministic_martingale_has_s_equal_S(self, dyadic_1_3):
        f = rademacher_martingale(dyadic_1_3, [1.0, -0.5, 0.25])
        ratios = equivalence_ratios(f, "2")
        assert ratios["S<=s"] == pytest.approx(1.0)
        assert ratios["s<=S"] == pytest.approx(1.0)
        assert ratios["S<=Q"] == pytest.approx(1.0)

    def test_zero_martingale_has_no_ratios(self, dyadic_2_2):
        ratios = equivalence_ratios(zero_martingale(dyadic_2_2), "2,2")
        assert all(value is None for value in ratios.values())

    def test_report_on_regular_space(self, dyadic_2_2):
        samples = [sampled(dyadic_2_2, seed) for seed in range(20)]
        p = MixedExponent((1.3, 2.5))
        rows = {row.item: row for row in equivalence_report(samples, p)}
        assert rows["M<=P"].violations == 0
        assert rows["S<=Q"].violations == 0
        assert rows["S<=sqrtR*s"].violations == 0
        assert all(math.isfinite(row.max_ratio) for row in rows.values())
        assert rows["M<=P"].max_ratio <= 1 + 1e-9
        assert not rows["M<=s"].regime_ok
        assert rows["M<=P"].regime_ok

    def test_aggregate_skips_missing(self):
        p = MixedExponent((1.5, 1.5))
        rows = {row.item: row for row in aggregate_equivalence([{"M<=P": None}, {"M<=P": 0.5}, {"M<=P": math.nan}], p)}
        assert rows["M<=P"].trials == 1
        assert rows["M<=P"].max_ratio == 0.5
        assert rows["M<=s"].regime_ok

    def test_aggregate_counts_violations(self):
        p = MixedExponent((2.0, 2.0))
        rows = {row.item: row for row in aggregate_equivalence([{"S<=Q": 1.5}, {"S<=Q": 0.9}], p)}
        assert rows["S<=Q"].violations == 1
        assert rows["S<=Q"].min_ratio == 0.9


class TestCertify:
    def test_valid_decomposition_certifies(self, martingale_2_2):
        dec = decompose_s(martingale_2_2, "2,2")
        assert check_decomposition(dec, martingale_2_2).certify().passed

    def test_wrong_target_raises(self, dyadic_2_2, martingale_2_2):
        dec = decompose_s(martingale_2_2, "2,2")
        other = sampled(dyadic_2_2, 99)
        with pytest.raises(CertificateError, match="reconstruction error"):
            check_decomposition(dec, other).certify()

    def test_davis_certify(self, martingale_2_2):
        result = davis_decompose(martingale_2_2, "2,2")
        assert result.certify() is result
        result.g_bound_ok = False
        with pytest.raises(CertificateError, match="g_bound_ok"):
            result.certify()


def test_reconstruct_every_level(dyadic_2_3, rng):
    f = random_martingale(dyadic_2_3, rng, centered=False)
    dec = decompose_envelope(f, "2,2", kind="Q")
    for n in range(dyadic_2_3.depth + 1):
        np.testing.assert_allclose(dec.reconstruct(n).values, f.level(n).values, atol=1e-9)
