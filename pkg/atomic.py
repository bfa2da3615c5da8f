"""
Atomic decompositions of centered martingales

Each decomposition picks stopping times tau_k from a controlling sequence
crossing 2^k, sets mu_k = 3 2^k ||chi_{tau_k < inf}||_p and
a^k = (f^{tau_{k+1}} - f^{tau_k}) / mu_k. On finite spaces only a finite
window of k carries mass, so reconstruction is exact.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config import settings
from errors import CertificateError, ConfigError, ExponentError, MeasurabilityError, RegularityError
from martingale import (
    AdaptedEnvelope,
    Martingale,
    StoppingTime,
    cond_exp_grid,
    first_passage,
    is_nondecreasing,
    stop,
)
from mixed_norm import MixedExponent, as_exponent, grid_norm
from operators import (
    cond_square_sequence,
    envelope_value,
    g_norm,
    hardy_norms,
    maximal_sequence,
    minimal_envelope,
    regular_square_bound,
    square_sequence,
)
from schemas import EquivalenceRow, ManifestRow
from space import ProductFilteredSpace, RandomVariable, regularity_constant

logger = logging.getLogger(__name__)


class AtomKind(str, Enum):
    s = "s"
    S = "S"
    M = "M"


def _operator_sequence(a: Martingale, kind: AtomKind) -> np.ndarray:
    if kind == AtomKind.s:
        return cond_square_sequence(a)
    if kind == AtomKind.S:
        return square_sequence(a)
    return maximal_sequence(a)


@dataclass(frozen=True, eq=False)
class Atom:
    kind: AtomKind
    martingale: Martingale
    tau: StoppingTime

    @property
    def terminal(self) -> RandomVariable:
        return self.martingale.terminal


@dataclass
class AtomDiagnostics:
    valid: bool
    messages: List[str] = field(default_factory=list)
    max_violation: float = 0.0


def validate_atom(atom: Atom, p: MixedExponent, tol: Optional[float] = None) -> AtomDiagnostics:
    tol = settings.TOLERANCE if tol is None else tol
    p = as_exponent(p)
    a = atom.martingale
    diag = AtomDiagnostics(valid=True)
    if a.is_zero():
        return diag

    levels = a.partial_sums
    for n in range(a.depth + 1):
        before = atom.tau.levels >= n
        worst = float(np.abs(levels[n][before]).max(initial=0.0))
        if worst > tol:
            diag.valid = False
            diag.max_violation = max(diag.max_violation, worst)
            diag.messages.append(f"condition 1 violated at n={n}")

    finite = atom.tau.finite_mask()
    op = _operator_sequence(a, atom.kind)[-1]
    bound_value = float(op[finite].max(initial=0.0))
    chi_norm = grid_norm(a.space, finite.astype(float), p)
    if chi_norm > 0:
        limit = 1.0 / chi_norm
        if bound_value > limit * (1 + tol) + tol:
            diag.valid = False
            diag.max_violation = max(diag.max_violation, bound_value - limit)
            diag.messages.append(f"condition 2 violated: {atom.kind.value}(a) = {bound_value!r} > {limit!r}")
    elif float(np.abs(op).max()) > tol:
        diag.valid = False
        diag.messages.append("condition 2 violated: atom lives outside {tau < inf}")
    return diag


@dataclass(frozen=True, eq=False)
class DecompositionTerm:
    k: int
    mu: float
    atom: Atom
    chi_norm: float


@dataclass(eq=False)
class AtomicDecomposition:
    space: ProductFilteredSpace
    kind: AtomKind
    p: MixedExponent
    t: float
    head: np.ndarray
    terms: List[DecompositionTerm]
    k_window: Tuple[int, int] = (0, -1)
    cover_ratios: Dict[int, float] = field(default_factory=dict)
    stopping_ratios: Dict[int, float] = field(default_factory=dict)

    @property
    def taus(self) -> List[StoppingTime]:
        return [term.atom.tau for term in self.terms]

    def reconstruct(self, n: int) -> RandomVariable:
        self.space.check_level(n)
        total = np.array(self.head, dtype=float)
        for term in self.terms:
            if term.mu > 0:
                total = total + term.mu * term.atom.martingale.partial_sums[n]
        return RandomVariable(self.space, total)

    def reconstruction_error(self, f: Martingale) -> float:
        self.space.require_same(f.space)
        return max(
            float(np.max(np.abs(f.partial_sums[n] - self.reconstruct(n).values)))
            for n in range(self.space.depth + 1)
        )

    def manifest(self) -> List[ManifestRow]:
        return [
            ManifestRow(
                k=term.k,
                mu=term.mu,
                chi_norm=term.chi_norm,
                atom_sup=float(np.abs(term.atom.martingale.partial_sums[-1]).max()),
            )
            for term in self.terms
        ]


def decomposition_norm(dec: AtomicDecomposition) -> float:
    """|| (sum_k (mu_k chi_k / ||chi_k||)^t)^(1/t) ||_p over the nonzero terms"""
    acc = np.zeros(dec.space.shape)
    any_term = False
    for term in dec.terms:
        if term.mu <= 0 or term.chi_norm <= 0:
            continue
        chi = term.atom.tau.finite_mask()
        acc = acc + (term.mu * chi / term.chi_norm) ** dec.t
        any_term = True
    if not any_term:
        return 0.0
    return grid_norm(dec.space, acc ** (1.0 / dec.t), dec.p)


def _check_t(p: MixedExponent, t: Optional[float], strict: bool) -> float:
    limit = min(1.0, p.min_entry)
    if t is None:
        return limit / 2 if strict else limit
    if not t > 0 or t > 1 or (strict and t >= limit):
        bound = f"< {limit:g}" if strict else "<= 1"
        raise ExponentError(f"aggregation exponent t must satisfy 0 < t {bound}, got {t!r}")
    return float(t)


def _check_finite(p: MixedExponent) -> MixedExponent:
    p = as_exponent(p)
    if not p.is_finite:
        raise ExponentError(f"decompositions need finite exponents, got {p}")
    return p


def k_window(sequence: np.ndarray) -> Optional[Tuple[int, int]]:
    """[floor(log2 min_+) - 1, ceil(log2 max)] over every level of the sequence"""
    positive = sequence[sequence > 0]
    if positive.size == 0:
        return None
    low = math.floor(math.log2(float(positive.min()))) - 1
    high = math.ceil(math.log2(float(sequence.max())))
    return low, high


def _assemble(
    f: Martingale,
    p: MixedExponent,
    t: float,
    kind: AtomKind,
    window: Optional[Tuple[int, int]],
    tau_for,
) -> AtomicDecomposition:
    space = f.space
    fc = f.centered()
    dec = AtomicDecomposition(space, kind, p, t, np.array(f.diffs[0]), [])
    if window is None:
        return dec
    low, high = window
    dec.k_window = window
    taus = {k: tau_for(k) for k in range(low, high + 2)}
    stopped = {k: stop(fc, tau) for k, tau in taus.items()}
    for k in range(low, high + 1):
        chi = taus[k].finite_mask()
        chi_norm = grid_norm(space, chi.astype(float), p)
        mu = 3.0 * 2.0 ** k * chi_norm
        if mu > 0:
            atom_mart = (stopped[k + 1] - stopped[k]).scaled(1.0 / mu)
        else:
            atom_mart = Martingale(space, np.zeros_like(fc.diffs), check=False)
        dec.terms.append(DecompositionTerm(k, mu, Atom(kind, atom_mart, taus[k]), chi_norm))
        logger.debug("k=%d mu=%.6g P(tau<inf)-norm=%.6g", k, mu, chi_norm)
    return dec


def decompose_s(f: Martingale, p: MixedExponent, t: Optional[float] = None) -> AtomicDecomposition:
    """tau_k = inf{n : s_{n+1}(f) > 2^k}"""
    p = _check_finite(p)
    t = _check_t(p, t, strict=False)
    fc = f.centered()
    s_seq = cond_square_sequence(fc)
    window = k_window(s_seq)
    return _assemble(
        f, p, t, AtomKind.s, window,
        lambda k: first_passage(s_seq, 2.0 ** k, space=f.space, offset=1),
    )


def decompose_envelope(f: Martingale, p: MixedExponent, t: Optional[float] = None, kind: str = "Q") -> AtomicDecomposition:
    """tau_k = inf{n : lambda_n > 2^k} for the minimal predictable envelope"""
    p = _check_finite(p)
    t = _check_t(p, t, strict=False)
    if kind not in ("P", "Q"):
        raise ConfigError(f"envelope kind must be 'P' or 'Q', got {kind!r}")
    lam = minimal_envelope(f.centered(), kind)
    window = k_window(lam.values)
    atom_kind = AtomKind.M if kind == "P" else AtomKind.S
    return _assemble(
        f, p, t, atom_kind, window,
        lambda k: first_passage(lam, 2.0 ** k, offset=0),
    )


def _cover_stopping_time(space: ProductFilteredSpace, rho: StoppingTime, witness: Dict[Tuple[int, int], int]):
    """
    tau(x) = inf{n : x in cover_{n+1}}, where cover_j is the union of the
    F_{j-1} parents of the F_j atoms inside {rho = j}. Returns tau and the
    largest P(cover_j) / P({rho = j}).
    """
    N = space.depth
    levels = np.full(space.shape, N + 1, dtype=np.int64)
    worst = 0.0
    for j in range(1, N + 1):
        hit = rho.level_mask(j)
        if not hit.any():
            continue
        atoms = np.unique(space.atom_labels[j][hit])
        parents = np.array([witness[(j, int(a))] for a in atoms])
        cover = np.isin(space.atom_labels[j - 1], parents)
        worst = max(worst, float(space.probs[cover].sum() / space.probs[hit].sum()))
        levels = np.where(cover, np.minimum(levels, j - 1), levels)
    return StoppingTime(space, levels), worst


def decompose_regular(
    f: Martingale,
    p: MixedExponent,
    t: Optional[float] = None,
    kind: str = "M",
    max_regularity: Optional[float] = None,
) -> AtomicDecomposition:
    """Stopping times built from regular covers of {rho_k = j}, rho_k crossing |f_n| or S_n(f)"""
    p = _check_finite(p)
    t = _check_t(p, t, strict=True)
    if kind not in ("M", "S"):
        raise ConfigError(f"regular decomposition kind must be 'M' or 'S', got {kind!r}")
    space = f.space
    report = regularity_constant(space)
    if max_regularity is not None and report.constant > max_regularity:
        raise RegularityError(f"regularity constant {report.constant:g} exceeds {max_regularity:g}")

    fc = f.centered()
    control = np.abs(fc.partial_sums) if kind == "M" else square_sequence(fc)
    window = k_window(control)
    rhos: Dict[int, StoppingTime] = {}
    cover_ratios: Dict[int, float] = {}

    def tau_for(k: int) -> StoppingTime:
        rho = first_passage(control, 2.0 ** k, space=space, offset=0)
        rhos[k] = rho
        tau, ratio = _cover_stopping_time(space, rho, report.witness)
        cover_ratios[k] = ratio
        return tau

    dec = _assemble(f, p, t, AtomKind(kind), window, tau_for)
    dec.cover_ratios = {term.k: cover_ratios[term.k] for term in dec.terms}
    for term in dec.terms:
        rho_norm = grid_norm(space, rhos[term.k].finite_mask().astype(float), p)
        if rho_norm > 0:
            dec.stopping_ratios[term.k] = term.chi_norm / rho_norm
        elif term.chi_norm > 0:
            dec.stopping_ratios[term.k] = math.inf
    bad = {k: r for k, r in dec.cover_ratios.items() if r > report.constant * (1 + settings.TOLERANCE)}
    if bad:
        raise CertificateError(f"cover ratios above R = {report.constant:g}: {bad}")
    return dec


def envelope_from_decomposition(dec: AtomicDecomposition) -> AdaptedEnvelope:
    """lambda_n = sum_k mu_k chi_{tau_k <= n} ||op(a^k)||_inf"""
    N = dec.space.depth
    lam = np.zeros((N + 1,) + dec.space.shape)
    n_axis = np.arange(N + 1).reshape((-1,) + (1,) * dec.space.dim)
    for term in dec.terms:
        if term.mu <= 0:
            continue
        sup = float(_operator_sequence(term.atom.martingale, dec.kind)[-1].max())
        lam = lam + term.mu * sup * (term.atom.tau.levels[None, ...] <= n_axis)
    return AdaptedEnvelope(dec.space, lam, check=False)


@dataclass
class DecompositionCheck:
    reconstruction_error: float
    atoms_valid: bool
    taus_monotone: bool
    messages: List[str]

    @property
    def passed(self) -> bool:
        return self.atoms_valid and self.taus_monotone and self.reconstruction_error < settings.TOLERANCE

    def certify(self) -> "DecompositionCheck":
        if not self.passed:
            raise CertificateError("; ".join(self.messages) or f"reconstruction error {self.reconstruction_error:.3g}")
        return self


def check_decomposition(dec: AtomicDecomposition, f: Martingale) -> DecompositionCheck:
    messages = []
    valid = True
    for term in dec.terms:
        diag = validate_atom(term.atom, dec.p)
        if not diag.valid:
            valid = False
            messages.extend(f"k={term.k}: {m}" for m in diag.messages)
    monotone = is_nondecreasing(dec.taus)
    if not monotone:
        messages.append("stopping times are not nondecreasing in k")
    error = dec.reconstruction_error(f)
    if error >= settings.TOLERANCE:
        messages.append(f"reconstruction error {error!r}")
    return DecompositionCheck(error, valid, monotone, messages)


def level_sets_match(dec: AtomicDecomposition, f: Martingale) -> bool:
    """{tau_k < inf} = {s(f) > 2^k} for every k of an s-decomposition"""
    s = cond_square_sequence(f.centered())[-1]
    return all(np.array_equal(term.atom.tau.finite_mask(), s > 2.0 ** term.k) for term in dec.terms)


# Davis splitting

@dataclass(eq=False)
class DavisResult:
    h: Martingale
    g: Martingale
    envelope: AdaptedEnvelope
    large_jump_ok: bool
    small_jump_ok: bool
    g_bound_ok: bool
    h_variation: float
    g_envelope: float

    @property
    def certified(self) -> bool:
        return self.large_jump_ok and self.small_jump_ok and self.g_bound_ok

    def certify(self) -> "DavisResult":
        failed = [name for name in ("large_jump_ok", "small_jump_ok", "g_bound_ok") if not getattr(self, name)]
        if failed:
            raise CertificateError(f"Davis splitting bounds failed: {', '.join(failed)}")
        return self


def davis_decompose(
    f: Martingale,
    p: MixedExponent,
    lam: Optional[AdaptedEnvelope] = None,
    kind: str = "S",
) -> DavisResult:
    """
    f = h + g where h carries the differences on {lambda_k > 2 lambda_{k-1}}
    minus their compensator. The head of f stays with g.
    """
    p = as_exponent(p)
    if kind not in ("S", "M"):
        raise ConfigError(f"Davis kind must be 'S' or 'M', got {kind!r}")
    space = f.space
    fc = f.centered()
    controlled = square_sequence(fc) if kind == "S" else maximal_sequence(fc)
    if lam is None:
        lam = AdaptedEnvelope(space, controlled, check=False)
    lam.validate(dominates=controlled, lag=0)
    if np.any(lam.values[0] != 0):
        raise MeasurabilityError("Davis envelope must start at lambda_0 = 0")

    tol = settings.TOLERANCE
    factor = 2.0 if kind == "S" else 4.0
    values = lam.values
    N = f.depth
    h_diffs = np.zeros_like(fc.diffs)
    g_diffs = np.zeros_like(fc.diffs)
    g_diffs[0] = f.diffs[0]
    large_ok = small_ok = g_ok = True
    for k in range(1, N + 1):
        d = fc.diffs[k]
        jump = values[k] > 2 * values[k - 1]
        big = d * jump
        h_diffs[k] = big - cond_exp_grid(space, big, k - 1)
        g_diffs[k] = d - h_diffs[k]
        large_ok &= bool(np.all(np.abs(big) <= factor * (values[k] - values[k - 1]) + tol))
        small_ok &= bool(np.all(np.abs(d * ~jump) <= factor * values[k - 1] + tol))
        g_ok &= bool(np.all(np.abs(g_diffs[k]) <= 2 * factor * values[k - 1] + tol))

    h = Martingale(space, h_diffs, check=False)
    g = Martingale(space, g_diffs, check=False)
    result = DavisResult(
        h=h,
        g=g,
        envelope=lam,
        large_jump_ok=large_ok,
        small_jump_ok=small_ok,
        g_bound_ok=g_ok,
        h_variation=g_norm(h, p),
        g_envelope=envelope_value(g, p, "Q" if kind == "S" else "P"),
    )
    if not result.certified:
        logger.warning("Davis certificates failed: large=%s small=%s g=%s", large_ok, small_ok, g_ok)
    return result


# Norm equivalences

EQUIVALENCE_ITEMS = [
    # item, lhs, rhs, exact, regime
    ("M<=s", "maximal", "cond_square", False, "below_two"),
    ("S<=s", "square", "cond_square", False, "below_two"),
    ("M<=P", "maximal", "p_envelope", True, "any"),
    ("S<=Q", "square", "q_envelope", True, "any"),
    ("S<=P", "square", "p_envelope", False, "any"),
    ("M<=Q", "maximal", "q_envelope", False, "any"),
    ("P<=Q", "p_envelope", "q_envelope", False, "any"),
    ("Q<=P", "q_envelope", "p_envelope", False, "any"),
    ("s<=P", "cond_square", "p_envelope", False, "any"),
    ("s<=Q", "cond_square", "q_envelope", False, "any"),
    ("s<=S", "cond_square", "square", False, "above_two"),
    ("S<=s_regular", "square", "cond_square", False, "regular"),
    ("S<=sqrtR*s", "square", "cond_square", True, "regular"),
]


def _regime_ok(regime: str, p: MixedExponent) -> bool:
    if not p.is_finite:
        return False
    if regime == "below_two":
        return p.max_entry < 2
    if regime == "above_two":
        return p.min_entry > 2
    return True


def _ratio(lhs: float, rhs: float) -> Optional[float]:
    if rhs > 0:
        return lhs / rhs
    return None if lhs <= settings.TOLERANCE else math.inf


def equivalence_ratios(f: Martingale, p: MixedExponent, regularity: Optional[float] = None) -> Dict[str, Optional[float]]:
    """Ratio lhs/rhs per item; pointwise S_n / (sqrt(R) s_n) for the regular certificate"""
    p = as_exponent(p)
    report = hardy_norms(f, p).model_dump()
    if regularity is None:
        regularity = regularity_constant(f.space).constant
    out: Dict[str, Optional[float]] = {}
    for item, lhs, rhs, _, _ in EQUIVALENCE_ITEMS:
        if item == "S<=sqrtR*s":
            if f.is_zero():
                out[item] = None
            else:
                _, ratio = regular_square_bound(f, regularity)
                out[item] = ratio
        else:
            out[item] = _ratio(report[lhs], report[rhs])
    return out


def equivalence_report(samples: Sequence[Martingale], p: MixedExponent) -> List[EquivalenceRow]:
    p = as_exponent(p)
    if not samples:
        return []
    R = regularity_constant(samples[0].space).constant
    return aggregate_equivalence((equivalence_ratios(f, p, R) for f in samples), p)


def aggregate_equivalence(ratios: Iterable[Dict[str, Optional[float]]], p: MixedExponent) -> List[EquivalenceRow]:
    """Commutative max/min reduction of per-sample ratios; None or NaN entries are skipped"""
    p = as_exponent(p)
    rows = {
        item: EquivalenceRow(item=item, lhs=lhs, rhs=rhs, exact=exact, regime_ok=_regime_ok(regime, p))
        for item, lhs, rhs, exact, regime in EQUIVALENCE_ITEMS
    }
    for sample in ratios:
        for item, ratio in sample.items():
            if ratio is None or math.isnan(ratio):
                continue
            row = rows[item]
            row.trials += 1
            row.max_ratio = max(row.max_ratio, ratio)
            row.min_ratio = min(row.min_ratio, ratio)
            if row.exact and ratio > 1 + settings.TOLERANCE:
                row.violations += 1
    for row in rows.values():
        if row.violations:
            logger.warning("%s violated %d times (max ratio %.6g)", row.item, row.violations, row.max_ratio)
    return list(rows.values())
