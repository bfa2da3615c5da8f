"""
Maximal, square and conditional square functions, coordinate maximal
operators, Hardy quasi-norms with exact envelope infima, martingale
transforms and the weighted weak-type and vector inequalities.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import settings
from errors import ConfigError, DimensionMismatch, ExponentError, MeasurabilityError, SpaceError
from martingale import (
    AdaptedEnvelope,
    Martingale,
    cond_exp_grid,
    from_terminal,
)
from mixed_norm import MixedExponent, Weight, as_exponent, grid_norm, mixed_norm
from schemas import CounterexampleReport, HardyNormReport
from space import ProductFilteredSpace, RandomVariable, make_dyadic_space, make_shell_space

logger = logging.getLogger(__name__)


# Pointwise sequences, stacked along axis 0 as levels 0..N

def maximal_sequence(f: Martingale) -> np.ndarray:
    return np.maximum.accumulate(np.abs(f.partial_sums), axis=0)


def square_sequence(f: Martingale) -> np.ndarray:
    return np.sqrt(np.cumsum(f.diffs ** 2, axis=0))


def cond_square_sequence(f: Martingale) -> np.ndarray:
    """s_0, ..., s_N where s_n uses E_{m-1}|d_m|^2 for 1 <= m <= n and |d_0|^2"""
    space = f.space
    terms = np.empty_like(f.diffs)
    terms[0] = f.diffs[0] ** 2
    for n in range(1, f.depth + 1):
        terms[n] = cond_exp_grid(space, f.diffs[n] ** 2, n - 1)
    return np.sqrt(np.cumsum(terms, axis=0))


def _upto(f: Martingale, upto: Optional[int]) -> int:
    return f.depth if upto is None else f.space.check_level(upto)


def maximal(f: Martingale, upto: Optional[int] = None) -> RandomVariable:
    return RandomVariable(f.space, maximal_sequence(f)[_upto(f, upto)])


def square_function(f: Martingale, upto: Optional[int] = None) -> RandomVariable:
    return RandomVariable(f.space, square_sequence(f)[_upto(f, upto)])


def cond_square_function(f: Martingale, upto: Optional[int] = None) -> RandomVariable:
    return RandomVariable(f.space, cond_square_sequence(f)[_upto(f, upto)])


def variation(f: Martingale) -> RandomVariable:
    return RandomVariable(f.space, np.abs(f.diffs).sum(axis=0))


# Coordinate maximal operators

def coord_maximal(g: RandomVariable, k: int) -> RandomVariable:
    space = g.space
    space.check_coordinate(k)
    out = np.zeros(space.shape)
    for m in range(space.depth + 1):
        out = np.maximum(out, np.abs(space.average_along(g.values, k, m)))
    return RandomVariable(space, out)


def composed_maximal(g: RandomVariable) -> RandomVariable:
    """M_d composed down to M_1"""
    out = g
    for k in range(1, g.space.dim + 1):
        out = coord_maximal(out, k)
    return out


def maximal_le_composed(g: RandomVariable, tol: Optional[float] = None) -> Tuple[bool, float]:
    """Pointwise M(E_n g) <= composed maximal of g; returns (holds, worst excess)"""
    tol = settings.TOLERANCE if tol is None else tol
    excess = float(np.max(maximal(from_terminal(g)).values - composed_maximal(g).values))
    return excess <= tol, excess


# Envelopes and Hardy norms

def _envelope_target(f: Martingale, kind: str) -> np.ndarray:
    if kind == "P":
        return np.abs(f.partial_sums)
    if kind == "Q":
        return square_sequence(f)
    raise ConfigError(f"envelope kind must be 'P' or 'Q', got {kind!r}")


def minimal_envelope(f: Martingale, kind: str) -> AdaptedEnvelope:
    """
    Pointwise smallest lambda in Lambda with X_{n+1} <= lambda_n, where X is
    |f_n| for P and S_n(f) for Q. Built as the running max of the F_n-atom
    maxima of X_{n+1}, with X_{N+1} = X_N.
    """
    space = f.space
    target = _envelope_target(f, kind)
    N = f.depth
    lam = np.empty_like(target)
    for n in range(N + 1):
        lam[n] = space.atom_reduce(target[min(n + 1, N)], n, "max")
    lam = np.maximum.accumulate(lam, axis=0)
    return AdaptedEnvelope(space, lam, check=False)


def envelope_value(f: Martingale, p: MixedExponent, kind: str) -> float:
    return grid_norm(f.space, minimal_envelope(f, kind).values[-1], as_exponent(p))


def brute_force_envelope_value(f: Martingale, p: MixedExponent, kind: str) -> float:
    """
    Exhaustive minimum of ||lambda_N||_p over adapted nondecreasing envelopes
    dominating X_{n+1} whose values are drawn from the attained values of X.
    """
    p = as_exponent(p)
    space = f.space
    N = f.depth
    target = _envelope_target(f, kind)
    candidates = np.unique(np.concatenate([[0.0], target.ravel()]))
    atom_labels = [space.atom_labels[n] for n in range(N + 1)]
    lower = [space.atom_reduce(target[min(n + 1, N)], n, "max") for n in range(N + 1)]
    budget = settings.MAX_ENVELOPE_CANDIDATES
    visited = 0
    best = math.inf

    def options(n: int, previous: np.ndarray) -> List[np.ndarray]:
        floor = np.maximum(lower[n], previous)
        count = space.atom_probs[n].size
        per_atom = []
        for a in range(count):
            mask = atom_labels[n] == a
            need = float(floor[mask].max())
            per_atom.append(candidates[candidates >= need - settings.TOLERANCE])
        return per_atom

    def search(n: int, previous: np.ndarray) -> None:
        nonlocal visited, best
        per_atom = options(n, previous)
        if n == N:
            # norm is monotone in lambda_N: least admissible value per atom
            visited += 1
            lam = np.array([values[0] for values in per_atom])[atom_labels[n]]
            best = min(best, grid_norm(space, lam, p))
            return
        for choice in itertools.product(*per_atom):
            visited += 1
            if visited > budget:
                raise SpaceError(f"envelope search exceeds {budget} candidates")
            search(n + 1, np.asarray(choice)[atom_labels[n]])

    search(0, np.zeros(space.shape))
    logger.debug("brute-force envelope search visited %d candidates", visited)
    return best


def g_norm(f: Martingale, p: MixedExponent) -> float:
    return mixed_norm(variation(f), p)


def hardy_norms(f: Martingale, p: MixedExponent) -> HardyNormReport:
    p = as_exponent(p)
    if len(p) != f.space.dim:
        raise DimensionMismatch(f"exponent {p} has {len(p)} entries, space has {f.space.dim} coordinates")
    space = f.space
    return HardyNormReport(
        maximal=grid_norm(space, maximal_sequence(f)[-1], p),
        square=grid_norm(space, square_sequence(f)[-1], p),
        cond_square=grid_norm(space, cond_square_sequence(f)[-1], p),
        p_envelope=envelope_value(f, p, "P"),
        q_envelope=envelope_value(f, p, "Q"),
        variation=g_norm(f, p),
    )


def regular_square_bound(f: Martingale, R: float, tol: Optional[float] = None) -> Tuple[bool, float]:
    """
    Certificate S_n(f) <= sqrt(R) s_n(f) for every n on a space with
    regularity constant R. Returns (holds, max of S_n / (sqrt(R) s_n)).
    """
    tol = settings.TOLERANCE if tol is None else tol
    big = square_sequence(f)
    small = np.sqrt(R) * cond_square_sequence(f)
    holds = bool(np.all(big <= small + tol))
    ratio = np.where(small > 0, big / np.where(small > 0, small, 1.0), np.where(big > tol, np.inf, 0.0))
    return holds, float(ratio.max())


# Exponent classes

def doob_ceiling(p: MixedExponent) -> float:
    ceiling = 1.0
    for e in as_exponent(p):
        if math.isinf(e):
            continue
        if e <= 1:
            return math.inf
        ceiling *= e / (e - 1)
    return ceiling


def exponent_regime(p: MixedExponent) -> str:
    """interior, leading_infinite, leading_ones or outside"""
    entries = list(as_exponent(p))

    def interior(rest):
        return all(1 < e < math.inf for e in rest)

    if interior(entries):
        return "interior"
    lead = 0
    while lead < len(entries) and math.isinf(entries[lead]):
        lead += 1
    if lead and interior(entries[lead:]):
        return "leading_infinite"
    lead = 0
    while lead < len(entries) and entries[lead] == 1:
        lead += 1
    if lead and interior(entries[lead:]):
        return "leading_ones"
    return "outside"


# Martingale transforms

@dataclass(frozen=True, eq=False)
class TransformMultipliers:
    """b_0, ..., b_{N-1} with b_k F_k-measurable and |b_k| <= 1"""

    space: ProductFilteredSpace
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        N = self.space.depth
        if values.shape != (N,) + self.space.shape:
            raise DimensionMismatch(f"multipliers have shape {values.shape}, expected {(N,) + self.space.shape}")
        if np.any(np.abs(values) > 1 + settings.TOLERANCE):
            raise MeasurabilityError("multipliers must satisfy |b_k| <= 1")
        for k in range(N):
            if not self.space.is_measurable(values[k], k):
                raise MeasurabilityError(f"multiplier b_{k} is not F_{k}-measurable")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, space: ProductFilteredSpace, c: float) -> "TransformMultipliers":
        return cls(space, np.full((space.depth,) + space.shape, float(c)))

    @classmethod
    def random_signs(cls, space: ProductFilteredSpace, rng: np.random.Generator) -> "TransformMultipliers":
        values = []
        for k in range(space.depth):
            signs = rng.choice([-1.0, 1.0], size=space.atom_probs[k].size)
            values.append(signs[space.atom_labels[k]])
        return cls(space, np.stack(values))


def martingale_transform(f: Martingale, b: TransformMultipliers) -> Martingale:
    f.space.require_same(b.space)
    diffs = np.zeros_like(f.diffs)
    diffs[1:] = b.values * f.diffs[1:]
    return Martingale(f.space, diffs, check=False)


def transform_dominated(f: Martingale, Tf: Martingale, tol: Optional[float] = None) -> bool:
    """S(Tf) <= S(f) pointwise"""
    tol = settings.TOLERANCE if tol is None else tol
    return bool(np.all(square_sequence(Tf)[-1] <= square_sequence(f)[-1] + tol))


# Inequalities

def vector_inequality_ratio(fs: Sequence[RandomVariable], p: MixedExponent) -> float:
    """||sum_n E_n f_n||_p / ||sum_n f_n||_p for nonnegative f_n"""
    p = as_exponent(p)
    if not fs:
        raise DimensionMismatch("need at least one function")
    space = fs[0].space
    if len(fs) != space.depth + 1:
        raise DimensionMismatch(f"need {space.depth + 1} functions, one per level, got {len(fs)}")
    total = np.zeros(space.shape)
    projected = np.zeros(space.shape)
    for n, g in enumerate(fs):
        space.require_same(g.space)
        if g.values.min() < 0:
            raise SpaceError("vector inequality needs nonnegative functions")
        total += g.values
        projected += cond_exp_grid(space, g.values, n)
    numerator = grid_norm(space, projected, p)
    denominator = grid_norm(space, total, p)
    if denominator == 0:
        return 0.0 if numerator == 0 else math.inf
    return numerator / denominator


@dataclass(frozen=True)
class WeakTypeCheck:
    threshold: float
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + settings.TOLERANCE

    @property
    def ratio(self) -> float:
        if self.rhs > 0:
            return self.lhs / self.rhs
        return 0.0 if self.lhs == 0 else math.inf


def weighted_weak_type_check(g: RandomVariable, phi: Weight, rho: float) -> WeakTypeCheck:
    """rho * phi({Mf > rho}) against the integral of |g| M(phi)"""
    if not rho > 0:
        raise ExponentError(f"threshold must be > 0, got {rho!r}")
    g.space.require_same(phi.space)
    space = g.space
    Mf = maximal_sequence(from_terminal(g))[-1]
    Mphi = maximal_sequence(from_terminal(phi.variable))[-1]
    lhs = rho * float(np.sum(phi.values * space.probs * (Mf > rho)))
    rhs = float(np.sum(np.abs(g.values) * Mphi * space.probs))
    return WeakTypeCheck(float(rho), lhs, rhs)


# Divergence of the maximal operator on L_(p, inf)

def _shell_index(points: np.ndarray, n: int) -> np.ndarray:
    """k with x in [2^-k, 2^-k+1) for 1 <= k <= n, 0 for x < 2^-n"""
    k = np.zeros(points.shape, dtype=np.int64)
    for j in range(1, n + 1):
        k[(points >= 2.0 ** -j) & (points < 2.0 ** (1 - j))] = j
    return k


def divergence_function(space: ProductFilteredSpace, n: int, p: float) -> RandomVariable:
    """sum_k 2^(k/p) chi of the k-th diagonal shell square"""
    x = np.asarray(space.point_labels(1), dtype=float)
    y = np.asarray(space.point_labels(2), dtype=float)
    kx, ky = _shell_index(x, n), _shell_index(y, n)
    same = (kx[:, None] == ky[None, :]) & (kx[:, None] > 0)
    return RandomVariable(space, np.where(same, 2.0 ** (kx[:, None] / p), 0.0))


def doob_counterexample(n: int, p: float, N: Optional[int] = None) -> CounterexampleReport:
    """
    Evaluates the shell-diagonal function on [0,1)^2 with exponent (p, inf).

    Without N the computation runs on the product of shell spaces, which
    carries the same conditional expectations as any dyadic grid of depth
    N >= n for this function. With N it runs on the dyadic grid itself.
    """
    if n < 1:
        raise SpaceError("counterexample needs n >= 1")
    if not p > 1:
        raise ExponentError(f"counterexample needs p > 1, got {p!r}")
    if N is None:
        space = make_shell_space(2, n)
        depth = n
    else:
        if N < n:
            raise SpaceError(f"dyadic depth {N} is smaller than n = {n}")
        space = make_dyadic_space(2, N)
        depth = N
    exponent = MixedExponent((p, math.inf))
    f = divergence_function(space, n, p)
    Mf = maximal_sequence(from_terminal(f))[-1]

    y = np.asarray(space.point_labels(2), dtype=float)
    bottom = y < 2.0 ** -n
    inner = np.tensordot(space.coords[0].probs, Mf ** p, axes=([0], [0]))
    inner_min = float(inner[bottom].min())
    lower = n / 4.0 ** p
    norm_f = mixed_norm(f, exponent)
    report = CounterexampleReport(
        n=n,
        p=p,
        depth=depth,
        norm_f=norm_f,
        norm_Mf=grid_norm(space, Mf, exponent),
        inner_integral_min=inner_min,
        lower_bound=lower,
        certified=abs(norm_f - 1.0) <= settings.TOLERANCE and inner_min >= lower - settings.TOLERANCE,
    )
    logger.debug("counterexample n=%d p=%g: |Mf| = %.6g", n, p, report.norm_Mf)
    return report
