"""
Mixed Lebesgue quasi-norms on finite product spaces

The norm is iterated from the first coordinate (innermost) to the last
(outermost). Infinite entries are exact maxima since every point carries
positive weight.
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterator, Sequence, Tuple, Union

import numpy as np

from config import settings
from errors import DimensionMismatch, ExponentError, SpaceError
from schemas import parse_exponent_entry
from space import ProductFilteredSpace, RandomVariable

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MixedExponent:
    """Exponent vector with entries in (0, inf]"""

    entries: Tuple[float, ...]

    def __post_init__(self):
        entries = tuple(float(e) for e in self.entries)
        if not entries:
            raise ExponentError("exponent vector must not be empty")
        for e in entries:
            if math.isnan(e) or not e > 0:
                raise ExponentError(f"exponent entries must be > 0, got {e!r}")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def parse(cls, text: str) -> "MixedExponent":
        try:
            return cls(tuple(parse_exponent_entry(part) for part in text.split(",")))
        except ValueError as e:
            raise ExponentError(f"cannot parse exponent {text!r}: {e}") from e

    @classmethod
    def uniform(cls, p: float, d: int) -> "MixedExponent":
        return cls((float(p),) * d)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[float]:
        return iter(self.entries)

    def __getitem__(self, i: int) -> float:
        return self.entries[i]

    def __str__(self) -> str:
        return ",".join("inf" if math.isinf(e) else f"{e:g}" for e in self.entries)

    @property
    def min_entry(self) -> float:
        return min(self.entries)

    @property
    def max_entry(self) -> float:
        return max(self.entries)

    @property
    def is_finite(self) -> bool:
        return all(math.isfinite(e) for e in self.entries)

    def conjugate(self) -> "MixedExponent":
        if self.min_entry < 1:
            raise ExponentError(f"conjugate exponent needs every entry >= 1, got {self}")
        out = []
        for e in self.entries:
            if e == 1:
                out.append(math.inf)
            elif math.isinf(e):
                out.append(1.0)
            else:
                out.append(e / (e - 1))
        return MixedExponent(tuple(out))

    def divide(self, alpha: float) -> "MixedExponent":
        if not alpha > 0:
            raise ExponentError(f"divisor must be > 0, got {alpha!r}")
        return MixedExponent(tuple(e / alpha for e in self.entries))


class Weight:
    """Strictly positive random variable used as a density against P"""

    __slots__ = ("variable",)

    def __init__(self, variable: RandomVariable):
        if variable.values.min() <= 0:
            raise SpaceError("weights must be strictly positive")
        self.variable = variable

    @property
    def space(self) -> ProductFilteredSpace:
        return self.variable.space

    @property
    def values(self) -> np.ndarray:
        return self.variable.values


def as_exponent(p: Union[MixedExponent, str, Sequence[float]]) -> MixedExponent:
    if isinstance(p, MixedExponent):
        return p
    if isinstance(p, str):
        return MixedExponent.parse(p)
    return MixedExponent(tuple(p))


def _reduce_axis(values: np.ndarray, weights: np.ndarray, p: float) -> np.ndarray:
    if math.isinf(p):
        return values.max(axis=0)
    # scale by the slice maximum so large exponents do not overflow
    top = values.max(axis=0)
    safe = np.where(top > 0, top, 1.0)
    scaled = np.tensordot(weights, (values / safe) ** p, axes=([0], [0]))
    return scaled ** (1.0 / p) * top


def grid_norm(space: ProductFilteredSpace, values: np.ndarray, p: MixedExponent) -> float:
    """Mixed norm of a raw value grid living on space"""
    if len(p) != space.dim:
        raise DimensionMismatch(f"exponent {p} has {len(p)} entries, space has {space.dim} coordinates")
    current = np.abs(np.asarray(values, dtype=float))
    for coord, e in zip(space.coords, p):
        current = _reduce_axis(current, coord.probs, e)
    return float(current)


def partial_norms(space: ProductFilteredSpace, values: np.ndarray, p: MixedExponent):
    """Intermediate grids F_0 = |f|, F_k = norm over the first k coordinates"""
    current = np.abs(np.asarray(values, dtype=float))
    out = [current]
    for coord, e in zip(space.coords, p):
        current = _reduce_axis(current, coord.probs, e)
        out.append(current)
    return out


def mixed_norm(f: RandomVariable, p: Union[MixedExponent, str, Sequence[float]]) -> float:
    return grid_norm(f.space, f.values, as_exponent(p))


def pairing(f: RandomVariable, g: RandomVariable) -> float:
    f.space.require_same(g.space)
    return float(np.sum(f.values * g.values * f.space.probs))


def holder_check(f: RandomVariable, g: RandomVariable, p: MixedExponent) -> Tuple[float, float, float]:
    """Returns (|E fg|, ||fg||_1, ||f||_p ||g||_p') for the Holder chain"""
    p = as_exponent(p)
    q = p.conjugate()
    ones = MixedExponent.uniform(1.0, f.space.dim)
    return abs(pairing(f, g)), mixed_norm(f * g, ones), mixed_norm(f, p) * mixed_norm(g, q)


def dual_extremal(f: RandomVariable, p: Union[MixedExponent, str, Sequence[float]]) -> RandomVariable:
    """
    Norming function for f in the dual exponent.

    With F_k the norm of |f| over the first k coordinates, the factor for a
    finite coordinate is (F_{k-1}/F_k)^(p_k - 1) and for an infinite one a unit
    mass on the lowest maximizing slice divided by its weight. The product of
    factors times sign(f) pairs with f to give F_d.
    """
    p = as_exponent(p)
    space = f.space
    if len(p) != space.dim:
        raise DimensionMismatch(f"exponent {p} has {len(p)} entries, space has {space.dim} coordinates")
    if p.min_entry < 1:
        raise ExponentError(f"duality needs every entry >= 1, got {p}")
    if not np.any(f.values):
        return RandomVariable(space, np.zeros(space.shape))

    layers = partial_norms(space, f.values, p)
    g = np.sign(f.values)
    for k, (coord, e) in enumerate(zip(space.coords, p)):
        prev, cur = layers[k], layers[k + 1]
        if math.isinf(e):
            arg = np.argmax(prev, axis=0)
            hit = np.arange(coord.size).reshape((-1,) + (1,) * arg.ndim) == arg[None, ...]
            factor = hit / coord.probs.reshape((-1,) + (1,) * arg.ndim)
        else:
            safe = np.where(cur > 0, cur, 1.0)
            factor = np.where(cur[None, ...] > 0, (prev / safe[None, ...]) ** (e - 1.0), 0.0)
        # factor is indexed by coordinates k+1..d; broadcast over the inner ones
        g = g * factor.reshape((1,) * k + factor.shape)
    logger.debug("dual extremal for exponent %s built", p)
    return RandomVariable(space, g)


def weighted_norm(f: RandomVariable, r: float, w: Weight) -> float:
    if not (r > 0 and math.isfinite(r)):
        raise ExponentError(f"weighted norm exponent must be finite and > 0, got {r!r}")
    f.space.require_same(w.space)
    return float(np.sum(np.abs(f.values) ** r * w.values * f.space.probs) ** (1.0 / r))


def quasi_triangle_power(p: MixedExponent) -> float:
    return min(1.0, as_exponent(p).min_entry)


def triangle_holds(f: RandomVariable, g: RandomVariable, p: MixedExponent, tol: float = None) -> bool:
    """||f+g||^t <= ||f||^t + ||g||^t with t = min(1, p_min)"""
    tol = settings.TOLERANCE if tol is None else tol
    p = as_exponent(p)
    t = quasi_triangle_power(p)
    return mixed_norm(f + g, p) ** t <= mixed_norm(f, p) ** t + mixed_norm(g, p) ** t + tol
