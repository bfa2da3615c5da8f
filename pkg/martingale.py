"""
Martingales, conditional expectations and stopping times on finite product spaces
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from config import settings
from errors import ConfigError, DimensionMismatch, MartingaleError, MeasurabilityError
import schemas
from space import ProductFilteredSpace, RandomVariable, space_from_description, space_to_description

logger = logging.getLogger(__name__)


def cond_exp(g: RandomVariable, n: int) -> RandomVariable:
    """E_n g: atom averages over the atoms of F_n"""
    return RandomVariable(g.space, cond_exp_grid(g.space, g.values, n))


def cond_exp_grid(space: ProductFilteredSpace, values: np.ndarray, n: int) -> np.ndarray:
    space.check_level(n)
    if n == space.depth:
        return np.array(values, dtype=float)
    label = space.atom_labels[n].ravel()
    sums = np.bincount(label, weights=(np.asarray(values) * space.probs).ravel(), minlength=space.atom_probs[n].size)
    return (sums / space.atom_probs[n])[label].reshape(space.shape)


def partial_cond_exp(g: RandomVariable, k: int, m: int) -> RandomVariable:
    """Average over the level-m cell of coordinate k, other coordinates held fixed"""
    return RandomVariable(g.space, g.space.average_along(g.values, k, m))


def _check_sequence(space: ProductFilteredSpace, values: np.ndarray, name: str) -> np.ndarray:
    values = np.array(values, dtype=float)
    if values.shape != (space.depth + 1,) + space.shape:
        raise DimensionMismatch(f"{name} has shape {values.shape}, expected {(space.depth + 1,) + space.shape}")
    if not np.all(np.isfinite(values)):
        raise MartingaleError(f"{name} contains non-finite values")
    values.setflags(write=False)
    return values


class Martingale:
    """
    Martingale stored by its differences d_0, ..., d_N.

    d_0 is the F_0-measurable head f_0; centered martingales have d_0 = 0.
    """

    __slots__ = ("space", "diffs", "_sums")

    def __init__(self, space: ProductFilteredSpace, diffs, check: bool = True, tol: Optional[float] = None):
        self.space = space
        self.diffs = _check_sequence(space, diffs, "difference sequence")
        self._sums = None
        if check:
            self.validate(tol)

    @classmethod
    def from_differences(cls, space: ProductFilteredSpace, diffs, check: bool = True) -> "Martingale":
        return cls(space, diffs, check=check)

    def validate(self, tol: Optional[float] = None) -> None:
        tol = settings.TOLERANCE if tol is None else tol
        scale = max(1.0, float(np.abs(self.diffs).max(initial=0.0)))
        for n in range(self.space.depth + 1):
            if not self.space.is_measurable(self.diffs[n], n, tol * scale):
                raise MartingaleError(f"difference d_{n} is not F_{n}-measurable")
            if n >= 1:
                drift = cond_exp_grid(self.space, self.diffs[n], n - 1)
                if np.max(np.abs(drift)) > tol * scale:
                    raise MartingaleError(f"E_{n - 1} d_{n} = {np.max(np.abs(drift))!r}, expected 0")

    @property
    def depth(self) -> int:
        return self.space.depth

    @property
    def partial_sums(self) -> np.ndarray:
        """Array of f_0, ..., f_N stacked along axis 0"""
        if self._sums is None:
            sums = np.cumsum(self.diffs, axis=0)
            sums.setflags(write=False)
            self._sums = sums
        return self._sums

    def level(self, n: int) -> RandomVariable:
        return RandomVariable(self.space, self.partial_sums[self.space.check_level(n)])

    def difference(self, n: int) -> RandomVariable:
        return RandomVariable(self.space, self.diffs[self.space.check_level(n)])

    @property
    def terminal(self) -> RandomVariable:
        return self.level(self.depth)

    @property
    def head(self) -> RandomVariable:
        return self.difference(0)

    def centered(self) -> "Martingale":
        diffs = np.array(self.diffs)
        diffs[0] = 0.0
        return Martingale(self.space, diffs, check=False)

    def scaled(self, c: float) -> "Martingale":
        return Martingale(self.space, self.diffs * float(c), check=False)

    def _other(self, other: "Martingale") -> np.ndarray:
        if not isinstance(other, Martingale):
            return NotImplemented
        self.space.require_same(other.space)
        return other.diffs

    def __add__(self, other: "Martingale") -> "Martingale":
        diffs = self._other(other)
        if diffs is NotImplemented:
            return NotImplemented
        return Martingale(self.space, self.diffs + diffs, check=False)

    def __sub__(self, other: "Martingale") -> "Martingale":
        diffs = self._other(other)
        if diffs is NotImplemented:
            return NotImplemented
        return Martingale(self.space, self.diffs - diffs, check=False)

    def __neg__(self) -> "Martingale":
        return self.scaled(-1.0)

    def __repr__(self):
        return f"Martingale(shape={self.space.shape}, depth={self.depth}, sup={np.abs(self.partial_sums).max():.4g})"

    def is_zero(self) -> bool:
        return not np.any(self.diffs)


def from_terminal(g: RandomVariable) -> Martingale:
    space = g.space
    levels = np.stack([cond_exp_grid(space, g.values, n) for n in range(space.depth + 1)])
    diffs = np.concatenate([levels[:1], np.diff(levels, axis=0)])
    return Martingale(space, diffs, check=False)


@dataclass(frozen=True, eq=False)
class StoppingTime:
    """Per-point stopping level; infinity is stored as depth + 1"""

    space: ProductFilteredSpace
    levels: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        levels = np.array(self.levels, dtype=np.int64)
        if levels.shape != self.space.shape:
            raise DimensionMismatch(f"stopping time grid {levels.shape} does not match space {self.space.shape}")
        if levels.min() < 0 or levels.max() > self.infinity:
            raise MeasurabilityError(f"stopping levels must lie in 0..{self.infinity}")
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)
        if self.check:
            for n in range(self.space.depth + 1):
                if not self.space.is_measurable((levels == n).astype(float), n, 0.0):
                    raise MeasurabilityError(f"{{nu = {n}}} is not a union of F_{n} atoms")

    @property
    def infinity(self) -> int:
        return self.space.depth + 1

    @classmethod
    def constant(cls, space: ProductFilteredSpace, level: int) -> "StoppingTime":
        return cls(space, np.full(space.shape, int(level)))

    @classmethod
    def never(cls, space: ProductFilteredSpace) -> "StoppingTime":
        return cls.constant(space, space.depth + 1)

    def finite_mask(self) -> np.ndarray:
        return self.levels <= self.space.depth

    def indicator_finite(self) -> RandomVariable:
        return RandomVariable.indicator(self.space, self.finite_mask())

    def level_mask(self, n: int) -> np.ndarray:
        return self.levels == n

    def minimum(self, other: "StoppingTime") -> "StoppingTime":
        self.space.require_same(other.space)
        return StoppingTime(self.space, np.minimum(self.levels, other.levels), check=False)

    def maximum(self, other: "StoppingTime") -> "StoppingTime":
        self.space.require_same(other.space)
        return StoppingTime(self.space, np.maximum(self.levels, other.levels), check=False)

    def equals(self, other: "StoppingTime") -> bool:
        return self.space.same_as(other.space) and bool(np.array_equal(self.levels, other.levels))


def is_nondecreasing(taus: Sequence[StoppingTime]) -> bool:
    return all(np.all(a.levels <= b.levels) for a, b in zip(taus, taus[1:]))


class AdaptedEnvelope:
    """Nonnegative nondecreasing adapted sequence lambda_0, ..., lambda_N"""

    __slots__ = ("space", "values")

    def __init__(self, space: ProductFilteredSpace, values, check: bool = True):
        self.space = space
        self.values = _check_sequence(space, values, "envelope")
        if check:
            self.validate()

    def validate(self, dominates: Optional[np.ndarray] = None, lag: int = 0, tol: Optional[float] = None) -> None:
        """
        Raises MeasurabilityError unless the sequence lies in Lambda. With
        dominates given, also requires dominates[n + lag] <= lambda_n, the
        last index repeating past the terminal level.
        """
        tol = settings.TOLERANCE if tol is None else tol
        lam = self.values
        scale = max(1.0, float(lam.max(initial=0.0)))
        if lam.min() < -tol:
            raise MeasurabilityError("envelope takes negative values")
        if np.any(np.diff(lam, axis=0) < -tol * scale):
            raise MeasurabilityError("envelope is not nondecreasing")
        for n in range(self.space.depth + 1):
            if not self.space.is_measurable(lam[n], n, tol * scale):
                raise MeasurabilityError(f"lambda_{n} is not F_{n}-measurable")
        if dominates is not None:
            N = self.space.depth
            for n in range(N + 1):
                target = dominates[min(n + lag, N)]
                if np.any(target > lam[n] + tol * scale):
                    raise MeasurabilityError(f"lambda_{n} does not dominate the controlled sequence")

    @property
    def final(self) -> RandomVariable:
        return RandomVariable(self.space, self.values[-1])


def stop(f: Martingale, nu: StoppingTime) -> Martingale:
    """f^nu with differences d_m chi_{nu >= m}"""
    f.space.require_same(nu.space)
    m = np.arange(f.depth + 1).reshape((-1,) + (1,) * f.space.dim)
    return Martingale(f.space, f.diffs * (nu.levels[None, ...] >= m))


def first_passage(
    sequence: Union[AdaptedEnvelope, np.ndarray, Sequence[RandomVariable]],
    threshold: float,
    space: Optional[ProductFilteredSpace] = None,
    offset: int = 0,
    strict: bool = True,
) -> StoppingTime:
    """
    nu = inf{n : X_{n + offset} > threshold}, infinity when never crossed.

    With offset 1 the value X_{N+1} is taken to be X_N, and X_{n+1} must be
    F_n-measurable.
    """
    if isinstance(sequence, AdaptedEnvelope):
        space, values = sequence.space, sequence.values
    elif isinstance(sequence, np.ndarray):
        if space is None:
            raise DimensionMismatch("a raw sequence array needs its space")
        values = sequence
    else:
        items = list(sequence)
        if not items:
            raise MartingaleError("first passage needs a nonempty sequence")
        space = items[0].space
        values = np.stack([item.values for item in items])
    if offset not in (0, 1):
        raise MartingaleError(f"offset must be 0 or 1, got {offset!r}")
    values = np.asarray(values, dtype=float)
    N = space.depth
    if values.shape != (N + 1,) + space.shape:
        raise DimensionMismatch(f"sequence has shape {values.shape}, expected {(N + 1,) + space.shape}")

    shifted = np.concatenate([values[offset:], values[N:]]) if offset else values
    scale = max(1.0, float(np.abs(values).max(initial=0.0)))
    for n in range(N + 1):
        if not space.is_measurable(shifted[n], n, settings.TOLERANCE * scale):
            raise MeasurabilityError(f"sequence value used at level {n} is not F_{n}-measurable")

    crossed = shifted > threshold if strict else shifted >= threshold
    hit = crossed.any(axis=0)
    levels = np.where(hit, crossed.argmax(axis=0), N + 1)
    return StoppingTime(space, levels, check=False)


# Random and structured martingales

def random_terminal(space: ProductFilteredSpace, rng: np.random.Generator, distribution: str = "gaussian") -> RandomVariable:
    shape = space.shape
    if distribution == "gaussian":
        values = rng.standard_normal(shape)
    elif distribution == "sparse":
        values = rng.standard_normal(shape) * (rng.random(shape) < 0.25)
    elif distribution == "sign":
        values = rng.choice([-1.0, 1.0], size=shape)
    elif distribution == "heavy":
        values = rng.standard_t(1.5, size=shape)
    else:
        raise ConfigError(f"unknown distribution {distribution!r}")
    return RandomVariable(space, values)


def random_martingale(
    space: ProductFilteredSpace,
    rng: np.random.Generator,
    distribution: str = "gaussian",
    centered: bool = True,
) -> Martingale:
    f = from_terminal(random_terminal(space, rng, distribution))
    return f.centered() if centered else f


def _child_signs(space: ProductFilteredSpace, n: int) -> np.ndarray:
    coord = space.coords[0]
    signs = np.zeros(coord.size)
    parent = coord.labels[n - 1]
    for p in range(len(coord.levels[n - 1])):
        children = [cell for cell in coord.levels[n] if parent[cell[0]] == p]
        weights = [coord.probs[list(cell)].sum() for cell in children]
        if len(children) % 2 or not np.allclose(weights, weights[0], rtol=0, atol=settings.MEASURE_TOLERANCE):
            raise MartingaleError(f"level {n} does not split coordinate 1 into an even number of equal cells")
        for i, cell in enumerate(children):
            signs[list(cell)] = 1.0 if i % 2 == 0 else -1.0
    return signs


def rademacher_martingale(space: ProductFilteredSpace, coefficients: Sequence[float]) -> Martingale:
    """Differences c_n r_n with r_n = +-1 alternating over coordinate-1 children"""
    N = space.depth
    if len(coefficients) != N:
        raise DimensionMismatch(f"need {N} coefficients, got {len(coefficients)}")
    diffs = np.zeros((N + 1,) + space.shape)
    broadcast = (-1,) + (1,) * (space.dim - 1)
    for n in range(1, N + 1):
        diffs[n] = coefficients[n - 1] * _child_signs(space, n).reshape(broadcast)
    return Martingale(space, diffs)


# Martingale files

def save_martingale(path: Union[str, Path], f: Martingale) -> None:
    doc = schemas.MartingaleFile(
        schema_version=settings.CONFIG_SCHEMA_VERSION,
        space=space_to_description(f.space),
        terminal=f.terminal.values.tolist(),
        head=f.head.values.tolist(),
    )
    Path(path).write_text(json.dumps(doc.model_dump(), indent=2))
    logger.info("saved martingale to %s", path)


def load_martingale(path: Union[str, Path]) -> Martingale:
    try:
        doc = schemas.MartingaleFile.model_validate_json(Path(path).read_text())
    except ValueError as e:
        raise MartingaleError(f"invalid martingale file {path}: {e}") from e
    space = space_from_description(doc.space)
    f = from_terminal(RandomVariable(space, np.asarray(doc.terminal, dtype=float)))
    if doc.head is not None:
        head = np.asarray(doc.head, dtype=float)
        if head.shape != space.shape or np.max(np.abs(head - f.diffs[0])) > settings.TOLERANCE:
            raise MartingaleError("stored head does not match E_0 of the terminal values")
    return f
