"""
Finite filtered product probability spaces

A coordinate space is a finite set of weighted points with a refining sequence
of partitions P_0, ..., P_N ending in singletons. The product space carries the
product filtration F_n generated by level-n cells of every coordinate, and the
partial sigma-algebras that resolve one coordinate at level m and all others
completely.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import settings
from errors import DimensionMismatch, SpaceError
import schemas

logger = logging.getLogger(__name__)

Cell = Tuple[int, ...]
Partition = Tuple[Cell, ...]


def _canonical_partition(cells: Sequence[Sequence[int]]) -> Partition:
    ordered = [tuple(sorted(int(i) for i in cell)) for cell in cells]
    return tuple(sorted(ordered, key=lambda c: c[0] if c else -1))


@dataclass(frozen=True, eq=False)
class CoordinateSpace:
    """One factor Omega_i with its weights and filtration"""

    probs: np.ndarray
    levels: Tuple[Partition, ...]
    points: Tuple[Union[float, str], ...] = ()

    labels: Tuple[np.ndarray, ...] = field(init=False, repr=False)
    cell_probs: Tuple[np.ndarray, ...] = field(init=False, repr=False)
    averaging: Tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise SpaceError("coordinate weights must be a nonempty vector")
        if np.any(probs <= 0) or not np.all(np.isfinite(probs)):
            raise SpaceError("coordinate weights must be strictly positive")
        if abs(probs.sum() - 1.0) > settings.MEASURE_TOLERANCE:
            raise SpaceError(f"coordinate weights sum to {probs.sum()!r}, not 1")
        if len(self.levels) < 2:
            raise SpaceError("a filtration needs at least the levels 0 and 1")
        size = probs.size
        levels = tuple(_canonical_partition(p) for p in self.levels)

        labels = []
        for n, partition in enumerate(levels):
            label = np.full(size, -1, dtype=np.int64)
            for c, cell in enumerate(partition):
                for i in cell:
                    if not 0 <= i < size:
                        raise SpaceError(f"level {n}: point index {i} out of range")
                    if label[i] >= 0:
                        raise SpaceError(f"level {n}: point {i} lies in two cells")
                    label[i] = c
            if np.any(label < 0):
                raise SpaceError(f"level {n}: cells do not cover every point")
            labels.append(label)

        for n in range(len(levels) - 1):
            for cell in levels[n + 1]:
                if len(set(labels[n][list(cell)])) != 1:
                    raise SpaceError(f"level {n + 1} does not refine level {n}")
        if len(levels[-1]) != size:
            raise SpaceError("terminal partition must separate points")

        cell_probs = tuple(np.bincount(label, weights=probs) for label in labels)
        averaging = []
        for label, cp in zip(labels, cell_probs):
            same = label[:, None] == label[None, :]
            averaging.append(np.where(same, probs[None, :] / cp[label][:, None], 0.0))

        points = self.points if self.points else tuple(range(size))
        if len(points) != size:
            raise SpaceError("point labels do not match the number of weights")

        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "points", tuple(points))
        object.__setattr__(self, "labels", tuple(labels))
        object.__setattr__(self, "cell_probs", cell_probs)
        object.__setattr__(self, "averaging", tuple(averaging))

    @property
    def size(self) -> int:
        return self.probs.size

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def signature(self) -> tuple:
        return (tuple(self.probs.tolist()), self.levels)


@dataclass(frozen=True)
class SpaceAtom:
    """An atom of F_n: a product of one level-n cell per coordinate"""

    level: int
    index: int
    cells: Tuple[Cell, ...]
    probability: float

    def indices(self) -> List[Tuple[int, ...]]:
        grids = np.meshgrid(*[np.asarray(c) for c in self.cells], indexing="ij")
        return [tuple(int(g[idx]) for g in grids) for idx in np.ndindex(grids[0].shape)]

    def mask(self, shape: Tuple[int, ...]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        out[np.ix_(*[np.asarray(c) for c in self.cells])] = True
        return out


@dataclass(frozen=True)
class RegularityReport:
    """Smallest R with P(parent) <= R P(atom), plus the parent map it was read from"""

    constant: float
    witness: Dict[Tuple[int, int], int]
    worst: Tuple[int, int]


@dataclass(frozen=True, eq=False)
class ProductFilteredSpace:
    coords: Tuple[CoordinateSpace, ...]

    shape: Tuple[int, ...] = field(init=False)
    probs: np.ndarray = field(init=False, repr=False)
    atom_labels: Tuple[np.ndarray, ...] = field(init=False, repr=False)
    atom_probs: Tuple[np.ndarray, ...] = field(init=False, repr=False)
    partial_labels: Dict[Tuple[int, int], np.ndarray] = field(init=False, repr=False)
    _signature: tuple = field(init=False, repr=False)

    def __post_init__(self):
        coords = tuple(self.coords)
        if not coords:
            raise SpaceError("a product space needs at least one coordinate")
        depths = {c.depth for c in coords}
        if len(depths) != 1:
            raise SpaceError(f"coordinates disagree on filtration depth: {sorted(depths)}")
        shape = tuple(c.size for c in coords)
        total = int(np.prod(shape))
        if total > settings.MAX_GRID_POINTS:
            raise SpaceError(f"product space has {total} points, limit is {settings.MAX_GRID_POINTS}")

        probs = np.ones(shape)
        for axis, c in enumerate(coords):
            probs = probs * c.probs.reshape([-1 if a == axis else 1 for a in range(len(shape))])

        depth = depths.pop()
        atom_labels, atom_probs = [], []
        for n in range(depth + 1):
            counts = tuple(len(c.levels[n]) for c in coords)
            grids = np.meshgrid(*[c.labels[n] for c in coords], indexing="ij")
            label = np.ravel_multi_index(tuple(grids), counts)
            atom_labels.append(label)
            atom_probs.append(np.bincount(label.ravel(), weights=probs.ravel(), minlength=int(np.prod(counts))))

        partial = {}
        for k, c in enumerate(coords, start=1):
            for m in range(depth + 1):
                parts = [np.arange(cc.size) if i != k - 1 else c.labels[m] for i, cc in enumerate(coords)]
                counts = tuple(cc.size if i != k - 1 else len(c.levels[m]) for i, cc in enumerate(coords))
                grids = np.meshgrid(*parts, indexing="ij")
                partial[(k, m)] = np.ravel_multi_index(tuple(grids), counts)

        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "atom_labels", tuple(atom_labels))
        object.__setattr__(self, "atom_probs", tuple(atom_probs))
        object.__setattr__(self, "partial_labels", partial)
        object.__setattr__(self, "_signature", tuple(c.signature() for c in coords))
        logger.debug("built product space shape=%s depth=%d", shape, depth)

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def depth(self) -> int:
        return self.coords[0].depth

    @property
    def size(self) -> int:
        return int(self.probs.size)

    def same_as(self, other: "ProductFilteredSpace") -> bool:
        return self is other or self._signature == other._signature

    def require_same(self, other: "ProductFilteredSpace") -> None:
        if not self.same_as(other):
            raise DimensionMismatch("objects live on different spaces")

    def check_level(self, n: int) -> int:
        if not 0 <= n <= self.depth:
            raise SpaceError(f"level {n} outside 0..{self.depth}")
        return n

    def check_coordinate(self, k: int) -> int:
        if not 1 <= k <= self.dim:
            raise SpaceError(f"coordinate {k} outside 1..{self.dim}")
        return k

    # Atom tables

    def atoms_of(self, n: int) -> List[SpaceAtom]:
        """Atoms of F_n in label order"""
        self.check_level(n)
        counts = tuple(len(c.levels[n]) for c in self.coords)
        atoms = []
        for index in range(int(np.prod(counts))):
            cell_ids = np.unravel_index(index, counts)
            cells = tuple(c.levels[n][int(i)] for c, i in zip(self.coords, cell_ids))
            atoms.append(SpaceAtom(n, index, cells, float(self.atom_probs[n][index])))
        return atoms

    def partial_atoms_of(self, k: int, m: int) -> np.ndarray:
        """Label grid of the partial sigma-algebra resolving coordinate k at level m"""
        self.check_coordinate(k)
        self.check_level(m)
        return self.partial_labels[(k, m)]

    def atom_reduce(self, values: np.ndarray, n: int, how: str = "max") -> np.ndarray:
        """Per-atom max (or min) of values at level n, broadcast back onto the grid"""
        self.check_level(n)
        label = self.atom_labels[n].ravel()
        flat = np.asarray(values, dtype=float).ravel()
        size = self.atom_probs[n].size
        if how == "max":
            out = np.full(size, -np.inf)
            np.maximum.at(out, label, flat)
        elif how == "min":
            out = np.full(size, np.inf)
            np.minimum.at(out, label, flat)
        else:
            raise SpaceError(f"unknown reduction {how!r}")
        return out[label].reshape(self.shape)

    def is_measurable(self, values: np.ndarray, n: int, tol: Optional[float] = None) -> bool:
        tol = settings.TOLERANCE if tol is None else tol
        spread = self.atom_reduce(values, n, "max") - self.atom_reduce(values, n, "min")
        return bool(np.all(spread <= tol))

    def parent_of(self, n: int, atom_index: int) -> int:
        """Index of the F_{n-1} atom containing the given F_n atom"""
        self.check_level(n)
        if n == 0:
            raise SpaceError("level 0 atoms have no parent")
        where = np.flatnonzero(self.atom_labels[n].ravel() == atom_index)
        return int(self.atom_labels[n - 1].ravel()[where[0]])

    def cell_of(self, point: Tuple[int, ...], n: int) -> int:
        return int(self.atom_labels[self.check_level(n)][tuple(point)])

    # Coordinate averaging

    def average_along(self, values: np.ndarray, k: int, m: int) -> np.ndarray:
        """Average values over the level-m cell of coordinate k, other coordinates fixed"""
        self.check_coordinate(k)
        self.check_level(m)
        axis = k - 1
        moved = np.tensordot(self.coords[axis].averaging[m], values, axes=([1], [axis]))
        return np.moveaxis(moved, 0, axis)

    def point_labels(self, k: int) -> Tuple[Union[float, str], ...]:
        return self.coords[self.check_coordinate(k) - 1].points


class RandomVariable:
    """A real value per product point, tied to its space"""

    __slots__ = ("space", "values")

    def __init__(self, space: ProductFilteredSpace, values):
        values = np.array(values, dtype=float)
        if values.shape != space.shape:
            raise DimensionMismatch(f"value grid {values.shape} does not match space {space.shape}")
        if not np.all(np.isfinite(values)):
            raise SpaceError("random variable values must be finite")
        values.setflags(write=False)
        self.space = space
        self.values = values

    @classmethod
    def constant(cls, space: ProductFilteredSpace, c: float) -> "RandomVariable":
        return cls(space, np.full(space.shape, float(c)))

    @classmethod
    def indicator(cls, space: ProductFilteredSpace, mask) -> "RandomVariable":
        return cls(space, np.asarray(mask, dtype=float))

    def _other(self, other):
        if isinstance(other, RandomVariable):
            self.space.require_same(other.space)
            return other.values
        return other

    def __add__(self, other):
        return RandomVariable(self.space, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return RandomVariable(self.space, self.values - self._other(other))

    def __rsub__(self, other):
        return RandomVariable(self.space, self._other(other) - self.values)

    def __mul__(self, other):
        return RandomVariable(self.space, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return RandomVariable(self.space, self.values / self._other(other))

    def __neg__(self):
        return RandomVariable(self.space, -self.values)

    def __abs__(self):
        return RandomVariable(self.space, np.abs(self.values))

    def __repr__(self):
        return f"RandomVariable(shape={self.space.shape}, min={self.values.min():.4g}, max={self.values.max():.4g})"

    def expectation(self) -> float:
        return float(np.sum(self.values * self.space.probs))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def sign(self) -> "RandomVariable":
        return RandomVariable(self.space, np.sign(self.values))

    def allclose(self, other: "RandomVariable", tol: Optional[float] = None) -> bool:
        tol = settings.TOLERANCE if tol is None else tol
        return bool(np.max(np.abs(self.values - self._other(other)), initial=0.0) <= tol)


def regularity_constant(space: ProductFilteredSpace) -> RegularityReport:
    """Exhaustive atom search for the regularity constant of the filtration"""
    if space.depth < 1:
        raise SpaceError("regularity needs filtration depth >= 1")
    best, worst = 1.0, (1, 0)
    witness: Dict[Tuple[int, int], int] = {}
    for n in range(1, space.depth + 1):
        label = space.atom_labels[n].ravel()
        parent_label = space.atom_labels[n - 1].ravel()
        _, first = np.unique(label, return_index=True)
        for a, pos in enumerate(first):
            parent = int(parent_label[pos])
            witness[(n, a)] = parent
            ratio = space.atom_probs[n - 1][parent] / space.atom_probs[n][a]
            if ratio > best:
                best, worst = float(ratio), (n, a)
    logger.debug("regularity constant %.6g attained at level %d atom %d", best, *worst)
    return RegularityReport(best, witness, worst)


# Constructors

def dyadic_coordinate(depth: int) -> CoordinateSpace:
    size = 2 ** depth
    levels = []
    for n in range(depth + 1):
        width = 2 ** (depth - n)
        levels.append(tuple(tuple(range(c * width, (c + 1) * width)) for c in range(2 ** n)))
    points = tuple(i / size for i in range(size))
    return CoordinateSpace(np.full(size, 1.0 / size), tuple(levels), points)


def make_dyadic_space(d: int, N: int) -> ProductFilteredSpace:
    """d copies of [0,1) sampled at 2^N points with the dyadic filtration"""
    if d < 1:
        raise SpaceError("dyadic space needs d >= 1")
    if N < 1:
        raise SpaceError("dyadic space needs N >= 1")
    coord = dyadic_coordinate(N)
    return ProductFilteredSpace(tuple(coord for _ in range(d)))


def shell_coordinate(n: int) -> CoordinateSpace:
    """
    Dyadic shells of [0,1): point 0 stands for [0, 2^-n), point i >= 1 for
    [2^-k, 2^-k+1) with k = n + 1 - i. Level j keeps the shells k <= j apart and
    merges the rest, which is exactly the trace of the level-j dyadic cells on
    functions constant on shells.
    """
    if n < 1:
        raise SpaceError("shell space needs n >= 1")
    probs = np.array([2.0 ** -n] + [2.0 ** -(n + 1 - i) for i in range(1, n + 1)])
    levels = []
    for j in range(n + 1):
        merged = tuple(range(0, n - j + 1))
        levels.append((merged,) + tuple((i,) for i in range(n - j + 1, n + 1)))
    points = (0.0,) + tuple(2.0 ** -(n + 1 - i) for i in range(1, n + 1))
    return CoordinateSpace(probs, tuple(levels), points)


def make_shell_space(d: int, n: int) -> ProductFilteredSpace:
    if d < 1:
        raise SpaceError("shell space needs d >= 1")
    coord = shell_coordinate(n)
    return ProductFilteredSpace(tuple(coord for _ in range(d)))


def make_space(coords: Sequence[CoordinateSpace]) -> ProductFilteredSpace:
    return ProductFilteredSpace(tuple(coords))


# Space description files

def space_from_description(desc: schemas.SpaceDescription) -> ProductFilteredSpace:
    coords = []
    for c in desc.coordinates:
        levels = c.levels
        if c.trivial_first and (not levels or len(levels[0]) != 1):
            levels = [[list(range(len(c.weights)))]] + list(levels)
        coords.append(CoordinateSpace(np.asarray(c.weights, dtype=float), tuple(tuple(tuple(cell) for cell in p) for p in levels), tuple(c.points or ())))
    return make_space(coords)


def space_to_description(space: ProductFilteredSpace) -> schemas.SpaceDescription:
    return schemas.SpaceDescription(
        schema_version=settings.CONFIG_SCHEMA_VERSION,
        coordinates=[
            schemas.CoordinateDescription(
                weights=c.probs.tolist(),
                levels=[[list(cell) for cell in p] for p in c.levels],
                points=[p for p in c.points],
                trivial_first=False,
            )
            for c in space.coords
        ],
    )


def load_space(path: Union[str, Path]) -> ProductFilteredSpace:
    text = Path(path).read_text()
    try:
        desc = schemas.SpaceDescription.model_validate_json(text)
    except ValueError as e:
        raise SpaceError(f"invalid space description {path}: {e}") from e
    return space_from_description(desc)


def dump_space(space: ProductFilteredSpace, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(space_to_description(space).model_dump(), indent=2))
