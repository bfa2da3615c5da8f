import math
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator

SCHEMA_VERSION = 1

SuiteName = Literal[
    "norm",
    "doob-check",
    "counterexample",
    "weak-type",
    "vector-ineq",
    "atomic-roundtrip",
    "decompose",
    "davis",
    "bdg-ratio",
    "transform-bound",
    "equivalence-report",
    "envelope-oracle",
    "regularity",
]

DecompositionKind = Literal["s", "P", "Q", "M", "S"]


def parse_exponent_entry(v: Union[float, int, str]) -> float:
    if isinstance(v, str):
        text = v.strip().lower()
        value = math.inf if text in ("inf", "infinity", "∞") else float(text)
    else:
        value = float(v)
    if not value > 0:
        raise ValueError(f"exponent entries must be > 0, got {v!r}")
    return value


class CoordinateDescription(BaseModel):
    weights: List[float]
    levels: List[List[List[int]]]
    points: Optional[List[Union[float, str]]] = None
    trivial_first: bool = True

    @field_validator("weights")
    @classmethod
    def validate_weights(cls, v):
        if not v:
            raise ValueError("a coordinate needs at least one point")
        if any(w <= 0 for w in v):
            raise ValueError("weights must be strictly positive")
        return v


class SpaceDescription(BaseModel):
    schema_version: int = SCHEMA_VERSION
    coordinates: List[CoordinateDescription]

    @field_validator("schema_version")
    @classmethod
    def validate_version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}, expected {SCHEMA_VERSION}")
        return v


class MartingaleFile(BaseModel):
    schema_version: int = SCHEMA_VERSION
    space: SpaceDescription
    terminal: List[Any]
    head: Optional[List[Any]] = None


class SpaceSpec(BaseModel):
    kind: Literal["dyadic", "file"] = "dyadic"
    dims: int = 2
    depth: int = 3
    path: Optional[str] = None

    @model_validator(mode="after")
    def check_source(self):
        if self.kind == "file" and not self.path:
            raise ValueError("space kind 'file' needs a path")
        if self.kind == "dyadic" and (self.dims < 1 or self.depth < 1):
            raise ValueError("dyadic spaces need dims >= 1 and depth >= 1")
        return self


class ExperimentConfig(BaseModel):
    schema_version: int = SCHEMA_VERSION
    suites: List[SuiteName]
    space: SpaceSpec = Field(default_factory=SpaceSpec)
    depths: Optional[List[int]] = None
    exponents: List[List[Union[float, str]]] = Field(default_factory=lambda: [[2.0, 2.0]])
    trials: int = 100
    seed: int = 0
    distribution: Literal["gaussian", "sparse", "sign", "heavy"] = "gaussian"
    t: Optional[float] = None
    kind: DecompositionKind = "s"
    n: int = 16
    counterexample_p: float = 2.0
    thresholds: int = 20
    out: str = "results"
    svg: bool = False
    workers: int = 1

    @field_validator("schema_version")
    @classmethod
    def validate_version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}, expected {SCHEMA_VERSION}")
        return v

    @field_validator("suites")
    @classmethod
    def validate_suites(cls, v):
        if not v:
            raise ValueError("at least one suite must be selected")
        return v

    @field_validator("exponents")
    @classmethod
    def validate_exponents(cls, v):
        if not v:
            raise ValueError("exponent grid must not be empty")
        return [[parse_exponent_entry(e) for e in row] for row in v]

    @field_validator("trials")
    @classmethod
    def validate_trials(cls, v):
        if v < 1:
            raise ValueError("trial count must be >= 1")
        return v

    @field_validator("depths")
    @classmethod
    def validate_depths(cls, v):
        if v is not None and (not v or any(n < 1 for n in v)):
            raise ValueError("depths must be a nonempty list of levels >= 1")
        return v

    @field_validator("workers", "thresholds", "n")
    @classmethod
    def validate_positive(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v


class HardyNormReport(BaseModel):
    maximal: float
    square: float
    cond_square: float
    p_envelope: float
    q_envelope: float
    variation: float

    @model_validator(mode="after")
    def check_nonnegative(self):
        for name, value in self.model_dump().items():
            if value < 0:
                raise ValueError(f"{name} norm is negative")
        return self


class CounterexampleReport(BaseModel):
    n: int
    p: float
    depth: int
    norm_f: float
    norm_Mf: float
    inner_integral_min: float
    lower_bound: float
    certified: bool


class ManifestRow(BaseModel):
    k: int
    mu: float
    chi_norm: float
    atom_sup: float


class EquivalenceRow(BaseModel):
    item: str
    exponent: str = ""
    lhs: str
    rhs: str
    exact: bool
    regime_ok: bool
    trials: int = 0
    max_ratio: float = 0.0
    min_ratio: float = math.inf
    violations: int = 0


class TrialRecord(BaseModel):
    suite: str
    seed: int
    trial: int
    exponent: str
    depth: int
    values: Dict[str, float] = Field(default_factory=dict)
    passed: bool = True
    regime_ok: bool = True
    wall_time: float = 0.0


class DepthMaximum(BaseModel):
    exponent: str
    depth: int
    trials: int
    max_ratio: float
    growth: Optional[float] = None
    stable: bool = True


class SuiteSummary(BaseModel):
    suite: str
    assertion: Literal["exact", "empirical"]
    trials: int
    failures: int
    ratio_column: Optional[str] = None
    min_ratio: Optional[float] = None
    max_ratio: Optional[float] = None
    depth_maxima: List[DepthMaximum] = Field(default_factory=list)
    passed: bool

    @property
    def depths_stable(self) -> bool:
        return all(row.stable for row in self.depth_maxima)


class RunResult(BaseModel):
    records: List[TrialRecord]
    summaries: List[SuiteSummary]
    equivalence: List[EquivalenceRow] = Field(default_factory=list)

    @property
    def exact_failed(self) -> bool:
        return any((s.assertion == "exact" and not s.passed) or not s.depths_stable for s in self.summaries)
