"""
Suite registry and batch runner for HardyLab experiments
"""
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

import atomic
import operators
from config import settings
from errors import ConfigError
from martingale import Martingale, from_terminal, random_martingale, random_terminal
from mixed_norm import MixedExponent, Weight, mixed_norm
from schemas import DepthMaximum, ExperimentConfig, RunResult, SpaceSpec, SuiteSummary, TrialRecord
from space import ProductFilteredSpace, RandomVariable, load_space, make_dyadic_space, regularity_constant

logger = logging.getLogger(__name__)


@dataclass
class TrialContext:
    config: ExperimentConfig
    space: ProductFilteredSpace
    p: MixedExponent
    depth: int
    trial: int
    rng: np.random.Generator
    extra: Optional[tuple] = None

    def martingale(self) -> Martingale:
        return random_martingale(self.space, self.rng, self.config.distribution)


TrialOutcome = Tuple[Dict[str, float], bool, bool]


@dataclass(frozen=True)
class Suite:
    name: str
    assertion: str
    columns: Tuple[str, ...]
    histogram: Optional[str]
    trial: Callable[[TrialContext], TrialOutcome]
    per_exponent: bool = True
    uses_exponent: bool = True


def _rel_le(a: float, b: float) -> bool:
    return a <= b * (1 + settings.TOLERANCE) + settings.TOLERANCE


def _ratio(num: float, den: float) -> float:
    if den > 0:
        return num / den
    return 0.0 if num == 0 else math.inf


# Trial functions

def norm_trial(ctx: TrialContext) -> TrialOutcome:
    f = ctx.martingale()
    report = operators.hardy_norms(f, ctx.p)
    values = report.model_dump()
    values["norm_f"] = mixed_norm(f.terminal, ctx.p)
    passed = _rel_le(report.maximal, report.p_envelope) and _rel_le(report.square, report.q_envelope)
    return values, passed, True


def doob_trial(ctx: TrialContext) -> TrialOutcome:
    f = ctx.martingale()
    g = f.terminal
    norm_f = mixed_norm(g, ctx.p)
    norm_Mf = mixed_norm(operators.maximal(f), ctx.p)
    ratio = _ratio(norm_Mf, norm_f)
    ceiling = operators.doob_ceiling(ctx.p)
    pointwise_ok, excess = operators.maximal_le_composed(g)
    regime_ok = operators.exponent_regime(ctx.p) in ("interior", "leading_infinite")
    passed = pointwise_ok and (not regime_ok or _rel_le(ratio, ceiling))
    return {
        "norm_f": norm_f,
        "norm_Mf": norm_Mf,
        "ratio": ratio,
        "ceiling": ceiling,
        "composed_excess": excess,
    }, passed, regime_ok


def weak_type_trial(ctx: TrialContext) -> TrialOutcome:
    space = ctx.space
    g = random_terminal(space, ctx.rng, ctx.config.distribution)
    phi = Weight(RandomVariable(space, np.exp(0.75 * ctx.rng.standard_normal(space.shape))))
    top = float(operators.maximal(from_terminal(g)).values.max())
    violations, worst = 0, 0.0
    if top > 0:
        for rho in np.geomspace(0.05 * top, 1.1 * top, ctx.config.thresholds):
            check = operators.weighted_weak_type_check(g, phi, float(rho))
            worst = max(worst, check.ratio)
            violations += not check.holds
    return {"thresholds": float(ctx.config.thresholds), "max_ratio": worst, "violations": float(violations)}, violations == 0, True


def vector_trial(ctx: TrialContext) -> TrialOutcome:
    space = ctx.space
    fs = [abs(random_terminal(space, ctx.rng, ctx.config.distribution)) for _ in range(space.depth + 1)]
    ratio = operators.vector_inequality_ratio(fs, ctx.p)
    regime_ok = operators.exponent_regime(ctx.p) in ("interior", "leading_ones")
    return {"ratio": ratio}, math.isfinite(ratio), regime_ok


def _roundtrip_parts(f: Martingale, p: MixedExponent, t: Optional[float]):
    yield "s", atomic.decompose_s(f, p, t)
    yield "P", atomic.decompose_envelope(f, p, t, kind="P")
    yield "Q", atomic.decompose_envelope(f, p, t, kind="Q")
    regular_t = t if t is not None and t < min(1.0, p.min_entry) else None
    yield "M", atomic.decompose_regular(f, p, regular_t, kind="M")
    yield "S", atomic.decompose_regular(f, p, regular_t, kind="S")


def roundtrip_trial(ctx: TrialContext) -> TrialOutcome:
    f = ctx.martingale()
    report = operators.hardy_norms(f, ctx.p)
    error, valid, monotone, reverse_ok, level_sets = 0.0, True, True, True, True
    s_ratio = math.nan
    for name, dec in _roundtrip_parts(f, ctx.p, ctx.config.t):
        check = atomic.check_decomposition(dec, f)
        error = max(error, check.reconstruction_error)
        valid &= check.atoms_valid
        monotone &= check.taus_monotone
        for message in check.messages:
            logger.warning("trial %d decomposition %s: %s", ctx.trial, name, message)
        norm = atomic.decomposition_norm(dec)
        if name == "s":
            level_sets = atomic.level_sets_match(dec, f)
            s_ratio = _ratio(norm, report.cond_square)
        elif name in ("P", "Q"):
            hardy = report.p_envelope if name == "P" else report.q_envelope
            reverse_ok &= _rel_le(hardy, norm)
    band_ok = f.is_zero() or (0 < s_ratio < math.inf)
    passed = error < settings.TOLERANCE and valid and monotone and level_sets and reverse_ok and band_ok
    return {
        "recon_error": error,
        "atoms_valid": float(valid),
        "taus_monotone": float(monotone),
        "level_sets": float(level_sets),
        "reverse_ok": float(reverse_ok),
        "s_norm_ratio": s_ratio,
    }, passed, ctx.p.is_finite


HARDY_FIELD = {"s": "cond_square", "P": "p_envelope", "Q": "q_envelope", "M": "maximal", "S": "square"}


def run_decomposition(f: Martingale, p: MixedExponent, kind: str, t: Optional[float]) -> atomic.AtomicDecomposition:
    if kind == "s":
        return atomic.decompose_s(f, p, t)
    if kind in ("P", "Q"):
        return atomic.decompose_envelope(f, p, t, kind=kind)
    return atomic.decompose_regular(f, p, t, kind=kind)


def decompose_trial(ctx: TrialContext) -> TrialOutcome:
    f = ctx.martingale()
    dec = run_decomposition(f, ctx.p, ctx.config.kind, ctx.config.t)
    check = atomic.check_decomposition(dec, f)
    norm = atomic.decomposition_norm(dec)
    hardy = getattr(operators.hardy_norms(f, ctx.p), HARDY_FIELD[ctx.config.kind])
    return {
        "terms": float(len(dec.terms)),
        "recon_error": check.reconstruction_error,
        "atoms_valid": float(check.atoms_valid),
        "decomposition_norm": norm,
        "hardy_norm": hardy,
        "ratio": _ratio(norm, hardy),
    }, check.passed, ctx.p.is_finite


def davis_trial(ctx: TrialContext) -> TrialOutcome:
    f = ctx.martingale()
    result = atomic.davis_decompose(f, ctx.p)
    error = float(np.max(np.abs(result.h.partial_sums + result.g.partial_sums - f.partial_sums)))
    square = mixed_norm(operators.square_function(f), ctx.p)
    regime_ok = operators.exponent_regime(ctx.p) in ("interior", "leading_ones")
    return {
        "recon_error": error,
        "certified": float(result.certified),
        "h_variation_ratio": _ratio(result.h_variation, square),
        "g_envelope_ratio": _ratio(result.g_envelope, square),
    }, result.certified and error < settings.TOLERANCE, regime_ok


def bdg_trial(ctx: TrialContext) -> TrialOutcome:
    f = ctx.martingale()
    square = mixed_norm(operators.square_function(f), ctx.p)
    maximal = mixed_norm(operators.maximal(f), ctx.p)
    ratio = _ratio(square, maximal)
    regime_ok = operators.exponent_regime(ctx.p) in ("interior", "leading_ones")
    return {"square": square, "maximal": maximal, "ratio": ratio}, math.isfinite(ratio), regime_ok


def transform_trial(ctx: TrialContext) -> TrialOutcome:
    f = ctx.martingale()
    b = operators.TransformMultipliers.random_signs(ctx.space, ctx.rng)
    Tf = operators.martingale_transform(f, b)
    dominated = operators.transform_dominated(f, Tf)
    ratio = _ratio(mixed_norm(Tf.terminal, ctx.p), mixed_norm(f.terminal, ctx.p))
    return {"dominated": float(dominated), "ratio": ratio}, dominated, operators.exponent_regime(ctx.p) == "interior"


def equivalence_trial(ctx: TrialContext) -> TrialOutcome:
    f = ctx.martingale()
    R = regularity_constant(ctx.space).constant
    ratios = atomic.equivalence_ratios(f, ctx.p, R)
    exact_items = [item for item, _, _, exact, _ in atomic.EQUIVALENCE_ITEMS if exact]
    passed = all(ratios[item] is None or _rel_le(ratios[item], 1.0) for item in exact_items)
    values = {item: (math.nan if r is None else r) for item, r in ratios.items()}
    return values, passed, ctx.p.is_finite


def envelope_oracle_trial(ctx: TrialContext) -> TrialOutcome:
    values = {}
    passed = True
    f = from_terminal(RandomVariable(ctx.space, np.asarray(ctx.extra, dtype=float).reshape(ctx.space.shape)))
    for kind in ("P", "Q"):
        minimal = operators.envelope_value(f, ctx.p, kind)
        brute = operators.brute_force_envelope_value(f, ctx.p, kind)
        values[f"{kind}_minimal"] = minimal
        values[f"{kind}_brute"] = brute
        passed &= abs(minimal - brute) <= settings.TOLERANCE
    return values, passed, True


def regularity_trial(ctx: TrialContext) -> TrialOutcome:
    report = regularity_constant(ctx.space)
    expected = 2.0 ** ctx.space.dim if ctx.config.space.kind == "dyadic" else math.nan
    f = ctx.martingale()
    t = ctx.config.t
    if t is not None and t >= min(1.0, ctx.p.min_entry):
        t = None
    dec = atomic.decompose_regular(f, ctx.p, t, kind="M")
    cover = max(dec.cover_ratios.values(), default=0.0)
    stopping = max(dec.stopping_ratios.values(), default=0.0)
    passed = (
        _rel_le(cover, report.constant)
        and math.isfinite(stopping)
        and (math.isnan(expected) or abs(report.constant - expected) <= settings.TOLERANCE)
    )
    return {
        "regularity": report.constant,
        "expected": expected,
        "max_cover_ratio": cover,
        "max_stopping_ratio": stopping,
    }, passed, ctx.p.is_finite


def counterexample_trial(ctx: TrialContext) -> TrialOutcome:
    n = ctx.extra[0]
    report = operators.doob_counterexample(n, ctx.config.counterexample_p)
    values = report.model_dump(exclude={"certified"})
    values = {key: float(value) for key, value in values.items()}
    return values, report.certified, True


SUITES: Dict[str, Suite] = {
    suite.name: suite
    for suite in [
        Suite("norm", "exact", ("norm_f", "maximal", "square", "cond_square", "p_envelope", "q_envelope", "variation"), None, norm_trial),
        Suite("doob-check", "exact", ("norm_f", "norm_Mf", "ratio", "ceiling", "composed_excess"), "ratio", doob_trial),
        Suite("counterexample", "exact", ("n", "p", "depth", "norm_f", "norm_Mf", "inner_integral_min", "lower_bound"), "norm_Mf", counterexample_trial, per_exponent=False),
        Suite("weak-type", "exact", ("thresholds", "max_ratio", "violations"), "max_ratio", weak_type_trial, per_exponent=False, uses_exponent=False),
        Suite("vector-ineq", "empirical", ("ratio",), "ratio", vector_trial),
        Suite("atomic-roundtrip", "exact", ("recon_error", "atoms_valid", "taus_monotone", "level_sets", "reverse_ok", "s_norm_ratio"), "s_norm_ratio", roundtrip_trial),
        Suite("decompose", "exact", ("terms", "recon_error", "atoms_valid", "decomposition_norm", "hardy_norm", "ratio"), "ratio", decompose_trial),
        Suite("davis", "exact", ("recon_error", "certified", "h_variation_ratio", "g_envelope_ratio"), "g_envelope_ratio", davis_trial),
        Suite("bdg-ratio", "empirical", ("square", "maximal", "ratio"), "ratio", bdg_trial),
        Suite("transform-bound", "exact", ("dominated", "ratio"), "ratio", transform_trial),
        Suite("equivalence-report", "exact", tuple(item for item, *_ in atomic.EQUIVALENCE_ITEMS), "S<=s", equivalence_trial),
        Suite("envelope-oracle", "exact", ("P_minimal", "P_brute", "Q_minimal", "Q_brute"), None, envelope_oracle_trial, per_exponent=False),
        Suite("regularity", "exact", ("regularity", "expected", "max_cover_ratio", "max_stopping_ratio"), "max_stopping_ratio", regularity_trial),
    ]
}


ORACLE_GRID = (-2.0, -1.0, 0.0, 1.0, 2.0)
ORACLE_DEPTHS = (1, 2)


# Spaces and tasks

@lru_cache(maxsize=32)
def _cached_space(kind: str, dims: int, depth: int, path: Optional[str]) -> ProductFilteredSpace:
    if kind == "file":
        return load_space(path)
    return make_dyadic_space(dims, depth)


def build_space(spec: SpaceSpec, depth: Optional[int] = None) -> ProductFilteredSpace:
    return _cached_space(spec.kind, spec.dims, depth or spec.depth, spec.path)


@dataclass(frozen=True)
class Task:
    suite: str
    config: ExperimentConfig
    depth: int
    exponent: Tuple[float, ...]
    trial: int
    extra: Optional[tuple] = None
    dims: Optional[int] = None


def _exponent_for(suite: Suite, config: ExperimentConfig, space: ProductFilteredSpace) -> List[MixedExponent]:
    if not suite.uses_exponent:
        return [MixedExponent.uniform(2.0, space.dim)]
    if suite.per_exponent:
        exponents = [MixedExponent(tuple(row)) for row in config.exponents]
    else:
        exponents = [MixedExponent(tuple(config.exponents[0]))]
    for p in exponents:
        if len(p) != space.dim:
            raise ConfigError(f"exponent {p} does not match a {space.dim}-dimensional space")
    return exponents


def plan(suite: Suite, config: ExperimentConfig) -> List[Task]:
    """Trial list in (depth, exponent, trial) order; trial indices are unique within the suite"""
    if suite.name == "counterexample":
        p = (config.counterexample_p, math.inf)
        return [Task(suite.name, config, n, p, n - 1, (n,)) for n in range(1, config.n + 1)]
    if suite.name == "envelope-oracle":
        tasks = []
        index = 0
        p = (float(config.exponents[0][0]),)
        for depth in ORACLE_DEPTHS:
            for values in itertools.product(ORACLE_GRID, repeat=2 ** depth):
                tasks.append(Task(suite.name, config, depth, p, index, values, dims=1))
                index += 1
        return tasks

    if config.space.kind == "file" and config.depths:
        logger.warning("depth sweep ignored for space files")
    depths = config.depths if config.depths and config.space.kind == "dyadic" else [config.space.depth]
    tasks = []
    index = 0
    for depth in depths:
        space = build_space(config.space, depth)
        for p in _exponent_for(suite, config, space):
            for _ in range(config.trials):
                tasks.append(Task(suite.name, config, depth, p.entries, index))
                index += 1
    return tasks


def execute(task: Task) -> TrialRecord:
    config = task.config
    suite = SUITES[task.suite]
    if task.dims is not None:
        space = make_dyadic_space(task.dims, task.depth)
    elif suite.name == "counterexample":
        space = None
    else:
        space = build_space(config.space, task.depth)
    p = MixedExponent(task.exponent)
    ctx = TrialContext(
        config=config,
        space=space,
        p=p,
        depth=task.depth,
        trial=task.trial,
        rng=np.random.default_rng([config.seed, task.trial]),
        extra=task.extra,
    )
    start = time.perf_counter()
    values, passed, regime_ok = suite.trial(ctx)
    elapsed = time.perf_counter() - start
    if not passed and suite.assertion == "exact":
        logger.warning("%s trial %d failed: %s", suite.name, task.trial, values)
    return TrialRecord(
        suite=suite.name,
        seed=config.seed,
        trial=task.trial,
        exponent=str(p),
        depth=task.depth,
        values={column: float(values[column]) for column in suite.columns},
        passed=passed,
        regime_ok=regime_ok,
        wall_time=elapsed,
    )


def summarize(suite: Suite, records: List[TrialRecord]) -> SuiteSummary:
    failures = sum(not r.passed for r in records)
    ratios = []
    if suite.histogram:
        ratios = [r.values[suite.histogram] for r in records if math.isfinite(r.values[suite.histogram])]
    return SuiteSummary(
        suite=suite.name,
        assertion=suite.assertion,
        trials=len(records),
        failures=failures,
        ratio_column=suite.histogram,
        min_ratio=min(ratios) if ratios else None,
        max_ratio=max(ratios) if ratios else None,
        passed=failures == 0 or suite.assertion == "empirical",
    )


class ExperimentService:
    def __init__(self, workers: int = settings.WORKERS):
        self.workers = workers

    @staticmethod
    def load_config(path: Union[str, Path]) -> ExperimentConfig:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        try:
            data = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        return ExperimentService.validate_config(data)

    @staticmethod
    def validate_config(data: dict) -> ExperimentConfig:
        try:
            return ExperimentConfig.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"invalid experiment config: {e}") from e

    def _map(self, tasks: List[Task], workers: int) -> List[TrialRecord]:
        if workers <= 1 or len(tasks) < 2:
            return [execute(task) for task in tasks]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(execute, tasks, chunksize=max(1, len(tasks) // (4 * workers))))

    def run(self, config: ExperimentConfig) -> RunResult:
        workers = config.workers if config.workers > 1 else self.workers
        records: List[TrialRecord] = []
        summaries: List[SuiteSummary] = []
        equivalence = []
        for name in config.suites:
            suite = SUITES[name]
            tasks = plan(suite, config)
            logger.info("suite %s: %d trials on %d worker(s)", name, len(tasks), workers)
            start = time.perf_counter()
            suite_records = self._map(tasks, workers)
            suite_records.sort(key=lambda r: (r.seed, r.trial))
            if name == "counterexample":
                self._check_growth(suite_records)
            if name == "equivalence-report":
                for row in config.exponents:
                    p = MixedExponent(tuple(row))
                    rows = atomic.aggregate_equivalence(
                        (r.values for r in suite_records if r.exponent == str(p)), p
                    )
                    for eq_row in rows:
                        eq_row.exponent = str(p)
                    equivalence.extend(rows)
            summary = summarize(suite, suite_records)
            if name == "bdg-ratio":
                summary.depth_maxima = self._check_depth_growth(suite, suite_records)
                summary.passed = summary.passed and summary.depths_stable
            logger.info(
                "suite %s finished in %.2fs: %d/%d failures",
                name, time.perf_counter() - start, summary.failures, summary.trials,
            )
            records.extend(suite_records)
            summaries.append(summary)
        return RunResult(records=records, summaries=summaries, equivalence=equivalence)

    @staticmethod
    def _check_growth(records: List[TrialRecord]) -> None:
        """The exact norm of Mf_n must grow strictly with n"""
        for previous, current in zip(records, records[1:]):
            if not current.values["norm_Mf"] > previous.values["norm_Mf"]:
                logger.warning("maximal norm did not grow from n=%g to n=%g", previous.values["n"], current.values["n"])
                current.passed = False

    @staticmethod
    def _check_depth_growth(suite: Suite, records: List[TrialRecord]) -> List[DepthMaximum]:
        """
        Largest ratio per exponent and depth. Between consecutive depths the
        maximum may grow by at most settings.DEPTH_GROWTH_FACTOR.
        """
        column = suite.histogram
        rows: List[DepthMaximum] = []
        for exponent in dict.fromkeys(r.exponent for r in records):
            by_depth: Dict[int, List[float]] = {}
            for r in records:
                if r.exponent == exponent:
                    by_depth.setdefault(r.depth, []).append(r.values[column])
            previous: Optional[DepthMaximum] = None
            for depth in sorted(by_depth):
                top = max((v for v in by_depth[depth] if math.isfinite(v)), default=0.0)
                row = DepthMaximum(exponent=exponent, depth=depth, trials=len(by_depth[depth]), max_ratio=top)
                if previous is not None:
                    row.growth = _ratio(top, previous.max_ratio)
                    row.stable = row.growth <= settings.DEPTH_GROWTH_FACTOR
                    if not row.stable:
                        logger.warning(
                            "%s at %s: max %s grew by %.4g from depth %d to %d",
                            suite.name, exponent, column, row.growth, previous.depth, depth,
                        )
                rows.append(row)
                previous = row
        return rows

    def decomposition_manifest(self, config: ExperimentConfig):
        """Manifest rows and reconstruction error of the first decompose trial"""
        space = build_space(config.space, (config.depths or [config.space.depth])[0])
        p = MixedExponent(tuple(config.exponents[0]))
        if len(p) != space.dim:
            raise ConfigError(f"exponent {p} does not match a {space.dim}-dimensional space")
        rng = np.random.default_rng([config.seed, 0])
        f = random_martingale(space, rng, config.distribution)
        dec = run_decomposition(f, p, config.kind, config.t)
        check = atomic.check_decomposition(dec, f).certify()
        return dec.manifest(), check.reconstruction_error


experiment_service = ExperimentService()
