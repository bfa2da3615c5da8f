"""
CSV and SVG output for experiment runs
"""
import csv
import logging
import math
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from pydantic import BaseModel  # noqa: E402

from config import settings  # noqa: E402
from errors import HardyLabError  # noqa: E402
from experiment_service import SUITES  # noqa: E402
from schemas import RunResult, SuiteSummary, TrialRecord  # noqa: E402

logger = logging.getLogger(__name__)

BASE_COLUMNS = ("seed", "trial", "exponent", "depth")
TAIL_COLUMNS = ("passed", "regime_ok")


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ReportService:
    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)

    def _target(self, out_dir, name: str) -> Path:
        directory = Path(out_dir) if out_dir is not None else self.out_dir
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise HardyLabError(f"cannot create output directory {directory}: {e}") from e
        return directory / name

    def write_csv(self, suite_name: str, records: Sequence[TrialRecord], out_dir=None) -> Path:
        if not records:
            raise HardyLabError(f"no records to report for suite {suite_name}")
        columns = SUITES[suite_name].columns
        path = self._target(out_dir, f"{suite_name}.csv")
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(BASE_COLUMNS + columns + TAIL_COLUMNS)
            for r in records:
                row = [r.seed, r.trial, r.exponent, r.depth]
                row += [r.values[c] for c in columns]
                row += [r.passed, r.regime_ok]
                writer.writerow([format_value(v) for v in row])
        logger.info("wrote %d rows to %s", len(records), path)
        return path

    def write_rows(self, name: str, rows: Sequence[BaseModel], out_dir=None) -> Path:
        if not rows:
            raise HardyLabError(f"no rows to write for {name}")
        path = self._target(out_dir, f"{name}.csv")
        columns = list(type(rows[0]).model_fields)
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                data = row.model_dump()
                writer.writerow([format_value(data[c]) for c in columns])
        return path

    def write_histogram(self, suite_name: str, records: Sequence[TrialRecord], out_dir=None) -> Path:
        column = SUITES[suite_name].histogram
        if column is None:
            raise HardyLabError(f"suite {suite_name} has no ratio column")
        values = [r.values[column] for r in records if math.isfinite(r.values[column])]
        path = self._target(out_dir, f"{suite_name}.svg")
        fig, ax = plt.subplots(figsize=(6, 4))
        if values:
            ax.hist(values, bins=min(50, max(5, len(values) // 10)), color="#4c72b0")
            top = max(values)
            ax.axvline(top, color="#c44e52", linestyle="--", label=f"max = {top:.4g}")
            ax.legend()
        ax.set_xlabel(column)
        ax.set_ylabel("trials")
        ax.set_title(f"{suite_name} ({len(values)} trials)")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        return path

    def report(self, result: RunResult, out_dir=None, svg: bool = False) -> List[Path]:
        if not result.records:
            raise HardyLabError("no records to report")
        paths = []
        for summary in result.summaries:
            records = [r for r in result.records if r.suite == summary.suite]
            paths.append(self.write_csv(summary.suite, records, out_dir))
            if svg and SUITES[summary.suite].histogram is not None:
                paths.append(self.write_histogram(summary.suite, records, out_dir))
            if summary.depth_maxima:
                paths.append(self.write_rows(f"{summary.suite}-depths", summary.depth_maxima, out_dir))
        if result.equivalence:
            paths.append(self.write_rows("equivalence-report-summary", result.equivalence, out_dir))
        return paths

    @staticmethod
    def summary_table(summaries: Iterable[SuiteSummary]) -> str:
        lines = [f"{'suite':<20} {'class':<10} {'trials':>7} {'failures':>8} {'min':>12} {'max':>12}  status"]
        for s in summaries:
            low = "-" if s.min_ratio is None else f"{s.min_ratio:.6g}"
            high = "-" if s.max_ratio is None else f"{s.max_ratio:.6g}"
            status = "PASS" if s.passed else "FAIL"
            lines.append(f"{s.suite:<20} {s.assertion:<10} {s.trials:>7} {s.failures:>8} {low:>12} {high:>12}  {status}")
        return "\n".join(lines)


report_service = ReportService(settings.OUTPUT_DIR)
