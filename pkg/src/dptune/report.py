"""Turn trial grids into normalized curves, gain/speedup summaries and files.

Times are written as exact decimal seconds derived from integer
nanoseconds, so reading a file back reproduces every value bit for bit.
"""

from __future__ import annotations

import csv
import json
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import DPTError, ReportFormatError, UsageError
from .timing import NS_PER_S, format_ns, parse_ns
from .tuner import STATUSES, TrialResult, TuneOutcome

GRID_COLUMNS = ("n_worker", "n_prefetch", "epoch", "transfer_time_s", "status")
NORMALIZED_COLUMNS = ("n_worker", "n_prefetch", "epoch", "normalized")
SUMMARY_COLUMNS = ("batch_size", "variant", "epoch_class", "optimal_workers", "optimal_prefetch",
                   "transfer_time_s", "baseline_time_s", "gain_percent", "speedup")


class NormalizationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GridRecord:
    n_worker: int
    n_prefetch: int
    epoch_index: int
    transfer_time_ns: int
    status: str = "ok"

    @property
    def transfer_time(self) -> float:
        return self.transfer_time_ns / NS_PER_S


@dataclass(frozen=True)
class NormalizedRecord:
    n_worker: int
    n_prefetch: int
    epoch_index: int
    value: float
    status: str = "ok"


@dataclass(frozen=True)
class SummaryRow:
    batch_size: int
    variant: str
    epoch_class: str  # "first" or "after_2nd"
    optimal_workers: int
    optimal_prefetch: int
    transfer_time: float
    baseline_time: float
    gain_percent: float
    speedup: float


def grid_records(trials: Iterable[TrialResult]) -> list[GridRecord]:
    """One record per (cell, epoch); cells that never ran get one zero-time record."""
    records = []
    for trial in trials:
        if trial.ok:
            records.extend(GridRecord(trial.n_worker, trial.n_prefetch, e, t)
                           for e, t in enumerate(trial.epoch_times_ns))
        else:
            records.append(GridRecord(trial.n_worker, trial.n_prefetch, 0, 0, trial.status))
    return records


def _time_of(record) -> float:
    if isinstance(record, NormalizedRecord):
        return record.value
    return record.transfer_time_ns


def _group_maxima(records) -> dict[tuple[int, int], float]:
    maxima: dict[tuple[int, int], float] = {}
    seen: set[tuple[int, int]] = set()
    for rec in records:
        key = (rec.n_prefetch, rec.epoch_index)
        seen.add(key)
        if rec.status != "ok":
            continue
        t = _time_of(rec)
        if t <= 0:
            raise UsageError(f"non-positive time in ok record {rec}")
        if key not in maxima or t > maxima[key]:
            maxima[key] = t
    for key in sorted(seen - maxima.keys()):
        warnings.warn(f"prefetch group {key[0]} epoch {key[1]} has no ok records; skipped",
                      NormalizationWarning, stacklevel=3)
    return maxima


def _divide(records, maxima) -> list[NormalizedRecord]:
    out = []
    for rec in records:
        if rec.status != "ok":
            continue
        key = (rec.n_prefetch, rec.epoch_index)
        if key not in maxima:
            raise UsageError(f"no fitted maximum for prefetch {key[0]} epoch {key[1]}")
        t = _time_of(rec)
        out.append(NormalizedRecord(rec.n_worker, rec.n_prefetch, rec.epoch_index, t / maxima[key]))
    return out


def normalize_by_prefetch(records: Sequence) -> list[NormalizedRecord]:
    """Divide each time by the largest time sharing its prefetch factor and epoch.

    Accepts :class:`GridRecord` or already normalized records (which come
    back unchanged). Non-ok records are dropped.
    """
    return _divide(records, _group_maxima(records))


class PrefetchNormalizer(TransformerMixin, BaseEstimator):
    """Learn per-(prefetch, epoch) maxima in ``fit``; divide by them in ``transform``."""

    def fit(self, X, y=None):
        self.group_max_ = _group_maxima(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "group_max_")
        return _divide(X, self.group_max_)


def time_gain(optimal_time: float, baseline_time: float) -> float:
    """Percent change from the baseline; negative means the optimum is faster."""
    if baseline_time <= 0:
        raise UsageError(f"baseline_time must be > 0, got {baseline_time}")
    return 100.0 * (optimal_time - baseline_time) / baseline_time


def speedup(optimal_time: float, baseline_time: float) -> float:
    if optimal_time <= 0 or baseline_time <= 0:
        raise UsageError("speedup needs positive times")
    return baseline_time / optimal_time


def _class_time(times_ns: Sequence[int], epoch_class: str) -> float | None:
    if epoch_class == "first":
        return times_ns[0] / NS_PER_S if times_ns else None
    tail = times_ns[1:]
    return sum(tail) / len(tail) / NS_PER_S if tail else None


def _cells(records: Iterable[GridRecord]) -> dict[tuple[int, int], list[int]]:
    cells: dict[tuple[int, int], dict[int, int]] = defaultdict(dict)
    bad = set()
    for rec in records:
        if rec.status != "ok":
            bad.add((rec.n_worker, rec.n_prefetch))
        else:
            cells[(rec.n_worker, rec.n_prefetch)][rec.epoch_index] = rec.transfer_time_ns
    return {k: [v[e] for e in sorted(v)] for k, v in cells.items() if k not in bad}


def summarize(records: Iterable[GridRecord], baseline: Sequence[int] | TrialResult, *,
              batch_size: int, variant: str = "") -> list[SummaryRow]:
    """Best cell per epoch class against the baseline, like the gain/speedup tables.

    ``first`` scores cells by their first epoch and ``after_2nd`` by the mean
    of the remaining epochs. Ties keep the cell that comes first in the grid.
    """
    base_times = baseline.epoch_times_ns if isinstance(baseline, TrialResult) else list(baseline)
    cells = _cells(records)
    rows = []
    for epoch_class in ("first", "after_2nd"):
        base = _class_time(base_times, epoch_class)
        scored = [(t, cell) for cell, times in cells.items()
                  if (t := _class_time(times, epoch_class)) is not None]
        if base is None or not scored:
            continue
        best_t, (w, p) = min(scored, key=lambda s: s[0])
        rows.append(SummaryRow(batch_size, variant, epoch_class, w, p, best_t, base,
                               time_gain(best_t, base), speedup(best_t, base)))
    return rows


# -- files -----------------------------------------------------------------

def write_grid_csv(records: Iterable[GridRecord], path) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(GRID_COLUMNS)
            for rec in records:
                writer.writerow([rec.n_worker, rec.n_prefetch, rec.epoch_index,
                                 format_ns(rec.transfer_time_ns), rec.status])
    except OSError as exc:
        raise DPTError(f"cannot write {path}: {exc}") from exc
    return path


def read_grid_csv(path) -> list[GridRecord]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DPTError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows or tuple(rows[0]) != GRID_COLUMNS:
        raise ReportFormatError(path, 1, f"expected header {','.join(GRID_COLUMNS)}")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(GRID_COLUMNS):
            raise ReportFormatError(path, lineno, f"expected {len(GRID_COLUMNS)} fields, got {len(row)}")
        try:
            rec = GridRecord(int(row[0]), int(row[1]), int(row[2]), parse_ns(row[3]), row[4])
        except ValueError as exc:
            raise ReportFormatError(path, lineno, str(exc)) from exc
        if rec.status not in STATUSES:
            raise ReportFormatError(path, lineno, f"unknown status {rec.status!r}")
        records.append(rec)
    return records


def write_normalized_csv(records: Iterable[NormalizedRecord], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(NORMALIZED_COLUMNS)
        for rec in records:
            writer.writerow([rec.n_worker, rec.n_prefetch, rec.epoch_index, repr(rec.value)])
    return path


def write_summary_csv(rows: Iterable[SummaryRow], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for r in rows:
            writer.writerow([r.batch_size, r.variant, r.epoch_class, r.optimal_workers,
                             r.optimal_prefetch, repr(r.transfer_time), repr(r.baseline_time),
                             repr(r.gain_percent), repr(r.speedup)])
    return path


def format_summary(rows: Sequence[SummaryRow]) -> str:
    """Human table; times in milliseconds, gain and speedup to two decimals."""
    lines = [f"{'epoch':<10} {'workers':>7} {'prefetch':>8} {'time_ms':>12} "
             f"{'baseline_ms':>12} {'gain_%':>8} {'speedup':>8}"]
    for r in rows:
        lines.append(f"{r.epoch_class:<10} {r.optimal_workers:>7} {r.optimal_prefetch:>8} "
                     f"{r.transfer_time * 1e3:>12.3f} {r.baseline_time * 1e3:>12.3f} "
                     f"{r.gain_percent:>8.2f} {r.speedup:>7.2f}x")
    return "\n".join(lines)


def trial_to_dict(trial: TrialResult) -> dict:
    return {
        "n_worker": trial.n_worker,
        "n_prefetch": trial.n_prefetch,
        "epoch_times_ns": list(trial.epoch_times_ns),
        "status": trial.status,
        "baseline_only": trial.baseline_only,
    }


def trial_from_dict(d: dict) -> TrialResult:
    return TrialResult(int(d["n_worker"]), int(d["n_prefetch"]),
                       tuple(int(t) for t in d["epoch_times_ns"]), str(d["status"]),
                       bool(d.get("baseline_only", False)))


def outcome_to_dict(outcome: TuneOutcome) -> dict:
    return {
        "n_worker": outcome.n_worker,
        "n_prefetch": outcome.n_prefetch,
        "optimal_time_s": outcome.optimal_time,
        "objective": outcome.objective,
        "trials": [trial_to_dict(t) for t in outcome.trials],
        "pruned": [trial_to_dict(t) for t in outcome.pruned],
        "search_order": [list(c) for c in outcome.search_order],
        "baseline": None if outcome.baseline is None else trial_to_dict(outcome.baseline),
    }


def outcome_from_dict(d: dict) -> TuneOutcome:
    return TuneOutcome(
        n_worker=int(d["n_worker"]),
        n_prefetch=int(d["n_prefetch"]),
        optimal_time=float(d["optimal_time_s"]),
        objective=str(d["objective"]),
        trials=tuple(trial_from_dict(t) for t in d["trials"]),
        pruned=tuple(trial_from_dict(t) for t in d["pruned"]),
        search_order=tuple((int(i), int(j)) for i, j in d["search_order"]),
        baseline=None if d.get("baseline") is None else trial_from_dict(d["baseline"]),
    )


def read_outcome_json(path) -> TuneOutcome:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return outcome_from_dict(data)
    except OSError as exc:
        raise DPTError(f"cannot read {path}: {exc}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise ReportFormatError(path, 1, f"malformed outcome: {exc}") from exc


def emit(grid: Sequence[GridRecord], summaries: Sequence[SummaryRow], fmt: str, out,
         outcome: TuneOutcome | None = None) -> Path:
    """Write a grid (CSV) or an outcome document (JSON) to ``out``.

    The JSON document is the outcome's fields at top level (including
    ``baseline``), plus ``grid`` and ``summaries``.
    """
    out = Path(out)
    if fmt == "csv":
        return write_grid_csv(grid, out)
    if fmt != "json":
        raise UsageError(f"format must be csv or json, got {fmt!r}")
    doc = outcome_to_dict(outcome) if outcome is not None else {"baseline": None}
    doc["grid"] = [
        {"n_worker": r.n_worker, "n_prefetch": r.n_prefetch, "epoch": r.epoch_index,
         "transfer_time_ns": r.transfer_time_ns, "status": r.status}
        for r in grid
    ]
    doc["summaries"] = [asdict(s) for s in summaries]
    try:
        out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DPTError(f"cannot write {out}: {exc}") from exc
    return out
