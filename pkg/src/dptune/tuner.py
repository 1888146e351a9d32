"""Grid search over worker count and prefetch factor.

Worker counts step in multiples of the consumer count so each consumer is
fed by the same number of workers. For each worker count, prefetch factors
are tried in ascending order, and the first one whose memory estimate
exceeds the host budget ends that row. The fastest measured cell wins;
ties go to the cell visited first.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_budget, check_choice, check_int, check_manifest
from .dataset import CacheEmulator, LatencyModel, Manifest, reset_cache
from .errors import (
    DatasetIntegrityError,
    NoFeasibleConfigurationError,
    SinkOverflowError,
    TrialError,
    UsageError,
)
from .loader import LoaderConfig, SinkConfig, run_epoch
from .pipeline import TransformCost
from .timing import NS_PER_S

log = logging.getLogger(__name__)

OBJECTIVES = ("total", "first_epoch", "steady_state")
STATUSES = ("ok", "host_overflow", "sink_overflow")
BASELINE = (6, 2)


@dataclass(frozen=True)
class TuneConfig:
    cpus: int
    gpus: int = 1
    max_prefetch: int = 4
    max_workers: int | None = None
    host_budget: int | None = None
    sink_budget: int | None = None
    epochs_per_trial: int = 2
    objective: str = "total"
    batch_size: int = 32
    seed: int = 0
    shuffle: bool = False
    drop_last: bool = False
    transform: TransformCost = field(default_factory=TransformCost)
    latency: LatencyModel = field(default_factory=LatencyModel)
    drain_per_batch: float = 0.0
    realtime: bool = False
    reset_cache_between_trials: bool = True
    baseline: tuple[int, int] = BASELINE

    def __post_init__(self):
        check_int(self.gpus, "gpus", minimum=1)
        check_int(self.cpus, "cpus", minimum=self.gpus)
        check_int(self.max_prefetch, "max_prefetch", minimum=1)
        if self.max_workers is not None:
            check_int(self.max_workers, "max_workers", minimum=1)
        check_budget(self.host_budget, "host_budget")
        check_budget(self.sink_budget, "sink_budget")
        check_int(self.epochs_per_trial, "epochs_per_trial", minimum=1)
        check_choice(self.objective, "objective", OBJECTIVES)
        if self.objective == "steady_state" and self.epochs_per_trial < 2:
            raise UsageError("the steady_state objective needs epochs_per_trial >= 2")

    @property
    def worker_bound(self) -> int:
        return self.cpus if self.max_workers is None else self.max_workers

    def loader_config(self, num_workers: int, prefetch_factor: int) -> LoaderConfig:
        return LoaderConfig(
            num_workers=num_workers,
            prefetch_factor=prefetch_factor,
            batch_size=self.batch_size,
            shuffle=self.shuffle,
            seed=self.seed,
            drop_last=self.drop_last,
            transform=self.transform,
            latency=self.latency,
            realtime=self.realtime,
        )

    def sink_config(self) -> SinkConfig:
        return SinkConfig(num_sinks=self.gpus, drain_per_batch=self.drain_per_batch,
                          sink_budget=self.sink_budget)


@dataclass(frozen=True)
class TrialResult:
    n_worker: int
    n_prefetch: int
    epoch_times_ns: tuple[int, ...] = ()
    status: str = "ok"
    baseline_only: bool = False

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def total_time_ns(self) -> int:
        return sum(self.epoch_times_ns)

    @property
    def epoch_times(self) -> tuple[float, ...]:
        return tuple(t / NS_PER_S for t in self.epoch_times_ns)

    @property
    def total_time(self) -> float:
        return self.total_time_ns / NS_PER_S


@dataclass(frozen=True)
class TuneOutcome:
    n_worker: int
    n_prefetch: int
    optimal_time: float
    objective: str
    trials: tuple[TrialResult, ...]
    pruned: tuple[TrialResult, ...]
    search_order: tuple[tuple[int, int], ...]
    baseline: TrialResult | None

    @property
    def best(self) -> TrialResult:
        for trial in self.trials:
            if (trial.n_worker, trial.n_prefetch) == (self.n_worker, self.n_prefetch):
                return trial
        raise LookupError("optimal cell missing from trials")


def estimate_memory(n_worker: int, n_prefetch: int, batch_size: int, item_bytes: int,
                    cache_capacity: int) -> int:
    """Bytes of in-flight prefetched batches plus the cache residency bound."""
    for name, value in (("n_worker", n_worker), ("n_prefetch", n_prefetch),
                        ("batch_size", batch_size), ("item_bytes", item_bytes)):
        check_int(value, name, minimum=1)
    check_int(cache_capacity, "cache_capacity", minimum=0)
    return n_worker * n_prefetch * batch_size * item_bytes + cache_capacity


def check_overflow(estimate: int, host_budget: int | None) -> bool:
    return host_budget is not None and estimate > host_budget


def worker_values(cfg: TuneConfig) -> list[int]:
    """Positive multiples of the consumer count up to the worker bound."""
    return list(range(cfg.gpus, cfg.worker_bound + 1, cfg.gpus))


def grid_cells(cfg: TuneConfig) -> Iterator[tuple[int, int]]:
    """Every cell of the unpruned grid in visiting order."""
    for i in worker_values(cfg):
        for j in range(1, cfg.max_prefetch + 1):
            yield i, j


def _estimate(i: int, j: int, cfg: TuneConfig, manifest: Manifest, cache: CacheEmulator) -> int:
    return estimate_memory(i, j, cfg.batch_size, max(manifest.max_item_bytes, 1), cache.capacity)


def run_trial(i: int, j: int, cfg: TuneConfig, manifest: Manifest, cache: CacheEmulator,
              baseline_only: bool = False) -> TrialResult:
    """Measure one cell for ``cfg.epochs_per_trial`` epochs."""
    check_int(i, "workers", minimum=1)
    check_int(j, "prefetch", minimum=1)
    if cfg.reset_cache_between_trials:
        reset_cache(cache)
    if check_overflow(_estimate(i, j, cfg, manifest, cache), cfg.host_budget):
        return TrialResult(i, j, (), "host_overflow", baseline_only)
    loader = cfg.loader_config(i, j)
    sinks = cfg.sink_config()
    times = []
    try:
        for epoch in range(cfg.epochs_per_trial):
            report = run_epoch(loader, sinks, manifest, cache, epoch_index=epoch)
            times.append(report.transfer_time_ns)
    except SinkOverflowError:
        return TrialResult(i, j, (), "sink_overflow", baseline_only)
    except (DatasetIntegrityError, OSError, RuntimeError) as exc:
        raise TrialError(i, j, exc) from exc
    log.debug("trial workers=%d prefetch=%d epochs_ns=%s", i, j, times)
    return TrialResult(i, j, tuple(times), "ok", baseline_only)


def objective_value(trial: TrialResult, objective: str = "total") -> float:
    """Seconds to minimize for a successful trial."""
    check_choice(objective, "objective", OBJECTIVES)
    if not trial.ok:
        raise UsageError(f"trial ({trial.n_worker}, {trial.n_prefetch}) has status {trial.status}")
    times = trial.epoch_times_ns
    if objective == "total":
        return sum(times) / NS_PER_S
    if objective == "first_epoch":
        return times[0] / NS_PER_S
    if len(times) < 2:
        raise UsageError("steady_state needs at least two epochs")
    return sum(times[1:]) / (len(times) - 1) / NS_PER_S


def dpt_search(cfg: TuneConfig, manifest: Manifest, cache: CacheEmulator) -> TuneOutcome:
    """Run the grid search and return the optimum with every trial."""
    trials: list[TrialResult] = []
    pruned: list[TrialResult] = []
    order: list[tuple[int, int]] = []
    best: TrialResult | None = None
    best_value = float("inf")

    for i in worker_values(cfg):
        for j in range(1, cfg.max_prefetch + 1):
            order.append((i, j))
            trial = run_trial(i, j, cfg, manifest, cache)
            if trial.status == "host_overflow":
                pruned.append(trial)
                pruned.extend(TrialResult(i, k, (), "host_overflow")
                              for k in range(j + 1, cfg.max_prefetch + 1))
                log.info("host overflow at workers=%d prefetch=%d; skipping prefetch>%d", i, j, j)
                break
            trials.append(trial)
            if trial.ok:
                value = objective_value(trial, cfg.objective)
                if value < best_value:
                    best, best_value = trial, value

    if best is None:
        raise NoFeasibleConfigurationError(
            f"no feasible (workers, prefetch) cell among {len(order)} attempted"
        )
    baseline = _baseline_trial(cfg, manifest, cache, trials)
    return TuneOutcome(
        n_worker=best.n_worker,
        n_prefetch=best.n_prefetch,
        optimal_time=best_value,
        objective=cfg.objective,
        trials=tuple(trials),
        pruned=tuple(pruned),
        search_order=tuple(order),
        baseline=baseline,
    )


def _baseline_trial(cfg, manifest, cache, trials) -> TrialResult | None:
    if cfg.baseline is None:
        return None
    bw, bp = cfg.baseline
    for trial in trials:
        if (trial.n_worker, trial.n_prefetch) == (bw, bp):
            return trial
    return run_trial(bw, bp, cfg, manifest, cache, baseline_only=True)


class DataloaderParameterTuner(BaseEstimator):
    """Estimator front end for :func:`dpt_search`.

    ``fit`` takes a :class:`~dptune.dataset.Manifest` (or a path to one) and
    sets ``n_worker_``, ``n_prefetch_``, ``optimal_time_``, ``best_params_``,
    ``trials_``, ``baseline_`` and ``outcome_``.

    Parameters mirror :class:`TuneConfig`. ``cache_capacity`` sizes the
    cache emulator that ``fit`` creates when none is passed; ``None`` means
    the whole dataset fits.
    """

    def __init__(self, cpus=12, gpus=1, max_prefetch=4, max_workers=None, host_budget=None,
                 sink_budget=None, epochs_per_trial=2, objective="total", batch_size=32, seed=0,
                 shuffle=False, drop_last=False, transform=None, latency=None, drain_per_batch=0.0,
                 realtime=False, reset_cache_between_trials=True, cache_capacity=None):
        self.cpus = cpus
        self.gpus = gpus
        self.max_prefetch = max_prefetch
        self.max_workers = max_workers
        self.host_budget = host_budget
        self.sink_budget = sink_budget
        self.epochs_per_trial = epochs_per_trial
        self.objective = objective
        self.batch_size = batch_size
        self.seed = seed
        self.shuffle = shuffle
        self.drop_last = drop_last
        self.transform = transform
        self.latency = latency
        self.drain_per_batch = drain_per_batch
        self.realtime = realtime
        self.reset_cache_between_trials = reset_cache_between_trials
        self.cache_capacity = cache_capacity

    def to_config(self) -> TuneConfig:
        return TuneConfig(
            cpus=self.cpus,
            gpus=self.gpus,
            max_prefetch=self.max_prefetch,
            max_workers=self.max_workers,
            host_budget=self.host_budget,
            sink_budget=self.sink_budget,
            epochs_per_trial=self.epochs_per_trial,
            objective=self.objective,
            batch_size=self.batch_size,
            seed=self.seed,
            shuffle=self.shuffle,
            drop_last=self.drop_last,
            transform=self.transform or TransformCost(),
            latency=self.latency or LatencyModel(),
            drain_per_batch=self.drain_per_batch,
            realtime=self.realtime,
            reset_cache_between_trials=self.reset_cache_between_trials,
        )

    def fit(self, X, y=None, cache: CacheEmulator | None = None):
        manifest = check_manifest(X)
        cfg = self.to_config()
        if cache is None:
            capacity = manifest.total_bytes if self.cache_capacity is None else self.cache_capacity
            cache = CacheEmulator(capacity)
        outcome = dpt_search(cfg, manifest, cache)
        self.outcome_ = outcome
        self.n_worker_ = outcome.n_worker
        self.n_prefetch_ = outcome.n_prefetch
        self.optimal_time_ = outcome.optimal_time
        self.best_params_ = {"num_workers": outcome.n_worker, "prefetch_factor": outcome.n_prefetch}
        self.trials_ = list(outcome.trials)
        self.baseline_ = outcome.baseline
        return self

    def loader_config(self) -> LoaderConfig:
        """Loader settings using the tuned worker count and prefetch factor."""
        check_is_fitted(self, "outcome_")
        return self.to_config().loader_config(self.n_worker_, self.n_prefetch_)

