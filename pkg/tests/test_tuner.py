from __future__ import annotations

import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dptune.dataset import CacheEmulator, LatencyModel, Manifest, generate_dataset
from dptune.errors import NoFeasibleConfigurationError, TrialError, UsageError
from dptune.pipeline import TransformCost
from dptune.tuner import (
    DataloaderParameterTuner,
    TrialResult,
    TuneConfig,
    check_overflow,
    dpt_search,
    estimate_memory,
    grid_cells,
    objective_value,
    run_trial,
    worker_values,
)

from oracles import brute_force_search

LAT = LatencyModel(miss_seek=5e-5, miss_per_byte=4e-9, hit_seek=1e-6, hit_per_byte=1e-10)


@pytest.fixture(scope="module")
def ds(tmp_path_factory):
    return generate_dataset(tmp_path_factory.mktemp("tuner"), 96, 512, seed=5)


def test_estimate_memory():
    assert estimate_memory(1, 1, 1, 1, 0) == 1
    assert estimate_memory(10, 4, 32, 3072, 0) == 3_932_160
    assert estimate_memory(1, 1, 1, 1, 2 ** 30) >= 2 ** 30


def test_check_overflow_boundary():
    assert check_overflow(100, 100) is False
    assert check_overflow(101, 100) is True
    assert check_overflow(10 ** 18, None) is False


def test_overflow_monotone_in_prefetch():
    budget = estimate_memory(4, 3, 16, 100, 50)
    flags = [check_overflow(estimate_memory(4, p, 16, 100, 50), budget) for p in range(1, 8)]
    assert flags == sorted(flags)


def test_worker_values_are_multiples_of_gpus():
    assert worker_values(TuneConfig(cpus=12, gpus=4)) == [4, 8, 12]
    assert worker_values(TuneConfig(cpus=12, gpus=5)) == [5, 10]
    assert worker_values(TuneConfig(cpus=4, gpus=1, max_workers=48))[-1] == 48


def test_tune_config_validation():
    with pytest.raises(UsageError):
        TuneConfig(cpus=2, gpus=3)
    with pytest.raises(UsageError):
        TuneConfig(cpus=4, max_prefetch=0)
    with pytest.raises(UsageError):
        TuneConfig(cpus=4, objective="fastest")
    with pytest.raises(UsageError):
        TuneConfig(cpus=4, objective="steady_state", epochs_per_trial=1)


def test_objective_value_modes():
    trial = TrialResult(1, 1, (10 * 10 ** 9, 2 * 10 ** 9, 2 * 10 ** 9))
    assert objective_value(trial, "total") == 14.0
    assert objective_value(trial, "first_epoch") == 10.0
    assert objective_value(trial, "steady_state") == 2.0
    with pytest.raises(UsageError):
        objective_value(TrialResult(1, 1, (5,)), "steady_state")
    with pytest.raises(UsageError):
        objective_value(TrialResult(1, 1, (), "host_overflow"))


def test_trial_warm_epochs_faster(ds):
    cfg = TuneConfig(cpus=4, epochs_per_trial=3, batch_size=16, latency=LAT)
    trial = run_trial(2, 2, cfg, ds, CacheEmulator(ds.total_bytes))
    first, second, third = trial.epoch_times_ns
    assert trial.ok
    assert first > second
    assert second == third


def test_trial_host_overflow_short_circuits(ds):
    cfg = TuneConfig(cpus=4, batch_size=16, host_budget=10)
    trial = run_trial(1, 1, cfg, ds, CacheEmulator(0))
    assert trial.status == "host_overflow"
    assert trial.epoch_times_ns == ()


def test_trial_sink_overflow():
    cfg = TuneConfig(cpus=4, batch_size=8, sink_budget=7 * 100)
    trial = run_trial(1, 1, cfg, Manifest.sized(16, 100), CacheEmulator(0))
    assert trial.status == "sink_overflow"


def test_trial_errors_carry_context(tmp_path):
    m = generate_dataset(tmp_path, 8, 16)
    (tmp_path / m.items[3].path).unlink()
    with pytest.raises(TrialError) as info:
        run_trial(2, 3, TuneConfig(cpus=4, batch_size=2), m, CacheEmulator(1000))
    assert (info.value.n_worker, info.value.n_prefetch) == (2, 3)


def test_trial_resets_cache_when_asked(ds):
    cache = CacheEmulator(ds.total_bytes)
    cfg = TuneConfig(cpus=2, batch_size=16, latency=LAT, epochs_per_trial=1)
    cold = run_trial(1, 1, cfg, ds, cache)
    again = run_trial(1, 1, cfg, ds, cache)
    assert cold.epoch_times_ns == again.epoch_times_ns
    no_reset = TuneConfig(cpus=2, batch_size=16, latency=LAT, epochs_per_trial=1,
                          reset_cache_between_trials=False)
    warm = run_trial(1, 1, no_reset, ds, cache)
    assert warm.epoch_times_ns[0] < cold.epoch_times_ns[0]


@pytest.mark.parametrize("objective", ["total", "first_epoch", "steady_state"])
def test_search_matches_brute_force(ds, objective):
    cfg = TuneConfig(cpus=4, gpus=1, max_prefetch=2, batch_size=8, latency=LAT,
                     transform=TransformCost(per_item=2e-5), drain_per_batch=3e-4,
                     objective=objective, epochs_per_trial=2)
    outcome = dpt_search(cfg, ds, CacheEmulator(ds.total_bytes))
    best, value, table = brute_force_search(cfg, ds, ds.total_bytes)
    assert len(outcome.trials) == 8
    assert (outcome.n_worker, outcome.n_prefetch) == best
    assert outcome.optimal_time == value / 1e9
    assert {(t.n_worker, t.n_prefetch): list(t.epoch_times_ns) for t in outcome.trials} == table


def test_ties_keep_the_earliest_cell(ds):
    # drain dominates every cell equally, so the whole grid ties
    cfg = TuneConfig(cpus=3, max_prefetch=3, batch_size=32, latency=LatencyModel(0, 0, 0, 0),
                     drain_per_batch=1.0, epochs_per_trial=1)
    outcome = dpt_search(cfg, ds, CacheEmulator(ds.total_bytes))
    assert len({t.epoch_times_ns for t in outcome.trials}) == 1
    assert (outcome.n_worker, outcome.n_prefetch) == (1, 1)


def test_search_order_and_break(ds):
    cache = CacheEmulator(ds.total_bytes)
    item = ds.max_item_bytes
    budget = int(estimate_memory(3, 1, 8, item, cache.capacity) * 1.001)
    cfg = TuneConfig(cpus=3, max_prefetch=3, batch_size=8, host_budget=budget, epochs_per_trial=1)
    outcome = dpt_search(cfg, ds, cache)
    assert outcome.search_order == ((1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (3, 1), (3, 2))
    assert [(t.n_worker, t.n_prefetch) for t in outcome.trials] == [(1, 1), (1, 2), (1, 3), (2, 1), (3, 1)]
    assert [(t.n_worker, t.n_prefetch) for t in outcome.pruned] == [(2, 2), (2, 3), (3, 2), (3, 3)]
    for t in outcome.pruned:
        assert check_overflow(estimate_memory(t.n_worker, t.n_prefetch, 8, item, cache.capacity), budget)
    # every feasible cell was measured
    measured = {(t.n_worker, t.n_prefetch) for t in outcome.trials}
    for cell in grid_cells(cfg):
        feasible = not check_overflow(estimate_memory(*cell, 8, item, cache.capacity), budget)
        assert feasible == (cell in measured)


def test_no_feasible_cell(ds):
    cfg = TuneConfig(cpus=2, batch_size=8, host_budget=1)
    with pytest.raises(NoFeasibleConfigurationError):
        dpt_search(cfg, ds, CacheEmulator(0))


def test_all_sink_overflow_is_infeasible():
    cfg = TuneConfig(cpus=2, batch_size=8, sink_budget=10)
    with pytest.raises(NoFeasibleConfigurationError):
        dpt_search(cfg, Manifest.sized(16, 100), CacheEmulator(0))


def test_baseline_reused_from_grid(ds):
    cfg = TuneConfig(cpus=6, max_prefetch=2, batch_size=16, latency=LAT, epochs_per_trial=1)
    outcome = dpt_search(cfg, ds, CacheEmulator(ds.total_bytes))
    assert outcome.baseline in outcome.trials
    assert not outcome.baseline.baseline_only


def test_baseline_measured_outside_grid(ds):
    cfg = TuneConfig(cpus=8, gpus=4, max_prefetch=1, batch_size=16, latency=LAT, epochs_per_trial=1)
    outcome = dpt_search(cfg, ds, CacheEmulator(ds.total_bytes))
    assert (outcome.baseline.n_worker, outcome.baseline.n_prefetch) == (6, 2)
    assert outcome.baseline.baseline_only
    assert outcome.baseline not in outcome.trials


def test_estimator_fit(ds):
    tuner = DataloaderParameterTuner(cpus=4, max_prefetch=2, batch_size=8, latency=LAT,
                                     drain_per_batch=2e-4, epochs_per_trial=1)
    with pytest.raises(NotFittedError):
        tuner.loader_config()
    tuner.fit(ds)
    assert tuner.best_params_ == {"num_workers": tuner.n_worker_, "prefetch_factor": tuner.n_prefetch_}
    assert tuner.loader_config().num_workers == tuner.n_worker_
    assert tuner.optimal_time_ == tuner.outcome_.optimal_time
    assert tuner.get_params()["cpus"] == 4
    cloned = clone(tuner).set_params(max_prefetch=1)
    assert cloned.get_params()["max_prefetch"] == 1
    assert not hasattr(cloned, "outcome_")


def test_estimator_accepts_manifest_path(ds):
    tuner = DataloaderParameterTuner(cpus=2, max_prefetch=1, batch_size=32, epochs_per_trial=1)
    tuner.fit(str(ds.root))
    assert tuner.n_worker_ in (1, 2)


def test_estimator_rejects_other_inputs():
    with pytest.raises(UsageError):
        DataloaderParameterTuner(cpus=2).fit([1, 2, 3])
