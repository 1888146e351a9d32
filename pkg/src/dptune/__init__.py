"""Parallel prefetching dataloader with a grid-search tuner for workers and prefetch factor."""

from .dataset import (
    CacheEmulator,
    ItemRecord,
    LatencyModel,
    Manifest,
    generate_dataset,
    load_manifest,
    read_item,
    reset_cache,
    resolution_bytes,
)
from .errors import (
    DatasetIntegrityError,
    DPTError,
    GenerationError,
    NoFeasibleConfigurationError,
    ReportFormatError,
    SinkOverflowError,
    TrialError,
    UsageError,
)
from .loader import EpochReport, LoaderConfig, SinkConfig, assign_batches, run_epoch, simulate_schedule
from .pipeline import Batch, EpochPlan, TransformCost, collate, make_permutation, partition_batches, plan_epoch, transform_item
from .report import GridRecord, PrefetchNormalizer, normalize_by_prefetch, speedup, time_gain
from .tuner import (
    DataloaderParameterTuner,
    TrialResult,
    TuneConfig,
    TuneOutcome,
    check_overflow,
    dpt_search,
    estimate_memory,
    objective_value,
    run_trial,
)

__version__ = "0.1.0"
