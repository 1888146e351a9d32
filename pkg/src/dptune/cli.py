"""Command line entry point: ``dptune gen|bench|tune|report``.

Exit codes: 0 success, 1 I/O or integrity failure, 2 usage error,
3 overflow during ``bench``, 4 no feasible cell during ``tune``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import time
from dataclasses import asdict
from pathlib import Path

from .dataset import CacheEmulator, LatencyModel, generate_dataset, load_manifest, resolution_bytes
from .errors import DPTError, NoFeasibleConfigurationError, SinkOverflowError, UsageError
from .loader import LoaderConfig, SinkConfig, run_epoch
from .pipeline import TransformCost
from .report import (
    emit,
    format_summary,
    grid_records,
    normalize_by_prefetch,
    read_grid_csv,
    read_outcome_json,
    summarize,
    write_normalized_csv,
    write_summary_csv,
)
from .timing import format_ns
from .tuner import BASELINE, TrialResult, TuneConfig, check_overflow, dpt_search, estimate_memory

log = logging.getLogger("dptune")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_OVERFLOW, EXIT_INFEASIBLE = 0, 1, 2, 3, 4

_UNITS = {"": 1, "b": 1, "kib": 1024, "mib": 1024 ** 2, "gib": 1024 ** 3, "tib": 1024 ** 4}
_SIZE_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([a-zA-Z]*)\s*$")


def parse_bytes(text: str) -> int:
    """``"512MiB"`` -> 536870912. Suffixes are powers of 1024."""
    m = _SIZE_RE.match(text)
    if not m or m.group(2).lower() not in _UNITS:
        raise argparse.ArgumentTypeError(f"invalid byte size {text!r} (use B, KiB, MiB, GiB, TiB)")
    value = float(m.group(1)) * _UNITS[m.group(2).lower()]
    if value != int(value):
        raise argparse.ArgumentTypeError(f"{text!r} is not a whole number of bytes")
    return int(value)


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {value}")
    return value


def _seconds(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected seconds, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("durations must be >= 0")
    return value


def _add_loader_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, help="manifest file or dataset directory")
    p.add_argument("--batch", type=_positive_int, default=32)
    p.add_argument("--epochs", type=_positive_int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shuffle", action="store_true")
    p.add_argument("--drop-last", action="store_true")
    p.add_argument("--mode", choices=("virtual", "realtime"), default="virtual")
    lat = LatencyModel()
    p.add_argument("--miss-seek", type=_seconds, default=lat.miss_seek)
    p.add_argument("--miss-per-byte", type=_seconds, default=lat.miss_per_byte)
    p.add_argument("--hit-seek", type=_seconds, default=lat.hit_seek)
    p.add_argument("--hit-per-byte", type=_seconds, default=lat.hit_per_byte)
    p.add_argument("--transform-per-item", type=_seconds, default=0.0)
    p.add_argument("--transform-per-byte", type=_seconds, default=0.0)
    p.add_argument("--drain", type=_seconds, default=0.0, help="seconds a sink spends per batch")
    p.add_argument("--cache-capacity", type=parse_bytes, default=None,
                   help="emulated page cache size (default: whole dataset)")
    p.add_argument("--sink-budget", type=parse_bytes, default=None)
    p.add_argument("--host-budget", type=parse_bytes, default=None)
    p.add_argument("--run-dir", default=None,
                   help="output directory (default: $DPT_RUN_DIR/<command>-<timestamp>)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dptune", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a synthetic dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--items", type=_positive_int, required=True)
    size = gen.add_mutually_exclusive_group(required=True)
    size.add_argument("--item-bytes", type=_positive_int)
    size.add_argument("--resolution", type=_positive_int, help="square RGB items, 3*r*r bytes")
    gen.add_argument("--labels", type=_positive_int, default=10)
    gen.add_argument("--seed", type=int, default=0)

    bench = sub.add_parser("bench", help="measure one (workers, prefetch) configuration")
    _add_loader_flags(bench)
    bench.add_argument("--workers", type=_positive_int, default=BASELINE[0])
    bench.add_argument("--prefetch", type=_positive_int, default=BASELINE[1])
    bench.add_argument("--sinks", type=_positive_int, default=1)

    tune = sub.add_parser("tune", help="grid-search workers and prefetch factor")
    _add_loader_flags(tune)
    tune.add_argument("--cpus", type=_positive_int, default=os.cpu_count() or 1)
    tune.add_argument("--gpus", type=_positive_int, default=1)
    tune.add_argument("--max-prefetch", type=_positive_int, default=4)
    tune.add_argument("--max-workers", type=_positive_int, default=None)
    tune.add_argument("--objective", choices=("total", "first_epoch", "steady_state"),
                      default="total")
    tune.add_argument("--no-reset-cache", action="store_true",
                      help="keep the cache warm between trials")

    report = sub.add_parser("report", help="normalize a grid and summarize gain/speedup")
    report.add_argument("--run", required=True)
    report.add_argument("--baseline-run", default=None)
    report.add_argument("--variant", default="")
    return parser


def _run_dir(args, command: str) -> Path:
    if args.run_dir:
        path = Path(args.run_dir)
    else:
        root = Path(os.environ.get("DPT_RUN_DIR", "runs"))
        path = root / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _attach_log(run_dir: Path) -> logging.Handler:
    handler = logging.FileHandler(run_dir / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("dptune").addHandler(handler)
    logging.getLogger("dptune").setLevel(logging.DEBUG)
    return handler


def _costs(args):
    latency = LatencyModel(args.miss_seek, args.miss_per_byte, args.hit_seek, args.hit_per_byte)
    transform = TransformCost(args.transform_per_item, args.transform_per_byte)
    return latency, transform


def _snapshot(run_dir: Path, args, manifest) -> None:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    config["manifest_fingerprint"] = manifest.spec_fingerprint
    (run_dir / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")


def cmd_gen(args) -> int:
    item_bytes = args.item_bytes if args.item_bytes is not None else resolution_bytes(args.resolution)
    manifest = generate_dataset(args.out, args.items, item_bytes, args.labels, args.seed)
    print(f"item_bytes={item_bytes}")
    print(f"total_bytes={manifest.total_bytes}")
    return EXIT_OK


def cmd_bench(args) -> int:
    manifest = load_manifest(args.manifest)
    latency, transform = _costs(args)
    run_dir = _run_dir(args, "bench")
    _snapshot(run_dir, args, manifest)
    handler = _attach_log(run_dir)
    try:
        cache = CacheEmulator(manifest.total_bytes if args.cache_capacity is None
                              else args.cache_capacity)
        config = LoaderConfig(num_workers=args.workers, prefetch_factor=args.prefetch,
                              batch_size=args.batch, shuffle=args.shuffle, seed=args.seed,
                              drop_last=args.drop_last, transform=transform, latency=latency,
                              realtime=args.mode == "realtime")
        sinks = SinkConfig(num_sinks=args.sinks, drain_per_batch=args.drain,
                           sink_budget=args.sink_budget)
        estimate = estimate_memory(args.workers, args.prefetch, args.batch,
                                   max(manifest.max_item_bytes, 1), cache.capacity)
        status, times = "ok", []
        if check_overflow(estimate, args.host_budget):
            status = "host_overflow"
        else:
            try:
                for epoch in range(args.epochs):
                    rep = run_epoch(config, sinks, manifest, cache, epoch_index=epoch)
                    times.append(rep.transfer_time_ns)
                    print(f"epoch={epoch} transfer_time={format_ns(rep.transfer_time_ns)}s "
                          f"batches={rep.batch_count} hits={rep.cache_hits} misses={rep.cache_misses}")
            except SinkOverflowError as exc:
                log.warning("%s", exc)
                status, times = "sink_overflow", []
        trial = TrialResult(args.workers, args.prefetch, tuple(times), status)
        emit(grid_records([trial]), [], "csv", run_dir / "grid.csv")
        print(f"status={status}")
        return EXIT_OK if status == "ok" else EXIT_OVERFLOW
    finally:
        logging.getLogger("dptune").removeHandler(handler)
        handler.close()


def cmd_tune(args) -> int:
    manifest = load_manifest(args.manifest)
    latency, transform = _costs(args)
    cfg = TuneConfig(
        cpus=args.cpus, gpus=args.gpus, max_prefetch=args.max_prefetch,
        max_workers=args.max_workers, host_budget=args.host_budget,
        sink_budget=args.sink_budget, epochs_per_trial=args.epochs, objective=args.objective,
        batch_size=args.batch, seed=args.seed, shuffle=args.shuffle, drop_last=args.drop_last,
        transform=transform, latency=latency, drain_per_batch=args.drain,
        realtime=args.mode == "realtime", reset_cache_between_trials=not args.no_reset_cache,
    )
    run_dir = _run_dir(args, "tune")
    _snapshot(run_dir, args, manifest)
    handler = _attach_log(run_dir)
    try:
        cache = CacheEmulator(manifest.total_bytes if args.cache_capacity is None
                              else args.cache_capacity)
        log.info("tuning %s", json.dumps(asdict(cfg), default=str, sort_keys=True))
        outcome = dpt_search(cfg, manifest, cache)
        grid = grid_records(outcome.trials)
        emit(grid, [], "csv", run_dir / "grid.csv")
        emit(grid, [], "json", run_dir / "outcome.json", outcome=outcome)
        print(f"run_dir={run_dir}")
        print(f"trials={len(outcome.trials)} pruned={len(outcome.pruned)}")
        print(f"nWorker={outcome.n_worker} nPrefetch={outcome.n_prefetch} "
              f"optimal_time={outcome.optimal_time:.9f}s")
        return EXIT_OK
    finally:
        logging.getLogger("dptune").removeHandler(handler)
        handler.close()


def _baseline_times(run: Path) -> list[int] | None:
    """Baseline epoch times from a run: its outcome.json, else its (6, 2) grid cell."""
    outcome_path = run / "outcome.json"
    if outcome_path.exists():
        outcome = read_outcome_json(outcome_path)
        if outcome.baseline is not None and outcome.baseline.ok:
            return list(outcome.baseline.epoch_times_ns)
    grid_path = run / "grid.csv"
    if grid_path.exists():
        cell = sorted((r.epoch_index, r.transfer_time_ns) for r in read_grid_csv(grid_path)
                      if (r.n_worker, r.n_prefetch) == BASELINE and r.status == "ok")
        if cell:
            return [t for _, t in cell]
    return None


def cmd_report(args) -> int:
    run = Path(args.run)
    if not run.is_dir():
        print(f"dptune report: run directory {run} does not exist", file=sys.stderr)
        return EXIT_USAGE
    grid = read_grid_csv(run / "grid.csv")
    normalized = normalize_by_prefetch(grid)
    write_normalized_csv(normalized, run / "normalized.csv")
    print(f"normalized={run / 'normalized.csv'} records={len(normalized)}")

    baseline_run = Path(args.baseline_run) if args.baseline_run else run
    if not baseline_run.is_dir():
        print(f"dptune report: baseline run {baseline_run} does not exist", file=sys.stderr)
        return EXIT_USAGE
    base = _baseline_times(baseline_run)
    if base is None:
        print("no baseline (6, 2) measurement found; summary skipped")
        return EXIT_OK
    batch_size = 0
    config_path = run / "config.json"
    if config_path.exists():
        batch_size = int(json.loads(config_path.read_text()).get("batch", 0))
    rows = summarize(grid, base, batch_size=batch_size, variant=args.variant)
    write_summary_csv(rows, run / "summary.csv")
    print(format_summary(rows))
    return EXIT_OK


_COMMANDS = {"gen": cmd_gen, "bench": cmd_bench, "tune": cmd_tune, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    console = logging.StreamHandler()
    console.setLevel(logging.DEBUG if args.verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(console)
    try:
        return _run(args)
    finally:
        log.removeHandler(console)


def _run(args: argparse.Namespace) -> int:
    try:
        return _COMMANDS[args.command](args)
    except NoFeasibleConfigurationError as exc:
        print(f"dptune: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except UsageError as exc:
        print(f"dptune: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DPTError, OSError) as exc:
        print(f"dptune: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
