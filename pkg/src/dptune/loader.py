"""Parallel prefetching loader.

A run has three kinds of participant:

* ``num_workers`` workers. Each one produces its round-robin share of
  batches in order (read, transform, collate). It may hold at most
  ``prefetch_factor`` batches that are in production or waiting for the
  dispatcher.
* A dispatcher. It releases batches to consumers strictly in sequence
  order. Releasing a batch returns its slot to the worker that made it.
* ``num_sinks`` consumers standing in for GPUs. Batch ``s`` goes to sink
  ``s % num_sinks``, and each sink drains one batch at a time.

Virtual mode charges every cost on an integer-nanosecond clock and computes
the epoch's transfer time with a discrete-event simulation of the rules
above. Realtime mode runs the same rules with threads, busy-waits the
charged costs and measures the epoch on a monotonic clock.
"""

from __future__ import annotations

import heapq
import queue
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

from ._validation import check_budget, check_int, check_nonnegative
from .dataset import CacheEmulator, LatencyModel, Manifest, read_item
from .errors import SinkOverflowError, UsageError
from .pipeline import Batch, EpochPlan, Sample, TransformCost, collate, plan_epoch, transform_item
from .timing import ns_to_seconds, seconds_to_ns, spin, wait


@dataclass(frozen=True)
class LoaderConfig:
    num_workers: int = 1
    prefetch_factor: int = 2
    batch_size: int = 32
    shuffle: bool = False
    seed: int = 0
    drop_last: bool = False
    transform: TransformCost = field(default_factory=TransformCost)
    latency: LatencyModel = field(default_factory=LatencyModel)
    realtime: bool = False
    # realtime only: each batch's busy-wait is scaled by U(1 - jitter, 1 + jitter)
    jitter: float = 0.0

    def __post_init__(self):
        check_int(self.num_workers, "num_workers", minimum=1)
        check_int(self.prefetch_factor, "prefetch_factor", minimum=1)
        check_int(self.batch_size, "batch_size", minimum=1)
        check_int(self.seed, "seed")
        check_nonnegative(self.jitter, "jitter")
        if self.jitter >= 1:
            raise UsageError("jitter must be < 1")


@dataclass(frozen=True)
class SinkConfig:
    num_sinks: int = 1
    drain_per_batch: float = 0.0
    sink_budget: int | None = None  # bytes per batch; None is unbounded

    def __post_init__(self):
        check_int(self.num_sinks, "num_sinks", minimum=1)
        check_nonnegative(self.drain_per_batch, "drain_per_batch")
        check_budget(self.sink_budget, "sink_budget")

    @property
    def drain_ns(self) -> int:
        return seconds_to_ns(self.drain_per_batch)


@dataclass(frozen=True)
class EpochReport:
    transfer_time_ns: int
    batch_count: int
    delivery_order: tuple[int, ...]
    per_worker_batches: tuple[int, ...]
    cache_hits: int
    cache_misses: int
    produce_ns: tuple[int, ...]

    @property
    def transfer_time(self) -> float:
        """Transfer time in seconds."""
        return ns_to_seconds(self.transfer_time_ns)


@dataclass(frozen=True)
class ScheduleTrace:
    """Everything the virtual-time simulation observed about one epoch."""

    transfer_ns: int
    delivery_order: tuple[int, ...]
    release_ns: tuple[int, ...]
    peak_outstanding: tuple[int, ...]


def assign_batches(batch_count: int, num_workers: int) -> list[int]:
    """Worker id for each batch sequence number, round-robin."""
    batch_count = check_int(batch_count, "batch_count", minimum=0)
    num_workers = check_int(num_workers, "num_workers", minimum=1)
    return [seq % num_workers for seq in range(batch_count)]


# event kinds; at equal timestamps drains are handled before productions
_DRAINED, _PRODUCED = 0, 1


def trace_schedule(config: LoaderConfig, sinks: SinkConfig,
                   produce_ns: Sequence[int]) -> ScheduleTrace:
    """Discrete-event simulation of the worker/dispatcher/sink contract."""
    W, Pf, G = config.num_workers, config.prefetch_factor, sinks.num_sinks
    drain = sinks.drain_ns
    B = len(produce_ns)
    owners = assign_batches(B, W)
    pending = [list(range(w, B, W))[::-1] for w in range(W)]  # popped from the end
    busy = [False] * W
    outstanding = [0] * W
    peak = [0] * W
    ready = [False] * B
    sink_busy = [False] * G
    release = [0] * B
    delivered: list[int] = []
    next_seq = 0
    last_drain = 0
    events: list[tuple[int, int, int, int]] = []
    tie = 0

    def push(t, kind, who):
        nonlocal tie
        heapq.heappush(events, (t, kind, tie, who))
        tie += 1

    def try_start(w, t):
        if busy[w] or not pending[w] or outstanding[w] >= Pf:
            return
        seq = pending[w].pop()
        busy[w] = True
        outstanding[w] += 1
        peak[w] = max(peak[w], outstanding[w])
        assert outstanding[w] <= Pf, "worker exceeded its prefetch budget"
        push(t + produce_ns[seq], _PRODUCED, seq)

    def try_dispatch(t):
        nonlocal next_seq
        while next_seq < B and ready[next_seq] and not sink_busy[next_seq % G]:
            seq = next_seq
            sink_busy[seq % G] = True
            release[seq] = t
            delivered.append(seq)
            push(t + drain, _DRAINED, seq % G)
            w = owners[seq]
            outstanding[w] -= 1
            next_seq += 1
            try_start(w, t)

    for w in range(W):
        try_start(w, 0)
    while events:
        t, kind, _, who = heapq.heappop(events)
        if kind == _PRODUCED:
            w = owners[who]
            busy[w] = False
            ready[who] = True
            try_dispatch(t)
            try_start(w, t)
        else:
            sink_busy[who] = False
            last_drain = max(last_drain, t)
            try_dispatch(t)

    assert next_seq == B, "simulation stalled before delivering every batch"
    return ScheduleTrace(last_drain, tuple(delivered), tuple(release), tuple(peak))


def simulate_schedule(config: LoaderConfig, sinks: SinkConfig, produce_ns: Sequence[int]) -> int:
    """Virtual transfer time, in nanoseconds, for batches with the given produce costs."""
    return trace_schedule(config, sinks, produce_ns).transfer_ns


def _check_sink_budget(plan: EpochPlan, manifest: Manifest, sinks: SinkConfig) -> None:
    if sinks.sink_budget is None:
        return
    sizes = manifest.items
    for seq, ids in enumerate(plan.batches):
        nbytes = sum(sizes[i].byte_size for i in ids)
        if nbytes > sinks.sink_budget:
            raise SinkOverflowError(seq, nbytes, sinks.sink_budget)


def _produce(seq: int, ids: Sequence[int], config: LoaderConfig, manifest: Manifest,
             cache: CacheEmulator) -> Batch:
    samples = []
    for item_id in ids:
        raw, read_ns = read_item(manifest, item_id, cache, config.latency)
        out, xform_ns = transform_item(raw, config.transform)
        samples.append(Sample(item_id, out, read_ns + xform_ns))
    return collate(samples, seq)


def run_epoch(config: LoaderConfig, sinks: SinkConfig, manifest: Manifest, cache: CacheEmulator,
              epoch_index: int = 0, on_batch: Callable[[Batch], None] | None = None) -> EpochReport:
    """Load one full epoch and report how long the transfer took.

    ``on_batch`` sees every batch in delivery order. A batch larger than the
    sink budget raises :class:`SinkOverflowError` before any item is read.
    """
    plan = plan_epoch(manifest.item_count, config.batch_size, seed=config.seed,
                      epoch_index=epoch_index, shuffle=config.shuffle, drop_last=config.drop_last)
    _check_sink_budget(plan, manifest, sinks)
    hits0, misses0 = cache.hit_count, cache.miss_count
    if config.realtime:
        transfer, order, produce = _run_realtime(config, sinks, manifest, cache, plan, on_batch)
    else:
        produce = []
        for seq, ids in enumerate(plan.batches):
            batch = _produce(seq, ids, config, manifest, cache)
            produce.append(batch.produce_elapsed_ns)
            if on_batch is not None:
                on_batch(batch)
        trace = trace_schedule(config, sinks, produce)
        transfer, order = trace.transfer_ns, trace.delivery_order
    owners = assign_batches(plan.batch_count, config.num_workers)
    per_worker = [0] * config.num_workers
    for w in owners:
        per_worker[w] += 1
    return EpochReport(
        transfer_time_ns=transfer,
        batch_count=plan.batch_count,
        delivery_order=tuple(order),
        per_worker_batches=tuple(per_worker),
        cache_hits=cache.hit_count - hits0,
        cache_misses=cache.miss_count - misses0,
        produce_ns=tuple(produce),
    )


class _Failure:
    def __init__(self, exc: BaseException):
        self.exc = exc


_POLL_S = 0.05


def _run_realtime(config, sinks, manifest, cache, plan, on_batch):
    W, Pf, G = config.num_workers, config.prefetch_factor, sinks.num_sinks
    B = plan.batch_count
    drain = sinks.drain_ns
    owners = assign_batches(B, W)
    slots = [threading.Semaphore(Pf) for _ in range(W)]
    ready_q = [queue.SimpleQueue() for _ in range(W)]
    sink_free = [threading.Semaphore(1) for _ in range(G)]
    sink_q = [queue.SimpleQueue() for _ in range(G)]
    sink_done = [0] * G
    produce = [0] * B
    abort = threading.Event()

    def worker(w):
        rng = random.Random()
        try:
            for seq in range(w, B, W):
                while not slots[w].acquire(timeout=_POLL_S):
                    if abort.is_set():
                        return
                if abort.is_set():
                    return
                batch = _produce(seq, plan.batches[seq], config, manifest, cache)
                produce[seq] = batch.produce_elapsed_ns
                scale = rng.uniform(1 - config.jitter, 1 + config.jitter) if config.jitter else 1.0
                spin(round(batch.produce_elapsed_ns * scale))
                ready_q[w].put(batch)
        except BaseException as exc:  # handed to the dispatcher, which re-raises
            ready_q[w].put(_Failure(exc))

    def sink(k):
        while True:
            batch = sink_q[k].get()
            if batch is None:
                return
            wait(drain)  # device-side copy, the host core stays free
            sink_done[k] = time.perf_counter_ns()
            sink_free[k].release()

    workers = [threading.Thread(target=worker, args=(w,), daemon=True, name=f"dpt-worker-{w}")
               for w in range(W)]
    drainers = [threading.Thread(target=sink, args=(k,), daemon=True, name=f"dpt-sink-{k}")
                for k in range(G)]
    delivered: list[int] = []
    start = time.perf_counter_ns()
    for t in drainers + workers:
        t.start()
    try:
        for seq in range(B):
            item = ready_q[owners[seq]].get()
            if isinstance(item, _Failure):
                raise item.exc
            if item.seq != seq:
                raise RuntimeError(f"worker {owners[seq]} delivered batch {item.seq}, expected {seq}")
            k = seq % G
            sink_free[k].acquire()
            sink_q[k].put(item)
            slots[owners[seq]].release()
            delivered.append(seq)
            if on_batch is not None:
                on_batch(item)
    except BaseException:
        abort.set()
        raise
    finally:
        for k in range(G):
            sink_q[k].put(None)
        for t in drainers:
            t.join()
        for t in workers:
            t.join()
    end = max(sink_done) if B else time.perf_counter_ns()
    return end - start, delivered, produce
