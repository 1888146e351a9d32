"""Independent reference computations the tests compare against.

None of these call into the code paths they check: the schedule oracle is
a closed-form recurrence rather than an event simulation, the LRU oracle is
a plain list, and the search oracle enumerates every cell with its own
feasibility arithmetic.
"""

from __future__ import annotations

from dptune.dataset import CacheEmulator
from dptune.loader import run_epoch


def recurrence_transfer_ns(workers, prefetch, sinks, drain_ns, costs_ns):
    """Last drain completion by forward recurrence over batch sequence numbers.

    start_s   = max(finish of the worker's previous batch,
                    release of the batch ``prefetch`` places earlier on that worker)
    release_s = max(finish_s, release_{s-1}, release_{s-sinks} + drain)
    """
    n = len(costs_ns)
    if n == 0:
        return 0
    release = [0] * n
    worker_free = [0] * workers
    for s in range(n):
        w = s % workers
        start = worker_free[w]
        if s - prefetch * workers >= 0:
            start = max(start, release[s - prefetch * workers])
        finish = start + costs_ns[s]
        worker_free[w] = finish
        r = finish
        if s >= 1:
            r = max(r, release[s - 1])
        if s >= sinks:
            r = max(r, release[s - sinks] + drain_ns)
        release[s] = r
    return release[-1] + drain_ns


class ListLRU:
    """Byte-budgeted LRU kept as a most-recent-last list of (id, size)."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.entries = []
        self.hits = 0
        self.misses = 0

    def access(self, item_id, size):
        for k, (i, s) in enumerate(self.entries):
            if i == item_id:
                self.entries.append(self.entries.pop(k))
                self.hits += 1
                return True
        self.misses += 1
        if size <= self.capacity:
            while sum(s for _, s in self.entries) + size > self.capacity:
                self.entries.pop(0)
            self.entries.append((item_id, size))
        return False


def brute_force_search(cfg, manifest, capacity):
    """Measure every feasible cell from a fresh cache; return (best cell, value, table).

    Feasibility uses the memory formula written out here, and ties keep
    the first cell in enumeration order.
    """
    item_bytes = max(r.byte_size for r in manifest.items)
    bound = cfg.max_workers or cfg.cpus
    table = {}
    best, best_value = None, None
    for i in range(cfg.gpus, bound + 1, cfg.gpus):
        for j in range(1, cfg.max_prefetch + 1):
            need = i * j * cfg.batch_size * item_bytes + capacity
            if cfg.host_budget is not None and need > cfg.host_budget:
                continue
            cache = CacheEmulator(capacity)
            times = [
                run_epoch(cfg.loader_config(i, j), cfg.sink_config(), manifest, cache, epoch_index=e)
                .transfer_time_ns
                for e in range(cfg.epochs_per_trial)
            ]
            if cfg.objective == "total":
                value = sum(times)
            elif cfg.objective == "first_epoch":
                value = times[0]
            else:
                value = sum(times[1:]) / (len(times) - 1)
            table[(i, j)] = times
            if best_value is None or value < best_value:
                best, best_value = (i, j), value
    return best, best_value, table
