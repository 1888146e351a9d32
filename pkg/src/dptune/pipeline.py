"""Sampling, batching, transform cost and collate for one epoch."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from ._validation import check_int, check_nonnegative
from .errors import UsageError
from .timing import affine_ns, spin

_MASK64 = (1 << 64) - 1


def mix_seed(seed: int, epoch_index: int) -> int:
    """Derive a per-epoch seed with the splitmix64 finalizer."""
    z = (seed * 0x9E3779B97F4A7C15 + epoch_index + 1) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def make_permutation(item_count: int, seed: int, shuffle: bool) -> list[int]:
    """Identity order, or a seeded Fisher-Yates shuffle of ``range(item_count)``."""
    item_count = check_int(item_count, "item_count", minimum=0)
    order = list(range(item_count))
    if shuffle:
        rng = random.Random(seed)
        for i in range(item_count - 1, 0, -1):
            j = rng.randrange(i + 1)
            order[i], order[j] = order[j], order[i]
    return order


def partition_batches(permutation: Sequence[int], batch_size: int,
                      drop_last: bool = False) -> list[list[int]]:
    if isinstance(batch_size, bool) or not isinstance(batch_size, int) or batch_size < 1:
        raise UsageError(f"batch_size must be an integer >= 1, got {batch_size!r}")
    batches = [list(permutation[i:i + batch_size]) for i in range(0, len(permutation), batch_size)]
    if drop_last and batches and len(batches[-1]) < batch_size:
        batches.pop()
    return batches


@dataclass(frozen=True)
class EpochPlan:
    permutation: tuple[int, ...]
    batches: tuple[tuple[int, ...], ...]
    batch_size: int
    drop_last: bool

    @property
    def batch_count(self) -> int:
        return len(self.batches)


def plan_epoch(item_count: int, batch_size: int, *, seed: int = 0, epoch_index: int = 0,
               shuffle: bool = False, drop_last: bool = False) -> EpochPlan:
    """Build the sampling order and batches for one epoch.

    With shuffling on, each epoch gets its own permutation derived from
    ``mix_seed(seed, epoch_index)``.
    """
    perm = make_permutation(item_count, mix_seed(seed, epoch_index), shuffle)
    batches = partition_batches(perm, batch_size, drop_last)
    return EpochPlan(tuple(perm), tuple(tuple(b) for b in batches), batch_size, drop_last)


@dataclass(frozen=True)
class TransformCost:
    """Simulated CPU work per item, in seconds."""

    per_item: float = 0.0
    per_byte: float = 0.0

    def __post_init__(self):
        check_nonnegative(self.per_item, "per_item")
        check_nonnegative(self.per_byte, "per_byte")

    def cost_ns(self, nbytes: int) -> int:
        return affine_ns(self.per_item, self.per_byte, nbytes)


def transform_item(raw: bytes, cost: TransformCost, realtime: bool = False) -> tuple[bytes, int]:
    """Pass ``raw`` through unchanged and charge ``per_item + per_byte * len(raw)``."""
    elapsed = cost.cost_ns(len(raw))
    if realtime:
        spin(elapsed)
    return raw, elapsed


class Sample(NamedTuple):
    item_id: int
    payload: bytes
    elapsed_ns: int  # read + transform


@dataclass(frozen=True)
class Batch:
    seq: int
    item_ids: tuple[int, ...]
    payload: bytes
    produce_elapsed_ns: int


def collate(samples: Sequence[Sample], seq: int) -> Batch:
    if not samples:
        raise UsageError("cannot collate an empty batch")
    seq = check_int(seq, "seq", minimum=0)
    return Batch(
        seq=seq,
        item_ids=tuple(s.item_id for s in samples),
        payload=b"".join(s.payload for s in samples),
        produce_elapsed_ns=sum(s.elapsed_ns for s in samples),
    )
