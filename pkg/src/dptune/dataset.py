"""Synthetic on-disk datasets and a deterministic storage/page-cache emulator.

Item files hold seeded pseudorandom bytes. Reads go through
:class:`CacheEmulator`, an LRU cache with a byte budget, and are charged a
cost from :class:`LatencyModel` depending on whether they hit or miss. The
first pass over a dataset is therefore storage bound and later passes are
memory bound, as long as the dataset fits the budget.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

from ._validation import check_int, check_nonnegative
from .errors import DatasetIntegrityError, GenerationError, UsageError
from .timing import affine_ns, spin

MANIFEST_NAME = "manifest.jsonl"
ITEM_DIR = "items"
_FORMAT_VERSION = 1


def resolution_bytes(resolution: int) -> int:
    """Bytes of one RGB item at ``resolution x resolution``, one byte per channel."""
    resolution = check_int(resolution, "resolution", minimum=1)
    return 3 * resolution * resolution


@dataclass(frozen=True)
class ItemRecord:
    id: int
    byte_size: int
    path: str
    label: int


@dataclass(frozen=True)
class Manifest:
    """Immutable dataset catalog.

    ``root`` is the directory item paths are relative to. A manifest without
    a root describes sizes only (useful for capacity planning) and cannot be
    read from.
    """

    items: tuple[ItemRecord, ...]
    spec_fingerprint: str
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        for expected, rec in enumerate(self.items):
            if rec.id != expected:
                raise DatasetIntegrityError(
                    f"manifest ids must be dense 0..n-1; position {expected} has id {rec.id}"
                )
            if rec.byte_size <= 0:
                raise DatasetIntegrityError(f"item {rec.id} has byte_size {rec.byte_size}")
        if len({rec.path for rec in self.items}) != len(self.items):
            raise DatasetIntegrityError("manifest paths are not unique")

    @property
    def item_count(self) -> int:
        return len(self.items)

    @property
    def total_bytes(self) -> int:
        return sum(rec.byte_size for rec in self.items)

    @property
    def max_item_bytes(self) -> int:
        return max((rec.byte_size for rec in self.items), default=0)

    def item_path(self, item_id: int) -> Path:
        if self.root is None:
            raise DatasetIntegrityError("manifest has no dataset root; items cannot be read")
        return self.root / self.items[item_id].path

    @classmethod
    def sized(cls, item_count: int, item_bytes: int, label_count: int = 10) -> "Manifest":
        """Catalog-only manifest of ``item_count`` equal items, no files behind it."""
        item_count = check_int(item_count, "item_count", minimum=1)
        item_bytes = check_int(item_bytes, "item_bytes", minimum=1)
        items = tuple(
            ItemRecord(i, item_bytes, _item_relpath(i), i % label_count)
            for i in range(item_count)
        )
        fingerprint = _fingerprint(item_count, item_bytes, label_count, seed=None)
        return cls(items, fingerprint)

    def header(self) -> dict:
        return {
            "item_count": self.item_count,
            "total_bytes": self.total_bytes,
            "spec_fingerprint": self.spec_fingerprint,
        }

    def save(self, path) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(self.header(), sort_keys=True) + "\n")
            for rec in self.items:
                row = {"id": rec.id, "bytes": rec.byte_size, "path": rec.path, "label": rec.label}
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        return path


def load_manifest(path) -> Manifest:
    """Load a manifest file, or ``manifest.jsonl`` inside a dataset directory."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetIntegrityError(f"cannot read manifest {path}: {exc}") from exc
    if not lines:
        raise DatasetIntegrityError(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
        items = []
        for line in lines[1:]:
            if not line.strip():
                continue
            row = json.loads(line)
            items.append(ItemRecord(int(row["id"]), int(row["bytes"]), str(row["path"]), int(row["label"])))
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetIntegrityError(f"{path}: malformed manifest: {exc}") from exc
    manifest = Manifest(tuple(items), str(header["spec_fingerprint"]), root=path.parent)
    if header.get("item_count") != manifest.item_count:
        raise DatasetIntegrityError(
            f"{path}: header item_count {header.get('item_count')} != {manifest.item_count} rows"
        )
    if header.get("total_bytes") != manifest.total_bytes:
        raise DatasetIntegrityError(
            f"{path}: header total_bytes {header.get('total_bytes')} != {manifest.total_bytes}"
        )
    return manifest


def _item_relpath(item_id: int) -> str:
    return f"{ITEM_DIR}/{item_id:07d}.bin"


def _fingerprint(item_count, item_bytes, label_count, seed) -> str:
    params = {
        "format": _FORMAT_VERSION,
        "item_count": item_count,
        "item_bytes": item_bytes,
        "label_count": label_count,
        "seed": seed,
    }
    return hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()


def generate_dataset(out_dir, item_count: int, item_bytes: int, label_count: int = 10,
                     seed: int = 0) -> Manifest:
    """Write ``item_count`` files of ``item_bytes`` seeded bytes plus a manifest.

    Labels are ``id % label_count``. Running twice with the same arguments
    produces byte-identical files and the same fingerprint.
    """
    item_count = check_int(item_count, "item_count", minimum=1)
    item_bytes = check_int(item_bytes, "item_bytes", minimum=1)
    label_count = check_int(label_count, "label_count", minimum=1)
    seed = check_int(seed, "seed")

    out_dir = Path(out_dir)
    current = out_dir / ITEM_DIR
    try:
        current.mkdir(parents=True, exist_ok=True)
        rng = random.Random(seed)
        items = []
        for i in range(item_count):
            rel = _item_relpath(i)
            current = out_dir / rel
            with open(current, "wb") as fh:
                fh.write(rng.randbytes(item_bytes))
            items.append(ItemRecord(i, item_bytes, rel, i % label_count))
        manifest = Manifest(
            tuple(items), _fingerprint(item_count, item_bytes, label_count, seed), root=out_dir
        )
        current = out_dir / MANIFEST_NAME
        manifest.save(current)
    except OSError as exc:
        raise GenerationError(current, exc) from exc
    return manifest


@dataclass(frozen=True)
class LatencyModel:
    """Per-read storage cost in seconds; hits must be no dearer than misses."""

    miss_seek: float = 100e-6
    miss_per_byte: float = 2e-9
    hit_seek: float = 1e-6
    hit_per_byte: float = 1e-10

    def __post_init__(self):
        for name in ("miss_seek", "miss_per_byte", "hit_seek", "hit_per_byte"):
            check_nonnegative(getattr(self, name), name)
        if self.hit_seek > self.miss_seek or self.hit_per_byte > self.miss_per_byte:
            raise UsageError("hit costs must not exceed the corresponding miss costs")

    def cost_ns(self, byte_size: int, hit: bool) -> int:
        if hit:
            return affine_ns(self.hit_seek, self.hit_per_byte, byte_size)
        return affine_ns(self.miss_seek, self.miss_per_byte, byte_size)


class CacheEmulator:
    """LRU cache of item ids bounded by a byte budget.

    Safe to share between threads; every access is linearized by an
    internal lock. Items larger than the whole budget are never admitted.
    """

    def __init__(self, capacity: int):
        self.capacity = check_int(capacity, "capacity", minimum=0)
        self._lock = threading.Lock()
        self._entries: OrderedDict[int, int] = OrderedDict()
        self.used_bytes = 0
        self.hit_count = 0
        self.miss_count = 0

    def __repr__(self):
        return (
            f"CacheEmulator(capacity={self.capacity}, used={self.used_bytes}, "
            f"hits={self.hit_count}, misses={self.miss_count})"
        )

    @property
    def resident(self) -> dict[int, int]:
        """Snapshot of resident ids to byte sizes, least recently used first."""
        with self._lock:
            return dict(self._entries)

    def access(self, item_id: int, byte_size: int) -> bool:
        """Record one read; return True on a hit."""
        with self._lock:
            if item_id in self._entries:
                self._entries.move_to_end(item_id)
                self.hit_count += 1
                return True
            self.miss_count += 1
            if byte_size <= self.capacity:
                while self.used_bytes + byte_size > self.capacity:
                    _, evicted = self._entries.popitem(last=False)
                    self.used_bytes -= evicted
                self._entries[item_id] = byte_size
                self.used_bytes += byte_size
            return False

    def reset(self) -> None:
        with self._lock:
            self._entries.clear()
            self.used_bytes = 0
            self.hit_count = 0
            self.miss_count = 0


def reset_cache(cache: CacheEmulator) -> None:
    """Drop every resident item and zero the counters."""
    cache.reset()


def read_item(manifest: Manifest, item_id: int, cache: CacheEmulator, lat: LatencyModel,
              realtime: bool = False) -> tuple[bytes, int]:
    """Read one item; return its bytes and the charged cost in nanoseconds.

    The file is always read from disk. The cost depends only on whether the
    emulated cache hit and on the item size. In realtime mode the caller's
    thread also busy-waits for that long.
    """
    if isinstance(item_id, bool) or not 0 <= item_id < manifest.item_count:
        raise UsageError(f"item id {item_id!r} outside 0..{manifest.item_count - 1}")
    rec = manifest.items[item_id]
    path = manifest.item_path(item_id)
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DatasetIntegrityError(f"cannot read item {item_id} at {path}: {exc}") from exc
    if len(data) != rec.byte_size:
        raise DatasetIntegrityError(
            f"item {item_id} at {path} has {len(data)} B, manifest says {rec.byte_size} B"
        )
    hit = cache.access(item_id, rec.byte_size)
    elapsed = lat.cost_ns(rec.byte_size, hit)
    if realtime:
        spin(elapsed)
    return data, elapsed

