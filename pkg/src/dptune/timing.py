"""Integer-nanosecond cost arithmetic and the realtime busy-wait."""

from __future__ import annotations

import hashlib
import time
from fractions import Fraction

NS_PER_S = 1_000_000_000

# sha256 releases the GIL for buffers this large, so concurrent spinners
# genuinely occupy separate cores.
_SPIN_BLOCK = bytes(4096)


def exact(seconds) -> Fraction:
    """Decimal-exact rational value of a float given in seconds."""
    if isinstance(seconds, (int, Fraction)):
        return Fraction(seconds)
    return Fraction(repr(float(seconds)))


def affine_ns(fixed_s, per_unit_s, units: int) -> int:
    """``fixed + per_unit * units`` seconds, rounded to whole nanoseconds."""
    return round((exact(fixed_s) + exact(per_unit_s) * units) * NS_PER_S)


def seconds_to_ns(seconds) -> int:
    return round(exact(seconds) * NS_PER_S)


def ns_to_seconds(ns: int) -> float:
    return ns / NS_PER_S


def format_ns(ns: int) -> str:
    """Render integer nanoseconds as an exact decimal string of seconds."""
    sign = "-" if ns < 0 else ""
    whole, frac = divmod(abs(ns), NS_PER_S)
    return f"{sign}{whole}.{frac:09d}"


def parse_ns(text: str) -> int:
    """Inverse of :func:`format_ns`; accepts any decimal seconds string."""
    value = Fraction(text.strip()) * NS_PER_S
    if value.denominator != 1:
        raise ValueError(f"{text!r} is not a whole number of nanoseconds")
    return int(value)


def spin(ns: int) -> None:
    """Burn CPU for ``ns`` nanoseconds of wall time."""
    if ns <= 0:
        return
    deadline = time.perf_counter_ns() + ns
    while time.perf_counter_ns() < deadline:
        hashlib.sha256(_SPIN_BLOCK)


def wait(ns: int) -> None:
    """Block for ``ns`` nanoseconds of wall time without occupying a core."""
    deadline = time.perf_counter_ns() + ns
    while (left := deadline - time.perf_counter_ns()) > 0:
        time.sleep(left / NS_PER_S)
