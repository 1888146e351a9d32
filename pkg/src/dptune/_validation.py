"""Small argument checkers used at public entry points."""

from __future__ import annotations

import numbers
from os import PathLike

from .errors import UsageError


def check_int(value, name: str, *, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise UsageError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise UsageError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_nonnegative(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise UsageError(f"{name} must be a real number, got {value!r}")
    if value < 0:
        raise UsageError(f"{name} must be >= 0, got {value}")
    return value


def check_budget(value, name: str) -> int | None:
    """``None`` means unbounded."""
    if value is None:
        return None
    return check_int(value, name, minimum=0)


def check_choice(value, name: str, choices) -> str:
    if value not in choices:
        raise UsageError(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value


def check_manifest(X):
    """Accept a Manifest or a path to a manifest file / dataset directory."""
    from .dataset import Manifest, load_manifest

    if isinstance(X, Manifest):
        return X
    if isinstance(X, (str, PathLike)):
        return load_manifest(X)
    raise UsageError(f"expected a Manifest or a manifest path, got {type(X).__name__}")
