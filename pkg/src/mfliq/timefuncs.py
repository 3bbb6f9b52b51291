"""Deterministic time functions: constants, callables, and tabulated curves.

Model coefficients are accepted either as plain numbers, as callables
``t -> value`` (vectorized over numpy arrays), or as ``(t, value)`` tables
with linear interpolation.  Everything is normalized to a callable.
"""

from __future__ import annotations

from typing import Callable, Sequence, Union

import numpy as np

TimeFunction = Union[float, int, Callable[[np.ndarray], np.ndarray]]


def as_callable(f: TimeFunction) -> Callable[[np.ndarray], np.ndarray]:
    """Normalize a constant or callable to a vectorized callable of time."""
    if callable(f):
        return f
    value = float(f)

    def const(t):
        return np.full_like(np.asarray(t, dtype=float), value)

    return const


def eval_time(f: TimeFunction, t: np.ndarray) -> np.ndarray:
    """Evaluate a time function on an array of times."""
    t = np.asarray(t, dtype=float)
    out = np.asarray(as_callable(f)(t), dtype=float)
    if out.shape != t.shape:
        out = np.broadcast_to(out, t.shape).astype(float)
    return out


def from_table(points: Sequence[Sequence[float]]) -> Callable[[np.ndarray], np.ndarray]:
    """Piecewise-linear time function from ``[(t, value), ...]`` rows."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise ValueError("table must be a list of [t, value] rows with at least two rows")
    ts, vs = arr[:, 0], arr[:, 1]
    if np.any(np.diff(ts) <= 0):
        raise ValueError("table times must be strictly increasing")

    def interp(t):
        return np.interp(np.asarray(t, dtype=float), ts, vs)

    return interp


def time_function_from_config(spec) -> TimeFunction:
    """Decode a config entry: a number, or a table of [t, value] pairs."""
    if isinstance(spec, (int, float)):
        return float(spec)
    if isinstance(spec, (list, tuple)):
        return from_table(spec)
    if isinstance(spec, dict) and "table" in spec:
        return from_table(spec["table"])
    raise ValueError(f"cannot interpret time function spec: {spec!r}")
