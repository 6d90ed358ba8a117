"""Series containers, the synthetic sine dataset, CSV ingestion and normalization.

A single series is an ``(L, K)`` float array; a batch is ``(N, L, K)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NORMALIZATION_KINDS = ("minmax01", "minmax11", "center-std", "none")


class SeriesError(ValueError):
    """Base class for malformed series data."""


class ParseError(SeriesError):
    pass


class ShapeError(SeriesError):
    pass


class LengthError(SeriesError):
    pass


class DegenerateError(SeriesError):
    pass


def as_batch(values, allow_nan: bool = False) -> np.ndarray:
    """Validate and return ``values`` as a float64 ``(N, L, K)`` batch.

    A single ``(L, K)`` series is promoted to a batch of one.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"expected (N, L, K) or (L, K) array, got shape {arr.shape}")
    if arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ShapeError(f"series must have L >= 1 and K >= 1, got {arr.shape[1:]}")
    bad = ~np.isfinite(arr) if not allow_nan else np.isinf(arr)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise SeriesError(f"non-finite value at (item, t, k)={idx}")
    return arr


def generate_sine(num_samples: int, L: int, K: int, seed: int) -> np.ndarray:
    """Sample sinusoids ``sin(2*pi*eta*t + theta)`` on the grid ``t = j / L``.

    ``eta ~ U[0, 1]`` and ``theta ~ U[-pi, pi]`` are drawn independently for every
    (sample, channel) pair.
    """
    if num_samples < 1 or L < 1 or K < 1:
        raise ValueError("num_samples, L and K must be positive")
    rng = np.random.default_rng(seed)
    eta = rng.uniform(0.0, 1.0, size=(num_samples, 1, K))
    theta = rng.uniform(-math.pi, math.pi, size=(num_samples, 1, K))
    t = (np.arange(L, dtype=np.float64) / L)[None, :, None]
    return np.sin(2.0 * math.pi * eta * t + theta)


# --------------------------------------------------------------------------- csv


def _parse_float(cell: str, allow_missing: bool, where: str) -> float:
    cell = cell.strip()
    if allow_missing and cell in ("", "nan", "NaN"):
        return math.nan
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"non-numeric value {cell!r} at {where}") from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {cell!r} at {where}")
    return value


def load_csv(path, allow_missing: bool = False) -> tuple[list[str], np.ndarray]:
    """Read a dataset CSV with header ``series_id,t,f0,...,f{K-1}``.

    Returns the series ids (first-appearance order) and an ``(N, L, K)`` batch with
    timesteps sorted ascending. With ``allow_missing`` empty cells become NaN.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, missing header") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "series_id" or header[1] != "t":
            raise ParseError(f"{path}: header must start with 'series_id,t', got {header[:2]}")
        features = header[2:]
        expected = [f"f{k}" for k in range(len(features))]
        if features != expected:
            raise ShapeError(f"{path}: feature columns must be {expected}, got {features}")
        K = len(features)

        series: dict[str, dict[int, list[float]]] = {}
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != K + 2:
                raise ShapeError(f"{path}: row {lineno} has {len(row)} columns, expected {K + 2}")
            sid = row[0].strip()
            try:
                t = int(row[1])
            except ValueError:
                raise ParseError(f"{path}: row {lineno}, column 't': non-integer {row[1]!r}") from None
            if t < 0:
                raise ParseError(f"{path}: row {lineno}, column 't': negative timestep {t}")
            vals = [
                _parse_float(cell, allow_missing, f"{path}: row {lineno}, column {features[k]!r}")
                for k, cell in enumerate(row[2:])
            ]
            steps = series.setdefault(sid, {})
            if t in steps:
                raise ParseError(f"{path}: row {lineno}: duplicate timestep {t} for series {sid!r}")
            steps[t] = vals
            n_rows += 1

    if K == 0:
        raise ShapeError(f"{path}: no feature columns")
    ids = list(series)
    if not ids:
        return ids, np.zeros((0, 0, K))
    lengths = {sid: len(steps) for sid, steps in series.items()}
    L = lengths[ids[0]]
    for sid in ids:
        if lengths[sid] != L:
            raise LengthError(f"{path}: series {sid!r} has {lengths[sid]} timesteps, expected {L}")
        if set(series[sid]) != set(range(L)):
            raise LengthError(f"{path}: series {sid!r} timesteps are not 0..{L - 1}")
    out = np.array([[series[sid][t] for t in range(L)] for sid in ids], dtype=np.float64)
    assert out.shape[0] * out.shape[1] == n_rows
    return ids, out


def write_csv(path, batch, ids=None) -> None:
    """Write a batch in the dataset CSV format. NaN cells are written empty."""
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    N = arr.shape[0]
    K = arr.shape[2] if arr.ndim == 3 else 0
    if ids is None:
        ids = [str(i) for i in range(N)]
    if len(ids) != N:
        raise ShapeError(f"{len(ids)} ids for {N} series")
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["series_id", "t"] + [f"f{k}" for k in range(K)])
        for sid, item in zip(ids, arr):
            for t, row in enumerate(item):
                writer.writerow([sid, t] + ["" if math.isnan(v) else repr(float(v)) for v in row])


# ------------------------------------------------------------------ normalization


@dataclass
class NormalizationState:
    """Everything needed to undo :func:`normalize`.

    ``offset`` and ``scale`` broadcast against an ``(N, L, K)`` batch. For
    ``center-std`` the offset holds the per-sequence means, shape ``(N, 1, K)``.
    """

    kind: str
    offset: np.ndarray = field(repr=False)
    scale: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationState":
        return cls(d["kind"], np.asarray(d["offset"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64))

    def for_new_series(self) -> "NormalizationState":
        """State usable on series the statistics were not computed from.

        For ``center-std`` the per-sequence offsets are replaced by their average.
        """
        if self.kind != "center-std" or self.offset.shape[0] == 1:
            return self
        return NormalizationState(self.kind, self.offset.mean(axis=0, keepdims=True), self.scale)


def normalize(batch, kind: str) -> tuple[np.ndarray, NormalizationState]:
    """Normalize a batch and return the state that inverts it.

    Kinds: ``minmax01`` and ``minmax11`` use per-channel extrema over the whole
    batch; ``center-std`` subtracts each sequence's own per-channel mean and divides
    by the per-channel std of the centered batch; ``none`` is the identity.
    """
    x = as_batch(batch)
    if x.shape[0] == 0:
        raise ShapeError("cannot normalize an empty batch")
    K = x.shape[2]
    if kind in ("minmax01", "minmax11"):
        lo = x.min(axis=(0, 1), keepdims=True)
        hi = x.max(axis=(0, 1), keepdims=True)
        rng = hi - lo
        if np.any(rng == 0):
            k = int(np.flatnonzero(rng.ravel() == 0)[0])
            raise DegenerateError(f"channel {k} is constant; min-max normalization undefined")
        if kind == "minmax01":
            state = NormalizationState(kind, lo, rng)
        else:
            state = NormalizationState(kind, lo + rng / 2.0, rng / 2.0)
    elif kind == "center-std":
        mean = x.mean(axis=1, keepdims=True)
        std = (x - mean).std(axis=(0, 1), keepdims=True)
        if np.any(std == 0):
            k = int(np.flatnonzero(std.ravel() == 0)[0])
            raise DegenerateError(f"channel {k} has zero variance after centering")
        state = NormalizationState(kind, mean, std)
    elif kind == "none":
        state = NormalizationState(kind, np.zeros((1, 1, K)), np.ones((1, 1, K)))
    else:
        raise ValueError(f"unknown normalization kind {kind!r}; expected one of {NORMALIZATION_KINDS}")
    return (x - state.offset) / state.scale, state


def _check_state(x: np.ndarray, state: NormalizationState) -> None:
    if state.offset.shape[-1] != x.shape[2] or state.scale.shape[-1] != x.shape[2]:
        raise ShapeError(f"state has {state.offset.shape[-1]} channels, batch has {x.shape[2]}")
    if state.offset.shape[0] not in (1, x.shape[0]):
        raise ShapeError(f"state holds offsets for {state.offset.shape[0]} series, batch has {x.shape[0]}")


def apply_normalization(batch, state: NormalizationState) -> np.ndarray:
    """Normalize new data with existing statistics.

    ``center-std`` centres each series on the mean of its own finite values, so
    partially observed series (NaN = unknown) are accepted.
    """
    x = as_batch(batch, allow_nan=True)
    if state.kind == "center-std":
        with np.errstate(invalid="ignore"):
            offset = np.nanmean(x, axis=1, keepdims=True)
        _check_state(x, NormalizationState(state.kind, offset, state.scale))
        return (x - offset) / state.scale
    _check_state(x, state)
    return (x - state.offset) / state.scale


def denormalize(batch, state: NormalizationState) -> np.ndarray:
    """Exact inverse of :func:`normalize` for a compatible state."""
    x = as_batch(batch, allow_nan=True)
    _check_state(x, state)
    return x * state.scale + state.offset
