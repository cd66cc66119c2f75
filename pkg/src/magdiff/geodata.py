"""Synthetic geomagnetic-style fields, survey trajectories and dataset I/O.

Coordinates live in the unit square, intensities are in nT. Sample
collections are passed around as a pair of arrays: ``coords`` with shape
``(n, 2)`` holding (lon, lat) and ``values`` with shape ``(n,)``.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or unusable input data."""


class GeoPoint(NamedTuple):
    lon: float
    lat: float


class FieldSample(NamedTuple):
    location: GeoPoint
    intensity: float


@dataclass(frozen=True)
class Anomaly:
    center: GeoPoint
    amplitude: float
    width: float


@dataclass(frozen=True)
class SynthFieldSpec:
    trend: tuple[float, float, float] = (48000.0, 0.0, 0.0)
    anomalies: tuple[Anomaly, ...] = ()
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        for a in self.anomalies:
            if a.width <= 0:
                raise ValueError(f"anomaly width must be positive, got {a.width}")


def default_field_spec(noise_sigma: float = 27.0, seed: int = 0) -> SynthFieldSpec:
    """The stock synthetic map: ~48000 nT offset, gentle gradient, a handful of anomalies.

    The field's standard deviation over the unit square is close to 100 nT,
    so the default 27 nT noise is about 0.3 in normalized units.
    """
    anomalies = (
        Anomaly(GeoPoint(0.30, 0.35), 260.0, 0.12),
        Anomaly(GeoPoint(0.70, 0.65), -210.0, 0.15),
        Anomaly(GeoPoint(0.55, 0.25), 150.0, 0.09),
        Anomaly(GeoPoint(0.20, 0.80), -120.0, 0.10),
        Anomaly(GeoPoint(0.85, 0.20), 90.0, 0.08),
    )
    return SynthFieldSpec((48000.0, 60.0, -40.0), anomalies, noise_sigma, seed)


def synth_field(spec: SynthFieldSpec, p) -> np.ndarray | float:
    """Noise-free field value at ``p`` (a GeoPoint or an ``(n, 2)`` array)."""
    pts = np.asarray(p, dtype=np.float64)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite coordinate")
    a, b, c = spec.trend
    out = a + b * pts[:, 0] + c * pts[:, 1]
    for an in spec.anomalies:
        d2 = (pts[:, 0] - an.center.lon) ** 2 + (pts[:, 1] - an.center.lat) ** 2
        out = out + an.amplitude * np.exp(-d2 / (2.0 * an.width ** 2))
    return float(out[0]) if scalar else out


def _reflect(x: float) -> float:
    # fold any real onto [0, 1]
    x = math.fmod(abs(x), 2.0)
    return 2.0 - x if x > 1.0 else x


def sample_trajectory(spec: SynthFieldSpec, n_points: int, step_len: float, turn_sigma: float,
                      seed: int, start=None, heading: float | None = None) -> list[FieldSample]:
    """Correlated random walk with border reflection, measured with additive Gaussian noise."""
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    if step_len <= 0:
        raise ValueError("step_len must be positive")
    rng = np.random.default_rng(seed)
    x, y = (rng.uniform(0.0, 1.0, 2) if start is None else start)
    theta = rng.uniform(0.0, 2.0 * math.pi) if heading is None else heading
    pts = np.empty((n_points, 2))
    pts[0] = x, y
    for i in range(1, n_points):
        if turn_sigma > 0:
            theta += rng.normal(0.0, turn_sigma)
        nx = x + step_len * math.cos(theta)
        ny = y + step_len * math.sin(theta)
        if not 0.0 <= nx <= 1.0:
            nx = _reflect(nx)
            theta = math.pi - theta
        if not 0.0 <= ny <= 1.0:
            ny = _reflect(ny)
            theta = -theta
        x, y = nx, ny
        pts[i] = x, y
    values = synth_field(spec, pts)
    if spec.noise_sigma > 0:
        values = values + rng.normal(0.0, spec.noise_sigma, n_points)
    return [FieldSample(GeoPoint(float(a), float(b)), float(v)) for (a, b), v in zip(pts, values)]


def survey(spec: SynthFieldSpec, n_samples: int, n_tracks: int = 20, step_len: float = 0.01,
           turn_sigma: float = 0.15) -> list[FieldSample]:
    """Several trajectories totalling ``n_samples`` points, all seeded from ``spec.seed``."""
    if n_tracks < 1 or n_samples < 2 * n_tracks:
        raise ValueError("need at least two samples per track")
    seeds = np.random.SeedSequence(spec.seed).spawn(n_tracks)
    sizes = [n_samples // n_tracks + (1 if i < n_samples % n_tracks else 0) for i in range(n_tracks)]
    out: list[FieldSample] = []
    for ss, n in zip(seeds, sizes):
        out.extend(sample_trajectory(spec, n, step_len, turn_sigma, int(ss.generate_state(1)[0])))
    return out


# ---------------------------------------------------------------- arrays

def to_arrays(samples: Sequence[FieldSample]) -> tuple[np.ndarray, np.ndarray]:
    if len(samples) == 0:
        return np.empty((0, 2)), np.empty(0)
    coords = np.array([s.location for s in samples], dtype=np.float64)
    values = np.array([s.intensity for s in samples], dtype=np.float64)
    return coords, values


def from_arrays(coords, values) -> list[FieldSample]:
    return [FieldSample(GeoPoint(float(a), float(b)), float(v)) for (a, b), v in zip(coords, values)]


# ---------------------------------------------------------------- splitting

def split_dataset(samples: Sequence, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Shuffle and cut into ``len(ratios)`` disjoint parts; rounding remainder goes to the first."""
    ratios = [float(r) for r in ratios]
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be non-negative and sum to 1, got {ratios}")
    n = len(samples)
    if n < sum(1 for r in ratios if r > 0):
        raise DataError(f"{n} samples cannot fill {len(ratios)} partitions")
    sizes = [int(round(r * n)) for r in ratios]
    sizes[0] = n - sum(sizes[1:])
    if sizes[0] < 0:
        raise DataError("ratios round to more samples than available")
    order = np.random.default_rng(seed).permutation(n)
    parts, start = [], 0
    for size in sizes:
        parts.append([samples[i] for i in order[start:start + size]])
        start += size
    return tuple(parts)


@dataclass(frozen=True)
class ScatterSet:
    """Observed (condition) and target samples of one interpolation instance."""

    obs_coords: np.ndarray
    obs_values: np.ndarray
    ta_coords: np.ndarray
    ta_values: np.ndarray

    def __post_init__(self):
        if len(self.obs_values) == 0 or len(self.ta_values) == 0:
            raise DataError("observed and target sets must both be non-empty")
        if self.obs_coords.shape != (len(self.obs_values), 2) or self.ta_coords.shape != (len(self.ta_values), 2):
            raise DataError("coordinate/value length mismatch")

    @property
    def observed(self) -> list[FieldSample]:
        return from_arrays(self.obs_coords, self.obs_values)

    @property
    def targets(self) -> list[FieldSample]:
        return from_arrays(self.ta_coords, self.ta_values)


def make_instance(coords, values, cond_fraction: float, seed, size: int | None = None) -> ScatterSet:
    """Random observed/target partition of (a random ``size``-subset of) the samples."""
    if not 0.0 < cond_fraction < 1.0:
        raise ValueError("cond_fraction must lie strictly between 0 and 1")
    coords = np.asarray(coords, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n < 2:
        raise DataError("need at least 2 samples")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = rng.permutation(n)
    if size is not None and size < n:
        order = order[:size]
    n_obs = int(round(cond_fraction * len(order)))
    n_obs = min(max(n_obs, 1), len(order) - 1)
    o, t = np.sort(order[:n_obs]), np.sort(order[n_obs:])
    return ScatterSet(coords[o], values[o], coords[t], values[t])


# ---------------------------------------------------------------- normalization

@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float


def normalize_fit(values) -> NormStats:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise DataError("cannot fit normalization on no values")
    mu = float(v.mean())
    sd = float(np.sqrt(np.mean((v - mu) ** 2)))
    if not sd > 0:
        raise DataError("zero variance; cannot normalize")
    return NormStats(mu, sd)


def normalize_apply(values, stats: NormStats) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) - stats.mean) / stats.std


def denormalize(values, stats: NormStats) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * stats.std + stats.mean


# ---------------------------------------------------------------- CSV

HEADER = ("lon", "lat", "value")


def _fmt(x: float) -> str:
    return repr(float(x))  # shortest round-trip decimal, at most 17 significant digits


def dumps_csv(samples: Sequence[FieldSample]) -> str:
    lines = [",".join(HEADER)]
    lines.extend(f"{_fmt(s.location[0])},{_fmt(s.location[1])},{_fmt(s.intensity)}" for s in samples)
    return "\n".join(lines) + "\n"


def save_csv(path, samples: Sequence[FieldSample]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_csv(samples))


def loads_csv(text: str, require_value: bool = True) -> list[FieldSample]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("line 1: missing header") from None
    if header != list(HEADER) and not (not require_value and header == list(HEADER[:2])):
        raise DataError(f"line 1: expected header {','.join(HEADER)!r}, got {','.join(header)!r}")
    width = len(header)
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise DataError(f"line {lineno}: expected {width} fields, got {len(row)}")
        try:
            nums = [float(c) for c in row]
        except ValueError:
            raise DataError(f"line {lineno}: non-numeric field in {row!r}") from None
        if not all(math.isfinite(v) for v in nums):
            raise DataError(f"line {lineno}: non-finite value")
        out.append(FieldSample(GeoPoint(nums[0], nums[1]), nums[2] if width == 3 else math.nan))
    return out


def load_csv(path, require_value: bool = True) -> list[FieldSample]:
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    with open(path, encoding="utf-8", newline="") as fh:
        return loads_csv(fh.read(), require_value)
