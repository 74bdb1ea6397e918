"""Gramian angular field encoding of feature sequences.

Each feature column is min-max normalized to [0, 1], mapped to polar angles
via arccos, and expanded into a pair of square matrices: the summation field
cos(phi_j + phi_k) and the difference field sin(phi_j - phi_k). Stacking the
pairs over all features yields one multi-channel image per feature matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (ChannelOutOfBounds, DegenerateSeries, DimensionMismatch,
                     EmptyInput, GafVitError, NonFiniteInput, OutOfRange, TooShort)

# arccos inputs may drift outside [0, 1] by rounding; anything worse is a bug
CLAMP_TOL = 1e-9


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise NonFiniteInput(f"{what} contains a non-finite value at index {bad}")


@dataclass(frozen=True)
class FeatureMatrix:
    """m timesteps x n features, one behavior window."""
    values: np.ndarray
    feature_names: tuple
    dt: float = 0.1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if values.ndim != 2:
            raise DimensionMismatch(f"feature matrix must be 2-D, got shape {values.shape}")
        m, n = values.shape
        if m < 2:
            raise TooShort(f"feature matrix needs at least 2 timesteps, got {m}")
        if n < 1:
            raise EmptyInput("feature matrix has no feature columns")
        if len(self.feature_names) != n:
            raise DimensionMismatch(
                f"{len(self.feature_names)} feature names for {n} columns")
        if len(set(self.feature_names)) != n:
            raise DimensionMismatch("feature names must be unique")
        _check_finite(values, "feature matrix")
        if self.dt <= 0:
            raise OutOfRange(f"dt must be positive, got {self.dt}")

    @property
    def n_steps(self):
        return self.values.shape[0]

    @property
    def n_features(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class NormalizedSeries:
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise DimensionMismatch(f"series must be 1-D, got shape {values.shape}")
        if values.min() < 0.0 or values.max() > 1.0:
            raise OutOfRange("normalized series must lie in [0, 1]")


@dataclass(frozen=True)
class PolarSeries:
    angles: np.ndarray
    radii: np.ndarray


@dataclass(frozen=True)
class GafPair:
    gasf: np.ndarray
    gadf: np.ndarray

    def __post_init__(self):
        gasf, gadf = self.gasf, self.gadf
        if gasf.shape != gadf.shape or gasf.ndim != 2 or gasf.shape[0] != gasf.shape[1]:
            raise DimensionMismatch(
                f"field pair must be matching squares, got {gasf.shape} and {gadf.shape}")


@dataclass(frozen=True)
class MultiChannelImage:
    data: np.ndarray
    channel_names: tuple = field(default=())

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        if data.ndim != 3:
            raise DimensionMismatch(f"image must be H x W x C, got shape {data.shape}")
        if self.channel_names and len(self.channel_names) != data.shape[2]:
            raise DimensionMismatch(
                f"{len(self.channel_names)} channel names for {data.shape[2]} channels")

    @property
    def channels(self):
        return self.data.shape[2]


def normalize_series(series) -> NormalizedSeries:
    """Affine map onto [0, 1]; constant input has no such map."""
    values = np.asarray(series, dtype=np.float64)
    if values.ndim != 1:
        raise DimensionMismatch(f"series must be 1-D, got shape {values.shape}")
    if values.size < 2:
        raise TooShort(f"series needs at least 2 points, got {values.size}")
    _check_finite(values, "series")
    lo, hi = values.min(), values.max()
    if hi == lo:
        raise DegenerateSeries(f"series is constant at {lo}, cannot normalize")
    return NormalizedSeries((values - lo) / (hi - lo))


def _unit_interval(series):
    """Accept a NormalizedSeries or raw array already in [0, 1], clamped."""
    if isinstance(series, NormalizedSeries):
        return series.values
    values = np.asarray(series, dtype=np.float64)
    _check_finite(values, "series")
    if values.min() < -CLAMP_TOL or values.max() > 1.0 + CLAMP_TOL:
        raise OutOfRange("values stray outside [0, 1] beyond rounding tolerance")
    return np.clip(values, 0.0, 1.0)


def to_polar(series) -> PolarSeries:
    """Angles arccos(f) in [0, pi/2]; radii j/m for 1-based j."""
    values = _unit_interval(series)
    m = values.size
    angles = np.arccos(values)
    radii = np.arange(1, m + 1, dtype=np.float64) / m
    return PolarSeries(angles=angles, radii=radii)


def gasf(series) -> np.ndarray:
    """Summation field cos(phi_j + phi_k) without going through trig."""
    f = _unit_interval(series)
    s = np.sqrt(np.clip(1.0 - f * f, 0.0, None))
    out = np.outer(f, f) - np.outer(s, s)
    return np.clip(out, -1.0, 1.0)


def gadf(series) -> np.ndarray:
    """Difference field sin(phi_j - phi_k); rows j, columns k."""
    f = _unit_interval(series)
    s = np.sqrt(np.clip(1.0 - f * f, 0.0, None))
    out = np.outer(s, f) - np.outer(f, s)
    return np.clip(out, -1.0, 1.0)


def encode_feature(series) -> GafPair:
    norm = series if isinstance(series, NormalizedSeries) else normalize_series(series)
    return GafPair(gasf=gasf(norm), gadf=gadf(norm))


def encode_matrix(matrix: FeatureMatrix) -> MultiChannelImage:
    """Stack [GASF_1, GADF_1, ..., GASF_n, GADF_n] into an m x m x 2n image."""
    m, n = matrix.values.shape
    data = np.empty((m, m, 2 * n), dtype=np.float64)
    names = []
    for i, name in enumerate(matrix.feature_names):
        try:
            pair = encode_feature(matrix.values[:, i])
        except DegenerateSeries as exc:
            raise DegenerateSeries(f"feature '{name}': {exc}") from exc
        data[:, :, 2 * i] = pair.gasf
        data[:, :, 2 * i + 1] = pair.gadf
        names.append(f"{name}/gasf")
        names.append(f"{name}/gadf")
    return MultiChannelImage(data=data, channel_names=tuple(names))


def reconstruct_from_gasf(diagonal) -> np.ndarray:
    """Invert the diagonal cos(2*phi) = 2f^2 - 1 back to the normalized series."""
    d = np.asarray(diagonal, dtype=np.float64)
    _check_finite(d, "diagonal")
    if d.min() < -1.0 - CLAMP_TOL or d.max() > 1.0 + CLAMP_TOL:
        raise OutOfRange("diagonal values stray outside [-1, 1] beyond rounding tolerance")
    d = np.clip(d, -1.0, 1.0)
    return np.sqrt((d + 1.0) / 2.0)


def render_channel(image: MultiChannelImage, channel: int, path):
    """Write one channel as an 8-bit grayscale file; [-1, 1] maps to [0, 255].

    PGM is always available; PNG needs the optional Pillow dependency.
    """
    if not 0 <= channel < image.channels:
        raise ChannelOutOfBounds(
            f"channel {channel} out of range for {image.channels}-channel image")
    plane = image.data[:, :, channel]
    pixels = np.clip(np.rint((plane + 1.0) * 0.5 * 255.0), 0, 255).astype(np.uint8)
    path = str(path)
    if path.endswith(".png"):
        try:
            from PIL import Image
        except ImportError as exc:
            raise GafVitError("PNG output needs Pillow; use .pgm instead") from exc
        Image.fromarray(pixels, mode="L").save(path)
        return
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes(order="C"))
