"""Raster types and the pixel-level primitives of the relabeling pipeline.

Everything here is a pure function over small immutable-by-convention
dataclasses wrapping numpy arrays.  Intensities live in [0, 255] regardless
of the bit depth of the source files (16-bit samples are divided by 257 at
load time), so threshold values are always expressed in 8-bit-style units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, InvalidWeightsError, SignalError

DEFAULT_BANDS = ("red", "green", "blue", "nir")

WEIGHT_SUM_TOL = 1e-9


@dataclass
class ImagePatch:
    """Multi-band raster of pixel intensities.

    data is a float64 array of shape (bands, height, width) with every
    value in [0, 255].
    """

    data: np.ndarray
    bands: tuple[str, ...] = DEFAULT_BANDS

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise DimensionError(f"patch data must be 3-d (bands, h, w), got shape {self.data.shape}")
        self.bands = tuple(self.bands)
        nb, h, w = self.data.shape
        if nb != len(self.bands):
            raise DimensionError(f"patch has {nb} data planes but {len(self.bands)} band names")
        if nb < 1 or h < 1 or w < 1:
            raise DimensionError(f"patch dimensions must be >= 1, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise SignalError("patch contains non-finite intensities")
        lo, hi = float(self.data.min()), float(self.data.max())
        if lo < 0.0 or hi > 255.0:
            raise SignalError(f"patch intensities outside [0, 255]: min={lo}, max={hi}")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def n_bands(self) -> int:
        return self.data.shape[0]


@dataclass
class IntensityMap:
    """Single-channel reduction of a patch, values in [0, 255]."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(f"intensity map must be 2-d, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise SignalError("intensity map contains non-finite values")
        lo, hi = float(self.values.min()), float(self.values.max())
        if lo < 0.0 or hi > 255.0:
            raise SignalError(f"intensity values outside [0, 255]: min={lo}, max={hi}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class Mask:
    """Binary per-pixel labels, 0 = clear and 1 = cloud."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise DimensionError(f"mask must be 2-d, got shape {values.shape}")
        if values.dtype != np.uint8:
            if not np.isin(values, (0, 1)).all():
                raise SignalError("mask values must be 0 or 1")
            values = values.astype(np.uint8)
        elif values.max(initial=0) > 1:
            raise SignalError("mask values must be 0 or 1")
        self.values = values

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def uniform_weights(n_bands: int) -> np.ndarray:
    """Equal mixing weights over n_bands, summing to exactly 1."""
    return np.full(n_bands, 1.0 / n_bands)


def to_intensity(patch: ImagePatch, weights: Sequence[float] | None = None) -> IntensityMap:
    """Reduce a multi-band patch to one channel by convex band mixing.

    Parameters
    ----------
    patch : ImagePatch
        Source raster.
    weights : sequence of float, optional
        One non-negative coefficient per band, summing to 1 (tolerance
        1e-9).  Defaults to the uniform mean of all bands.

    Returns
    -------
    IntensityMap
        out[y, x] = sum_b weights[b] * patch[b, y, x], still in [0, 255].
    """
    if weights is None:
        weights = uniform_weights(patch.n_bands)
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != patch.n_bands:
        raise DimensionError(f"expected {patch.n_bands} weights, got {w.shape}")
    if np.any(w < 0.0):
        raise InvalidWeightsError(f"weights must be non-negative, got {w.tolist()}")
    if abs(float(w.sum()) - 1.0) > WEIGHT_SUM_TOL:
        raise InvalidWeightsError(f"weights must sum to 1, got sum={float(w.sum())!r}")
    mixed = np.tensordot(w, patch.data, axes=1)
    # Convex combinations can exceed the domain by a few ulps only.
    np.clip(mixed, 0.0, 255.0, out=mixed)
    return IntensityMap(mixed)


def binarize(intensity: IntensityMap, threshold: float) -> Mask:
    """Threshold an intensity map into a cloud mask.

    A pixel is labeled cloud (1) iff its intensity is strictly greater
    than the threshold; a pixel exactly at the threshold stays clear.
    """
    if not math.isfinite(threshold):
        raise SignalError(f"threshold must be finite, got {threshold!r}")
    return Mask((intensity.values > threshold).astype(np.uint8))


def _erode(values: np.ndarray, radius: int) -> np.ndarray:
    # Out-of-bounds pixels count as foreground, so a solid border survives.
    padded = np.pad(values, radius, mode="constant", constant_values=1)
    out = np.ones_like(values)
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            out = np.minimum(out, padded[dy:dy + values.shape[0], dx:dx + values.shape[1]])
    return out


def _dilate(values: np.ndarray, radius: int) -> np.ndarray:
    # Out-of-bounds pixels count as background.
    padded = np.pad(values, radius, mode="constant", constant_values=0)
    out = np.zeros_like(values)
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            out = np.maximum(out, padded[dy:dy + values.shape[0], dx:dx + values.shape[1]])
    return out


def erode(mask: Mask, radius: int) -> Mask:
    """Binary erosion with a square structuring element of side 2*radius+1."""
    if radius < 0:
        raise SignalError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return Mask(mask.values.copy())
    return Mask(_erode(mask.values, radius))


def dilate(mask: Mask, radius: int) -> Mask:
    """Binary dilation with a square structuring element of side 2*radius+1."""
    if radius < 0:
        raise SignalError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return Mask(mask.values.copy())
    return Mask(_dilate(mask.values, radius))


def morph_clean(mask: Mask, opening_radius: int = 0, closing_radius: int = 0) -> Mask:
    """Optional opening followed by closing with square structuring elements.

    Radius 0 disables the corresponding stage; (0, 0) is the identity.
    Opening removes speckle smaller than the structuring element, closing
    fills comparably small holes.
    """
    if opening_radius < 0 or closing_radius < 0:
        raise SignalError(f"radii must be >= 0, got ({opening_radius}, {closing_radius})")
    values = mask.values
    if opening_radius > 0:
        values = _dilate(_erode(values, opening_radius), opening_radius)
    if closing_radius > 0:
        values = _erode(_dilate(values, closing_radius), closing_radius)
    return Mask(values.copy() if values is mask.values else values)
