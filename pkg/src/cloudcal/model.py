"""Per-pixel logistic segmentation model with manual backprop and Adam.

Each pixel is classified from the flattened k x k x B neighborhood around
it (replicate padding at borders), standardized with per-feature constants
frozen after fitting on the training split.  The model is a single linear
layer plus sigmoid trained with binary cross-entropy; gradients are exact
analytic expressions, checked against finite differences in the tests.

Checkpoints are little-endian binary files:

    magic "CALM" | version u16 | window u32 | bands u32 | n_weights u64
    then float64: weights, bias, feature means, feature scales,
    Adam first moments (n+1), Adam second moments (n+1), step count.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import ImagePatch, Mask
from .errors import DatasetError, DimensionError, SignalError

PROB_CLIP = 1e-7
SCALE_FLOOR = 1e-6

CHECKPOINT_MAGIC = b"CALM"
CHECKPOINT_VERSION = 1


@dataclass
class SegModel:
    """Linear-logistic pixel classifier over a k x k x B window."""

    window: int
    bands: int
    weights: np.ndarray
    bias: float
    norm_mean: np.ndarray
    norm_scale: np.ndarray

    @property
    def n_features(self) -> int:
        return self.window * self.window * self.bands

    @classmethod
    def create(cls, window: int = 5, bands: int = 4) -> "SegModel":
        if window < 1 or window % 2 == 0:
            raise SignalError(f"window must be odd and positive, got {window}")
        if bands < 1:
            raise SignalError(f"bands must be >= 1, got {bands}")
        n = window * window * bands
        return cls(
            window=window,
            bands=bands,
            weights=np.zeros(n),
            bias=0.0,
            norm_mean=np.zeros(n),
            norm_scale=np.ones(n),
        )


@dataclass
class AdamState:
    """Adam optimizer state for the model's n_features + 1 parameters."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def create(cls, model: SegModel, learning_rate: float = 0.001) -> "AdamState":
        n = model.n_features + 1
        return cls(m=np.zeros(n), v=np.zeros(n), learning_rate=learning_rate)


@dataclass
class ProbabilityMap:
    """Per-pixel cloud probabilities, strictly inside (0, 1)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(f"probability map must be 2-d, got {self.values.shape}")
        if self.values.min() <= 0.0 or self.values.max() >= 1.0:
            raise SignalError("probabilities must lie strictly inside (0, 1)")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def extract_features(patch: ImagePatch, window: int) -> np.ndarray:
    """Flattened replicate-padded neighborhoods, shape (h*w, window^2 * bands).

    Feature order is band-major, then window row, then window column, so
    feature index = (band * window + dy) * window + dx.
    """
    pad = window // 2
    h, w = patch.height, patch.width
    per_band = []
    for b in range(patch.n_bands):
        padded = np.pad(patch.data[b], pad, mode="edge")
        windows = np.lib.stride_tricks.sliding_window_view(padded, (window, window))
        per_band.append(windows.reshape(h * w, window * window))
    return np.concatenate(per_band, axis=1)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_bands(model: SegModel, patch: ImagePatch) -> None:
    if patch.n_bands != model.bands:
        raise DimensionError(f"model expects {model.bands} bands, patch has {patch.n_bands}")


def _normalized_features(model: SegModel, patch: ImagePatch) -> np.ndarray:
    return (extract_features(patch, model.window) - model.norm_mean) / model.norm_scale


def forward(model: SegModel, patch: ImagePatch) -> ProbabilityMap:
    """Predict the cloud probability of every pixel in the patch."""
    _check_bands(model, patch)
    z = _normalized_features(model, patch) @ model.weights + model.bias
    p = _sigmoid(z).reshape(patch.height, patch.width)
    # float64 sigmoid saturates to exactly 0/1 for very large |z|; nudge
    # back into the open interval the type demands.
    np.clip(p, 1e-12, 1.0 - 1e-12, out=p)
    return ProbabilityMap(p)


def bce_loss(probs: ProbabilityMap, labels: Mask) -> float:
    """Mean binary cross-entropy with probabilities clipped to [1e-7, 1-1e-7]."""
    if probs.values.shape != labels.values.shape:
        raise DimensionError(
            f"probs shape {probs.values.shape} != labels shape {labels.values.shape}"
        )
    p = np.clip(probs.values, PROB_CLIP, 1.0 - PROB_CLIP)
    y = labels.values.astype(np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def backward(model: SegModel, patch: ImagePatch, labels: Mask) -> tuple[np.ndarray, float]:
    """Analytic gradient of bce_loss(forward(model, patch), labels).

    Returns (weight gradient, bias gradient): the per-pixel residual p - y
    accumulated against the normalized features and averaged over pixels.
    """
    _check_bands(model, patch)
    if (patch.height, patch.width) != labels.values.shape:
        raise DimensionError(
            f"patch is {patch.height}x{patch.width}, labels {labels.values.shape}"
        )
    feats = _normalized_features(model, patch)
    p = _sigmoid(feats @ model.weights + model.bias)
    residual = (p - labels.values.astype(np.float64).ravel()) / p.size
    return feats.T @ residual, float(residual.sum())


def adam_step(model: SegModel, state: AdamState, grad_w: np.ndarray, grad_b: float) -> None:
    """One Adam update with bias correction, applied in place.

    Raises SignalError and leaves model and state untouched if any
    gradient component is non-finite.
    """
    grad = np.append(np.asarray(grad_w, dtype=np.float64), grad_b)
    if grad.shape[0] != model.n_features + 1:
        raise DimensionError(f"expected {model.n_features + 1} gradient entries, got {grad.shape[0]}")
    if not np.all(np.isfinite(grad)):
        raise SignalError("non-finite gradient component")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    update = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    model.weights = model.weights - update[:-1]
    model.bias = float(model.bias - update[-1])


def predict_mask(model: SegModel, patch: ImagePatch, cut: float = 0.5) -> Mask:
    """Hard prediction: cloud iff probability strictly exceeds the cut."""
    probs = forward(model, patch)
    return Mask((probs.values > cut).astype(np.uint8))


def fit_feature_normalization(model: SegModel, patches: Iterable[ImagePatch]) -> None:
    """Fit per-feature standardization constants from training patches.

    Accumulates in patch order so the constants are deterministic; the
    scale is the population standard deviation floored at 1e-6.
    """
    n = model.n_features
    total = 0
    acc = np.zeros(n)
    acc_sq = np.zeros(n)
    for patch in patches:
        _check_bands(model, patch)
        feats = extract_features(patch, model.window)
        total += feats.shape[0]
        acc += feats.sum(axis=0)
        acc_sq += (feats * feats).sum(axis=0)
    if total == 0:
        raise SignalError("cannot fit normalization from zero patches")
    mean = acc / total
    var = np.maximum(acc_sq / total - mean * mean, 0.0)
    model.norm_mean = mean
    model.norm_scale = np.maximum(np.sqrt(var), SCALE_FLOOR)


def save_checkpoint(path, model: SegModel, state: AdamState) -> None:
    """Write model and optimizer to the binary checkpoint format."""
    n = model.n_features
    floats = np.concatenate([
        model.weights,
        [model.bias],
        model.norm_mean,
        model.norm_scale,
        state.m,
        state.v,
        [float(state.step)],
    ]).astype("<f8")
    header = struct.pack(
        "<4sHIIQ", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, model.window, model.bands, n
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(floats.tobytes())


def load_checkpoint(path, learning_rate: float = 0.001) -> tuple[SegModel, AdamState]:
    """Read a checkpoint back; Adam hyperparameters come from the caller."""
    with open(path, "rb") as fh:
        raw = fh.read()
    head_size = struct.calcsize("<4sHIIQ")
    if len(raw) < head_size:
        raise DatasetError(f"{path}: truncated checkpoint header")
    magic, version, window, bands, n = struct.unpack("<4sHIIQ", raw[:head_size])
    if magic != CHECKPOINT_MAGIC:
        raise DatasetError(f"{path}: bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise DatasetError(f"{path}: unsupported checkpoint version {version}")
    if n != window * window * bands:
        raise DatasetError(f"{path}: parameter count {n} does not match {window}x{window}x{bands}")
    expected_floats = 3 * n + 2 * (n + 1) + 2
    floats = np.frombuffer(raw[head_size:], dtype="<f8")
    if floats.shape[0] != expected_floats:
        raise DatasetError(
            f"{path}: expected {expected_floats} float64 values, found {floats.shape[0]}"
        )
    pos = 0

    def take(count: int) -> np.ndarray:
        nonlocal pos
        out = floats[pos:pos + count].copy()
        pos += count
        return out

    weights = take(n)
    bias = float(take(1)[0])
    norm_mean = take(n)
    norm_scale = take(n)
    m = take(n + 1)
    v = take(n + 1)
    step = int(take(1)[0])
    model = SegModel(
        window=int(window), bands=int(bands), weights=weights, bias=bias,
        norm_mean=norm_mean, norm_scale=norm_scale,
    )
    state = AdamState(m=m, v=v, step=step, learning_rate=learning_rate)
    return model, state
