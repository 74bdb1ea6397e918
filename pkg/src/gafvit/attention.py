"""Channel attention: squeeze to per-channel means, excite through a
two-layer bottleneck with a sigmoid gate, rescale the channels.

Both linear maps are bias-free. The reduction ratio divides the channel
count; ratio 1 keeps the bottleneck full width.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionMismatch, OutOfRange
from .gaf import MultiChannelImage


@dataclass
class ChannelAttentionParams:
    w1: ad.Tensor  # (C / ratio, C)
    w2: ad.Tensor  # (C, C / ratio)
    reduction_ratio: int = 1

    def named(self):
        return (("attention.w1", self.w1), ("attention.w2", self.w2))


@dataclass(frozen=True)
class AttentionWeights:
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise DimensionMismatch(f"weights must be 1-D, got shape {values.shape}")
        if values.min() < 0.0 or values.max() > 1.0:
            raise OutOfRange("attention weights must lie in (0, 1)")


def init_attention_params(channels, reduction_ratio=1, rng=None, std=0.02):
    if channels < 1 or channels % reduction_ratio != 0:
        raise DimensionMismatch(
            f"reduction ratio {reduction_ratio} must divide {channels} channels")
    rng = rng or np.random.default_rng(0)
    hidden = channels // reduction_ratio
    w1 = ad.Tensor(rng.normal(0.0, std, (hidden, channels)), requires_grad=True, name="attention.w1")
    w2 = ad.Tensor(rng.normal(0.0, std, (channels, hidden)), requires_grad=True, name="attention.w2")
    return ChannelAttentionParams(w1=w1, w2=w2, reduction_ratio=reduction_ratio)


def _lift_image(image):
    if isinstance(image, MultiChannelImage):
        return ad.Tensor(image.data)
    if isinstance(image, ad.Tensor):
        return image
    return ad.Tensor(np.asarray(image, dtype=np.float64))


def squeeze(image) -> ad.Tensor:
    """Global average pool: (..., H, W, C) -> (..., C)."""
    x = _lift_image(image)
    if x.value.ndim < 3:
        raise DimensionMismatch(f"expected (..., H, W, C), got shape {x.value.shape}")
    return ad.tmean(x, axis=(-3, -2))


def excite(pooled, params: ChannelAttentionParams) -> ad.Tensor:
    """Bottleneck gate sigmoid(W2 relu(W1 u)), elementwise in (0, 1)."""
    u = pooled if isinstance(pooled, ad.Tensor) else ad.Tensor(np.asarray(pooled, dtype=np.float64))
    channels = params.w1.value.shape[1]
    if u.value.shape[-1] != channels:
        raise DimensionMismatch(
            f"pooled vector has {u.value.shape[-1]} channels, parameters expect {channels}")
    hidden = ad.relu(ad.matmul(u, ad.transpose(params.w1, (1, 0))))
    return ad.sigmoid(ad.matmul(hidden, ad.transpose(params.w2, (1, 0))))


def apply_weights(image, weights) -> ad.Tensor:
    """Scale each channel plane by its weight."""
    x = _lift_image(image)
    w = weights if isinstance(weights, ad.Tensor) else ad.Tensor(np.asarray(weights, dtype=np.float64))
    if w.value.shape[-1] != x.value.shape[-1]:
        raise DimensionMismatch(
            f"{w.value.shape[-1]} weights for {x.value.shape[-1]} channels")
    expanded = ad.reshape(w, w.value.shape[:-1] + (1, 1, w.value.shape[-1]))
    return ad.mul(x, expanded)


def reweight(image, params: ChannelAttentionParams) -> ad.Tensor:
    """Full squeeze-excite-scale pass; works on single images and batches."""
    x = _lift_image(image)
    return apply_weights(x, excite(squeeze(x), params))


def attention_weights(image, params: ChannelAttentionParams) -> AttentionWeights:
    """Channel weights for a single image, as plain numbers."""
    with ad.no_grad():
        gate = excite(squeeze(image), params)
    return AttentionWeights(values=gate.value)
