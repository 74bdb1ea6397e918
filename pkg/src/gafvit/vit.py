"""Small vision transformer over multi-channel square images.

Images are cut into patches (full-width row strips by default, a square grid
as the alternative), linearly embedded, prefixed with a learnable class
token, summed with learnable position embeddings, and passed through
pre-norm encoder blocks. The class-token output, layer-normalized and
affinely mapped, gives the class scores.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import ChannelAttentionParams, reweight
from .errors import (DimensionMismatch, IndivisibleImage, NonFiniteInput,
                     OutOfRange)

LN_EPS = 1e-12  # unit variance must survive to ~1e-6, so eps stays tiny


@dataclass(frozen=True)
class VitConfig:
    image_h: int = 99
    image_w: int = 99
    channels: int = 6
    patch_size: int = 9
    patch_mode: str = "strip"  # "strip": full-width row bands; "square": grid
    embed_dim: int = 128
    depth: int = 4
    heads: int = 4
    mlp_dim: int = 128
    num_classes: int = 4

    def __post_init__(self):
        for name in ("image_h", "image_w", "channels", "patch_size",
                     "embed_dim", "depth", "heads", "mlp_dim", "num_classes"):
            if getattr(self, name) < 1:
                raise OutOfRange(f"{name} must be positive, got {getattr(self, name)}")
        if self.patch_mode not in ("strip", "square"):
            raise OutOfRange(f"patch_mode must be 'strip' or 'square', got {self.patch_mode!r}")
        if self.embed_dim % self.heads != 0:
            raise DimensionMismatch(
                f"embed_dim {self.embed_dim} not divisible by {self.heads} heads")
        self.n_patches  # fail fast on indivisible images

    @property
    def n_patches(self):
        if self.image_h % self.patch_size != 0:
            raise IndivisibleImage(
                f"image height {self.image_h} not divisible by patch size {self.patch_size}")
        rows = self.image_h // self.patch_size
        if self.patch_mode == "strip":
            return rows
        if self.image_w % self.patch_size != 0:
            raise IndivisibleImage(
                f"image width {self.image_w} not divisible by patch size {self.patch_size}")
        return rows * (self.image_w // self.patch_size)

    @property
    def patch_dim(self):
        if self.patch_mode == "strip":
            return self.patch_size * self.image_w * self.channels
        return self.patch_size * self.patch_size * self.channels

    @property
    def head_dim(self):
        return self.embed_dim // self.heads


@dataclass
class VitBlockParams:
    ln1_scale: ad.Tensor
    ln1_shift: ad.Tensor
    q_w: ad.Tensor
    q_b: ad.Tensor
    k_w: ad.Tensor
    k_b: ad.Tensor
    v_w: ad.Tensor
    v_b: ad.Tensor
    o_w: ad.Tensor
    o_b: ad.Tensor
    ln2_scale: ad.Tensor
    ln2_shift: ad.Tensor
    mlp_w1: ad.Tensor
    mlp_b1: ad.Tensor
    mlp_w2: ad.Tensor
    mlp_b2: ad.Tensor


@dataclass
class VitParams:
    config: VitConfig
    patch_w: ad.Tensor
    patch_b: ad.Tensor
    class_token: ad.Tensor
    pos_embed: ad.Tensor
    blocks: tuple
    final_ln_scale: ad.Tensor
    final_ln_shift: ad.Tensor
    head_w: ad.Tensor
    head_b: ad.Tensor

    def named(self):
        pairs = [("vit.patch_embed.w", self.patch_w),
                 ("vit.patch_embed.b", self.patch_b),
                 ("vit.class_token", self.class_token),
                 ("vit.pos_embed", self.pos_embed)]
        for i, blk in enumerate(self.blocks):
            prefix = f"vit.block{i}."
            pairs.extend([
                (prefix + "ln1.scale", blk.ln1_scale),
                (prefix + "ln1.shift", blk.ln1_shift),
                (prefix + "msa.q.w", blk.q_w), (prefix + "msa.q.b", blk.q_b),
                (prefix + "msa.k.w", blk.k_w), (prefix + "msa.k.b", blk.k_b),
                (prefix + "msa.v.w", blk.v_w), (prefix + "msa.v.b", blk.v_b),
                (prefix + "msa.o.w", blk.o_w), (prefix + "msa.o.b", blk.o_b),
                (prefix + "ln2.scale", blk.ln2_scale),
                (prefix + "ln2.shift", blk.ln2_shift),
                (prefix + "mlp.w1", blk.mlp_w1), (prefix + "mlp.b1", blk.mlp_b1),
                (prefix + "mlp.w2", blk.mlp_w2), (prefix + "mlp.b2", blk.mlp_b2),
            ])
        pairs.extend([
            ("vit.final_ln.scale", self.final_ln_scale),
            ("vit.final_ln.shift", self.final_ln_shift),
            ("vit.head.w", self.head_w),
            ("vit.head.b", self.head_b),
        ])
        return pairs


@dataclass(frozen=True)
class Logits:
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "scores", scores)
        if not np.all(np.isfinite(scores)):
            raise NonFiniteInput("class scores contain non-finite values")


def _param(rng, shape, std, name):
    return ad.Tensor(rng.normal(0.0, std, shape), requires_grad=True, name=name)


def _zeros(shape, name):
    return ad.Tensor(np.zeros(shape), requires_grad=True, name=name)


def _ones(shape, name):
    return ad.Tensor(np.ones(shape), requires_grad=True, name=name)


def init_vit_params(config: VitConfig, rng=None, std=0.02) -> VitParams:
    rng = rng or np.random.default_rng(0)
    d, pd, n = config.embed_dim, config.patch_dim, config.n_patches
    blocks = []
    patch_w = _param(rng, (d, pd), std, "vit.patch_embed.w")
    class_token = _param(rng, (1, d), std, "vit.class_token")
    pos_embed = _param(rng, (n + 1, d), std, "vit.pos_embed")
    for i in range(config.depth):
        prefix = f"vit.block{i}."
        blocks.append(VitBlockParams(
            ln1_scale=_ones((d,), prefix + "ln1.scale"),
            ln1_shift=_zeros((d,), prefix + "ln1.shift"),
            q_w=_param(rng, (d, d), std, prefix + "msa.q.w"),
            q_b=_zeros((d,), prefix + "msa.q.b"),
            k_w=_param(rng, (d, d), std, prefix + "msa.k.w"),
            k_b=_zeros((d,), prefix + "msa.k.b"),
            v_w=_param(rng, (d, d), std, prefix + "msa.v.w"),
            v_b=_zeros((d,), prefix + "msa.v.b"),
            o_w=_param(rng, (d, d), std, prefix + "msa.o.w"),
            o_b=_zeros((d,), prefix + "msa.o.b"),
            ln2_scale=_ones((d,), prefix + "ln2.scale"),
            ln2_shift=_zeros((d,), prefix + "ln2.shift"),
            mlp_w1=_param(rng, (config.mlp_dim, d), std, prefix + "mlp.w1"),
            mlp_b1=_zeros((config.mlp_dim,), prefix + "mlp.b1"),
            mlp_w2=_param(rng, (d, config.mlp_dim), std, prefix + "mlp.w2"),
            mlp_b2=_zeros((d,), prefix + "mlp.b2"),
        ))
    return VitParams(
        config=config,
        patch_w=patch_w,
        patch_b=_zeros((d,), "vit.patch_embed.b"),
        class_token=class_token,
        pos_embed=pos_embed,
        blocks=tuple(blocks),
        final_ln_scale=_ones((d,), "vit.final_ln.scale"),
        final_ln_shift=_zeros((d,), "vit.final_ln.shift"),
        head_w=_param(rng, (config.num_classes, d), std, "vit.head.w"),
        head_b=_zeros((config.num_classes,), "vit.head.b"),
    )


def layer_norm(x, scale, shift, eps=LN_EPS) -> ad.Tensor:
    """Normalize the last axis to zero mean, unit variance, then scale/shift."""
    x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
    mean = ad.tmean(x, axis=-1, keepdims=True)
    centered = ad.sub(x, mean)
    var = ad.tmean(ad.mul(centered, centered), axis=-1, keepdims=True)
    normed = ad.div(centered, ad.tsqrt(ad.add(var, eps)))
    return ad.add(ad.mul(normed, scale), shift)


def patchify(image, config: VitConfig) -> ad.Tensor:
    """Cut (..., H, W, C) into (..., N, patch_dim) rows of flattened patches."""
    x = image if isinstance(image, ad.Tensor) else ad.Tensor(np.asarray(image, dtype=np.float64))
    shape = x.value.shape
    if len(shape) not in (3, 4):
        raise DimensionMismatch(f"expected (H, W, C) or (B, H, W, C), got {shape}")
    h, w, c = shape[-3], shape[-2], shape[-1]
    if (h, w, c) != (config.image_h, config.image_w, config.channels):
        raise DimensionMismatch(
            f"image {h}x{w}x{c} does not match configured "
            f"{config.image_h}x{config.image_w}x{config.channels}")
    lead = shape[:-3]
    p = config.patch_size
    n = config.n_patches
    if config.patch_mode == "strip":
        return ad.reshape(x, lead + (n, p * w * c))
    rows, cols = h // p, w // p
    grid = ad.reshape(x, lead + (rows, p, cols, p, c))
    if lead:
        grid = ad.transpose(grid, (0, 1, 3, 2, 4, 5))
    else:
        grid = ad.transpose(grid, (0, 2, 1, 3, 4))
    return ad.reshape(grid, lead + (n, p * p * c))


def embed_tokens(patches, params: VitParams) -> ad.Tensor:
    """Linear patch embedding, class token at row 0, position embeddings."""
    x = patches if isinstance(patches, ad.Tensor) else ad.Tensor(patches)
    tokens = ad.add(ad.matmul(x, ad.transpose(params.patch_w, (1, 0))), params.patch_b)
    lead = tokens.value.shape[:-2]
    cls = ad.broadcast_to(params.class_token, lead + (1, params.class_token.value.shape[-1]))
    return ad.add(ad.concat([cls, tokens], axis=-2), params.pos_embed)


def msa(z, block: VitBlockParams, heads) -> ad.Tensor:
    """Pre-norm multi-head self-attention with residual."""
    d = z.value.shape[-1]
    dh = d // heads
    h = layer_norm(z, block.ln1_scale, block.ln1_shift)

    def heads_split(m):
        m = ad.reshape(m, m.value.shape[:-1] + (heads, dh))
        return ad.swapaxes(m, -3, -2)  # (..., heads, T, dh)

    q = heads_split(ad.add(ad.matmul(h, ad.transpose(block.q_w, (1, 0))), block.q_b))
    k = heads_split(ad.add(ad.matmul(h, ad.transpose(block.k_w, (1, 0))), block.k_b))
    v = heads_split(ad.add(ad.matmul(h, ad.transpose(block.v_w, (1, 0))), block.v_b))
    scores = ad.mul(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dh))
    attn = ad.softmax(scores, axis=-1)
    mixed = ad.swapaxes(ad.matmul(attn, v), -3, -2)  # (..., T, heads, dh)
    mixed = ad.reshape(mixed, mixed.value.shape[:-2] + (d,))
    out = ad.add(ad.matmul(mixed, ad.transpose(block.o_w, (1, 0))), block.o_b)
    return ad.add(z, out)


def mlp(z, block: VitBlockParams) -> ad.Tensor:
    """Pre-norm two-layer feed-forward with residual."""
    h = layer_norm(z, block.ln2_scale, block.ln2_shift)
    h = ad.gelu(ad.add(ad.matmul(h, ad.transpose(block.mlp_w1, (1, 0))), block.mlp_b1))
    h = ad.add(ad.matmul(h, ad.transpose(block.mlp_w2, (1, 0))), block.mlp_b2)
    return ad.add(z, h)


def encode(tokens, params: VitParams) -> ad.Tensor:
    z = tokens
    for block in params.blocks:
        z = msa(z, block, params.config.heads)
        z = mlp(z, block)
    return z


def classify(encoded, params: VitParams) -> ad.Tensor:
    """Class scores from the class-token row."""
    cls = getitem_token(encoded)
    h = layer_norm(cls, params.final_ln_scale, params.final_ln_shift)
    return ad.add(ad.matmul(h, ad.transpose(params.head_w, (1, 0))), params.head_b)


def getitem_token(encoded) -> ad.Tensor:
    if encoded.value.ndim == 2:
        return ad.getitem(encoded, (0,))
    return ad.getitem(encoded, (slice(None), 0))


def forward(image, att_params: ChannelAttentionParams, vit_params: VitParams,
            config: VitConfig, no_attention=False) -> ad.Tensor:
    """Image (or batch) to class scores."""
    if vit_params.config != config:
        raise DimensionMismatch("parameters were initialized for a different configuration")
    x = image if isinstance(image, ad.Tensor) else ad.Tensor(np.asarray(image, dtype=np.float64))
    if not no_attention:
        x = reweight(x, att_params)
    tokens = embed_tokens(patchify(x, config), vit_params)
    return classify(encode(tokens, vit_params), vit_params)
