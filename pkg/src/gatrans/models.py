"""Generator (hierarchical encoder-decoder with bucketed global attention)
and the conditional discriminator.

The generator partitions the image into patches, runs stages of
{residual conv block, transformer blocks, patch merging} and decodes back to
full resolution with transposed convolutions and skip connections.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .glam import GlamParams, glam_forward
from .nn import Conv2d, ConvTranspose2d, LayerNorm, Linear, Module
from .tensor import Tensor


@dataclass
class GtnetConfig:
    in_channels: int = 3
    num_classes: int = 5
    patch_size: int = 4
    stage_widths: tuple = (32, 64, 128)
    stage_depths: tuple = (2, 2, 2)
    tokens_per_bucket: int = 16
    d_buckets: tuple = None          # per stage; derived from ref_size when None
    d_h: int = None                  # learned-similarity hidden width, default c
    mlp_ratio: int = 4
    ref_size: int = 64               # reference input edge used to derive d_buckets

    def resolved_d_buckets(self):
        if self.d_buckets is not None:
            return tuple(self.d_buckets)
        out = []
        for s, c in enumerate(self.stage_widths):
            edge = self.ref_size // (self.patch_size * 2 ** s)
            n = edge * edge
            out.append(int(np.clip(n // self.tokens_per_bucket, 1, c)))
        return tuple(out)

    @property
    def min_divisor(self):
        return self.patch_size * 2 ** (len(self.stage_widths) - 1)


@dataclass
class DiscriminatorConfig:
    in_channels: int = 8             # image channels + num_classes
    widths: tuple = (32, 64, 128, 1)
    kernel: int = 4
    stride: int = 2
    leaky_slope: float = 0.2


def patch_partition_raw(image: Tensor, p: int) -> Tensor:
    """(C,H,W) -> (h*w, C*p*p) token matrix; lossless rearrangement."""
    c, h, w = image.shape
    if h % p or w % p:
        raise T.ShapeError(
            f"image {h}x{w} not divisible by patch size {p}; "
            f"pad by ({(-h) % p}, {(-w) % p})")
    gh, gw = h // p, w // p
    x = image.reshape(c, gh, p, gw, p)
    x = x.transpose(1, 3, 0, 2, 4)            # (gh, gw, C, p, p)
    return x.reshape(gh * gw, c * p * p)


def patch_unpartition(tokens: np.ndarray, c: int, h: int, w: int, p: int) -> np.ndarray:
    """Inverse of patch_partition_raw on raw arrays (testing/round-trip)."""
    gh, gw = h // p, w // p
    x = np.asarray(tokens).reshape(gh, gw, c, p, p)
    return x.transpose(2, 0, 1, 3, 4).swapaxes(2, 3).reshape(c, h, w)


def tokens_to_spatial(tokens: Tensor, h: int, w: int) -> Tensor:
    n, c = tokens.shape
    return tokens.reshape(h, w, c).transpose(2, 0, 1).reshape(1, c, h, w)


def spatial_to_tokens(x: Tensor) -> Tensor:
    _, c, h, w = x.shape
    return x.reshape(c, h * w).transpose(1, 0)


class ResidualConvBlock(Module):
    def __init__(self, ch, rng, dtype=np.float32):
        self.conv1 = Conv2d(ch, ch, 3, rng, padding=1, dtype=dtype)
        self.conv2 = Conv2d(ch, ch, 3, rng, padding=1, dtype=dtype)

    def __call__(self, x):
        return T.relu(x + self.conv2(T.relu(self.conv1(x))))


class GtBlock(Module):
    """Pre-norm transformer block: LN -> bucketed attention -> residual,
    LN -> GELU MLP -> residual."""

    def __init__(self, c, d_buckets, d_h, mlp_ratio, rng, seed, dtype=np.float32):
        self.norm1 = LayerNorm(c, dtype=dtype)
        self.attn = GlamParams(c, d_buckets, d_h=d_h, seed=seed, dtype=dtype)
        self.proj = Linear(c, c, rng, dtype=dtype)
        self.norm2 = LayerNorm(c, dtype=dtype)
        self.fc1 = Linear(c, mlp_ratio * c, rng, dtype=dtype)
        self.fc2 = Linear(mlp_ratio * c, c, rng, dtype=dtype)

    def __call__(self, tokens, trace=None):
        x = tokens + self.proj(glam_forward(self.norm1(tokens), self.attn, trace=trace))
        return x + self.fc2(T.gelu(self.fc1(self.norm2(x))))


class PatchMerge(Module):
    """Concatenate each 2x2 token neighborhood (4c) and reduce to 2c."""

    def __init__(self, c, rng, dtype=np.float32):
        self.reduce = Linear(4 * c, 2 * c, rng, dtype=dtype)
        self.c = c

    def __call__(self, tokens, h, w):
        if h % 2 or w % 2:
            raise T.ShapeError(f"patch merge needs even grid, got {h}x{w}")
        x = tokens.reshape(h // 2, 2, w // 2, 2, self.c)
        x = x.transpose(0, 2, 1, 3, 4).reshape(h // 2 * (w // 2), 4 * self.c)
        return self.reduce(x)


class GTNet(Module):
    def __init__(self, config: GtnetConfig, seed=0, dtype=np.float32):
        self.config = config
        rng = np.random.default_rng(seed)
        cfg = config
        p, widths = cfg.patch_size, cfg.stage_widths
        d_buckets = cfg.resolved_d_buckets()

        self.embed = Linear(cfg.in_channels * p * p, widths[0], rng, dtype=dtype)
        self.res_blocks = []
        self.stages = []
        self.merges = []
        for s, c in enumerate(widths):
            self.res_blocks.append(ResidualConvBlock(c, rng, dtype=dtype))
            dh = cfg.d_h if cfg.d_h is not None else c
            self.stages.append([
                GtBlock(c, d_buckets[s], dh, cfg.mlp_ratio, rng,
                        seed=seed * 1000 + s * 10 + i, dtype=dtype)
                for i in range(cfg.stage_depths[s])])
            if s + 1 < len(widths):
                if widths[s + 1] != 2 * c:
                    raise ValueError("stage widths must double at each merge")
                self.merges.append(PatchMerge(c, rng, dtype=dtype))

        self.ups = []
        self.fuses = []
        for s in range(len(widths) - 1, 0, -1):
            self.ups.append(ConvTranspose2d(widths[s], widths[s - 1], 2, rng, stride=2, dtype=dtype))
            self.fuses.append(Conv2d(2 * widths[s - 1], widths[s - 1], 1, rng, dtype=dtype))
        self.expand = ConvTranspose2d(widths[0], widths[0], p, rng, stride=p, dtype=dtype)
        self.head = Conv2d(widths[0], cfg.num_classes, 1, rng, dtype=dtype)

    # flattened list attrs so Module.named_parameters sees nested stages
    def named_parameters(self, prefix=""):
        yield from self.embed.named_parameters(prefix + "embed.")
        for s, rb in enumerate(self.res_blocks):
            yield from rb.named_parameters(f"{prefix}res.{s}.")
            for i, blk in enumerate(self.stages[s]):
                yield from blk.named_parameters(f"{prefix}stage.{s}.{i}.")
            if s < len(self.merges):
                yield from self.merges[s].named_parameters(f"{prefix}merge.{s}.")
        for i, up in enumerate(self.ups):
            yield from up.named_parameters(f"{prefix}up.{i}.")
            yield from self.fuses[i].named_parameters(f"{prefix}fuse.{i}.")
        yield from self.expand.named_parameters(prefix + "expand.")
        yield from self.head.named_parameters(prefix + "head.")

    def __call__(self, image: Tensor) -> Tensor:
        """(C,H,W) image -> (K,H,W) per-pixel class logits."""
        cfg = self.config
        c_in, h, w = image.shape
        if c_in != cfg.in_channels:
            raise T.ShapeError(f"expected {cfg.in_channels} channels, got {c_in}")
        div = cfg.min_divisor
        if h % div or w % div:
            raise T.ShapeError(
                f"input {h}x{w} must be divisible by {div}; "
                f"pad by ({(-h) % div}, {(-w) % div})")

        tokens = self.embed(patch_partition_raw(image, cfg.patch_size))
        gh, gw = h // cfg.patch_size, w // cfg.patch_size

        skips = []
        for s, c in enumerate(cfg.stage_widths):
            x = tokens_to_spatial(tokens, gh, gw)
            x = self.res_blocks[s](x)
            tokens = spatial_to_tokens(x)
            for blk in self.stages[s]:
                tokens = blk(tokens)
            skips.append((tokens, gh, gw))
            if s < len(self.merges):
                tokens = self.merges[s](tokens, gh, gw)
                gh, gw = gh // 2, gw // 2

        x = tokens_to_spatial(tokens, gh, gw)
        for i, up in enumerate(self.ups):
            x = up(x)
            skip_tokens, sh, sw = skips[len(cfg.stage_widths) - 2 - i]
            skip = tokens_to_spatial(skip_tokens, sh, sw)
            x = self.fuses[i](T.concat([x, skip], axis=1))
            x = T.relu(x)
        x = T.relu(self.expand(x))
        logits = self.head(x)
        return logits.reshape(cfg.num_classes, h, w)


class Discriminator(Module):
    """4-layer strided conv stack on concat(image, class map) -> real/fake score."""

    def __init__(self, config: DiscriminatorConfig, seed=0, dtype=np.float32):
        self.config = config
        rng = np.random.default_rng(seed)
        chans = [config.in_channels] + list(config.widths)
        self.convs = [Conv2d(chans[i], chans[i + 1], config.kernel, rng,
                             stride=config.stride, padding=1, dtype=dtype)
                      for i in range(4)]

    def __call__(self, class_map: Tensor, image: Tensor) -> Tensor:
        """class_map: (K,H,W) probabilities or one-hot; image: (C,H,W).
        Returns a scalar strictly inside (0,1)."""
        if class_map.shape[1:] != image.shape[1:]:
            raise T.ShapeError(
                f"spatial mismatch: class map {class_map.shape} vs image {image.shape}")
        x = T.concat([image, class_map], axis=0)
        if x.shape[0] != self.config.in_channels:
            raise T.ShapeError(
                f"discriminator expects {self.config.in_channels} channels, got {x.shape[0]}")
        x = x.reshape(1, *x.shape)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < 3:
                x = T.leaky_relu(x, self.config.leaky_slope)
        return T.sigmoid(x.mean())
