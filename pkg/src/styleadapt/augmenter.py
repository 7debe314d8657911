"""Encoder-decoder augmentation networks that restyle source images toward
a target image.

Two interchangeable variants:

- SE (shared encoder): one encoder for both inputs; conditioning happens at
  the bottleneck as a convex mixup of the two embeddings.
- DE (disentangled encoders): a style encoder (fed the target) and a content
  encoder (fed the source) whose concatenated embeddings a bottleneck conv
  fuses back to the decoder width.

The decoder upsamples with bilinear interpolation followed by convolutions
rather than transposed convolutions, which keeps checkerboard artifacts out
of the synthesized images. The encoder downsamples by 8 in total, so the
decoder ends with a third upsampling stage to restore the input resolution
before the final sigmoid-bounded projection to RGB.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import ImageBatch

VARIANTS = ("SE", "DE")

ENCODER_STRIDE = 8


@dataclass(frozen=True)
class ArchitectureSpec:
    """Width/variant description of an augmenter.

    base_width=64 reproduces the full-scale channel plan (64/128/256);
    base_width=4 is the miniature plan (4/8/16) used by fast tests. Both
    share every structural invariant.
    """

    variant: str = "DE"
    base_width: int = 64
    negative_slope: float = 0.2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.base_width < 1:
            raise ValueError(f"base_width must be positive, got {self.base_width}")

    @property
    def embedding_channels(self) -> int:
        return 4 * self.base_width


def _init_conv(conv: nn.Conv2d, negative_slope: float = 0.2) -> nn.Conv2d:
    nn.init.kaiming_normal_(conv.weight, a=negative_slope, mode="fan_in", nonlinearity="leaky_relu")
    if conv.bias is not None:
        nn.init.zeros_(conv.bias)
    return conv


class ResidualBlock(nn.Module):
    """3x3/stride-1 residual block; preserves channels and spatial dims."""

    def __init__(self, channels: int, negative_slope: float = 0.2):
        super().__init__()
        self.conv1 = _init_conv(nn.Conv2d(channels, channels, 3, 1, 1), negative_slope)
        self.conv2 = _init_conv(nn.Conv2d(channels, channels, 3, 1, 1), negative_slope)
        self.act = nn.LeakyReLU(negative_slope)

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


class Encoder(nn.Module):
    """Three stride-2 convs (so /8 spatially) followed by four residual blocks."""

    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        w = spec.base_width
        a = spec.negative_slope
        self.net = nn.Sequential(
            _init_conv(nn.Conv2d(3, w, 7, 2, 3), a),
            nn.LeakyReLU(a),
            _init_conv(nn.Conv2d(w, 2 * w, 4, 2, 1), a),
            nn.LeakyReLU(a),
            _init_conv(nn.Conv2d(2 * w, 4 * w, 4, 2, 1), a),
            nn.LeakyReLU(a),
            ResidualBlock(4 * w, a),
            ResidualBlock(4 * w, a),
            ResidualBlock(4 * w, a),
            ResidualBlock(4 * w, a),
        )

    def forward(self, x):
        return self.net(x)


class Bottleneck(nn.Module):
    """7x7 fusion conv: concatenated style+content channels back to one embedding."""

    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        c = spec.embedding_channels
        self.conv = _init_conv(nn.Conv2d(2 * c, c, 7, 1, 3), 0.0)

    def forward(self, x):
        return F.relu(self.conv(x))


class Decoder(nn.Module):
    """Four residual blocks, two upsample+conv stages, then a final
    upsample to the requested output size and a sigmoid RGB projection."""

    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        w = spec.base_width
        a = spec.negative_slope
        self.res = nn.Sequential(
            ResidualBlock(4 * w, a),
            ResidualBlock(4 * w, a),
            ResidualBlock(4 * w, a),
            ResidualBlock(4 * w, a),
        )
        self.up1 = _init_conv(nn.Conv2d(4 * w, 2 * w, 3, 1, 1, padding_mode="reflect"), a)
        self.up2 = _init_conv(nn.Conv2d(2 * w, 2 * w, 3, 1, 1, padding_mode="reflect"), a)
        self.out = _init_conv(nn.Conv2d(2 * w, 3, 3, 1, 1, padding_mode="reflect"), 0.0)
        with torch.no_grad():
            # start the RGB projection small: full-gain init saturates the
            # sigmoid on deep residual activations and kills the gradient
            self.out.weight.mul_(0.25)
        self.act = nn.LeakyReLU(a)

    def forward(self, z, output_size):
        if isinstance(output_size, int):
            output_size = (output_size, output_size)
        x = self.res(z)
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = self.act(self.up1(x))
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = self.act(self.up2(x))
        x = F.interpolate(x, size=output_size, mode="bilinear", align_corners=False)
        return torch.sigmoid(self.out(x))


def mixup_embeddings(z_s: torch.Tensor, z_t: torch.Tensor, lam: float) -> torch.Tensor:
    """Convex combination lam * z_s + (1 - lam) * z_t.

    z_t may have batch size 1, in which case it broadcasts over the source
    batch. lam=1 returns z_s bitwise; lam=0 returns (broadcast) z_t bitwise.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixup coefficient must lie in [0, 1], got {lam}")
    if z_t.shape[0] == 1 and z_s.shape[0] != 1:
        z_t = z_t.expand_as(z_s)
    if z_s.shape != z_t.shape:
        raise ValueError(f"embedding shapes do not broadcast: {tuple(z_s.shape)} vs {tuple(z_t.shape)}")
    if lam == 1.0:
        return z_s
    if lam == 0.0:
        return z_t
    return lam * z_s + (1.0 - lam) * z_t


def sample_mixup_lambda(rng: np.random.Generator, alpha: float = 5.0, beta: float = 1.0) -> float:
    """One Beta(alpha, beta) draw; the default Beta(5, 1) has mean 5/6, so
    the mixed embedding stays predominantly source (labels remain valid)."""
    return float(rng.beta(alpha, beta))


class Augmenter(nn.Module):
    """The learnable augmentation network T(source, target) -> augmented.

    Holds the trainable state for whichever variant `spec` selects; forward
    passes are pure functions of (parameters, inputs).
    """

    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        self.spec = spec
        self.variant = spec.variant
        if spec.variant == "SE":
            self.encoder = Encoder(spec)
        else:
            self.style_encoder = Encoder(spec)
            self.content_encoder = Encoder(spec)
            self.bottleneck = Bottleneck(spec)
        self.decoder = Decoder(spec)

    def _check_spatial(self, x: torch.Tensor) -> None:
        h, w = x.shape[-2], x.shape[-1]
        if h % ENCODER_STRIDE or w % ENCODER_STRIDE:
            raise ValueError(f"input spatial size must be divisible by {ENCODER_STRIDE}, got {h}x{w}")

    def encode(self, x: torch.Tensor, which: str = "shared") -> torch.Tensor:
        if self.variant == "SE":
            if which != "shared":
                raise RuntimeError(f"SE variant has only a shared encoder, asked for {which!r}")
            enc = self.encoder
        else:
            if which == "style":
                enc = self.style_encoder
            elif which == "content":
                enc = self.content_encoder
            else:
                raise RuntimeError(f"DE variant has style/content encoders, asked for {which!r}")
        self._check_spatial(x)
        return enc(x)

    def fuse(self, z_style: torch.Tensor, z_content: torch.Tensor) -> torch.Tensor:
        """Channel-concatenate the two embeddings and apply the bottleneck."""
        if self.variant != "DE":
            raise RuntimeError("bottleneck fusion exists only for the DE variant")
        if z_style.shape[0] == 1 and z_content.shape[0] != 1:
            z_style = z_style.expand_as(z_content)
        if z_style.shape != z_content.shape:
            raise ValueError(
                f"embedding shapes do not broadcast: {tuple(z_style.shape)} vs {tuple(z_content.shape)}"
            )
        return self.bottleneck(torch.cat([z_style, z_content], dim=1))

    def decode(self, z: torch.Tensor, output_size) -> torch.Tensor:
        return self.decoder(z, output_size)

    def augment(self, x_s, x_t, lam: float | None = None) -> torch.Tensor:
        """Synthesize target-styled versions of x_s.

        SE needs a mixup coefficient (draw one with sample_mixup_lambda);
        DE ignores it. x_t may be a single image broadcast over the batch.
        Output matches x_s in shape with values strictly inside (0, 1).
        """
        x_s = x_s.data if isinstance(x_s, ImageBatch) else x_s
        x_t = x_t.data if isinstance(x_t, ImageBatch) else x_t
        out_size = (x_s.shape[-2], x_s.shape[-1])
        if self.variant == "SE":
            if lam is None:
                raise RuntimeError("SE augment needs a mixup coefficient")
            z_s = self.encode(x_s, "shared")
            z_t = self.encode(x_t, "shared")
            z = mixup_embeddings(z_s, z_t, lam)
        else:
            z_style = self.encode(x_t, "style")
            z_content = self.encode(x_s, "content")
            z = self.fuse(z_style, z_content)
        return self.decode(z, out_size)

    def reconstruction_loss(self, x: torch.Tensor) -> torch.Tensor:
        """Mean squared error of T(x, x) against x.

        Reduced as the element mean (per-sample squared norm over element
        count, averaged over the batch) so magnitudes are resolution
        independent. DE only: it exists to sharpen the style/content split.
        """
        if self.variant != "DE":
            raise RuntimeError("reconstruction loss is defined for the DE variant only")
        rec = self.augment(x, x)
        return ((rec - x) ** 2).mean()
