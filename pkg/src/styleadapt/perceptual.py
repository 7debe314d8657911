"""Frozen feature extractor and the perceptual loss family.

The extractor is a VGG-16 trunk tapped at relu1_2, relu2_2 (style) and
relu4_3 (content), or a tiny seeded random CNN with the same tap-point
interface for fast tests. It is never trained: parameters are frozen at
construction and every loss here only ever backpropagates into the
augmented image.

Two perceptual modes:

- GRAM: per-layer style loss is the squared Frobenius distance of the
  normalized channel-correlation (Gram) matrices; content loss is the
  mean-normalized squared distance of raw feature maps.
- AVP: both comparisons instead average-pool the feature maps first and
  take the mean-normalized squared distance of the reduced maps, which
  enforces a smoother, more global similarity.

In both modes style layers compare the augmented image against the target
and content layers compare it against the source.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

STYLE_LAYERS = ("relu1_2", "relu2_2")
CONTENT_LAYERS = ("relu4_3",)

DEFAULT_LAYER_WEIGHTS = {"relu1_2": 0.25, "relu2_2": 1.0, "relu4_3": 1.0}

# Indices into torchvision's vgg16().features at which each named
# activation appears.
_VGG16_TAPS = {"relu1_2": 3, "relu2_2": 8, "relu4_3": 22}

PERCEPTUAL_MODES = ("GRAM", "AVP")


@dataclass(frozen=True)
class PerceptualConfig:
    """Per-layer weights and mode for the combined perceptual loss."""

    layer_weights: dict = field(default_factory=lambda: dict(DEFAULT_LAYER_WEIGHTS))
    mode: str = "GRAM"
    pool_kernel: int = 2

    def __post_init__(self):
        if self.mode not in PERCEPTUAL_MODES:
            raise ValueError(f"mode must be one of {PERCEPTUAL_MODES}, got {self.mode!r}")
        if any(w < 0 for w in self.layer_weights.values()):
            raise ValueError("layer weights must be non-negative")
        if self.pool_kernel < 1:
            raise ValueError(f"pool_kernel must be positive, got {self.pool_kernel}")


class _TinyBackbone(nn.Module):
    """Small random frozen CNN mirroring the VGG tap geometry
    (full / half / eighth resolution)."""

    def __init__(self, seed: int = 0):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.c1 = nn.Conv2d(3, 8, 3, 1, 1)
            self.c2 = nn.Conv2d(8, 16, 3, 2, 1)
            self.c3 = nn.Conv2d(16, 32, 3, 2, 1)
            self.c4 = nn.Conv2d(32, 32, 3, 2, 1)
            for m in (self.c1, self.c2, self.c3, self.c4):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                nn.init.zeros_(m.bias)

    def taps(self, x):
        t1 = F.relu(self.c1(x))
        t2 = F.relu(self.c2(t1))
        t4 = F.relu(self.c4(F.relu(self.c3(t2))))
        return {"relu1_2": t1, "relu2_2": t2, "relu4_3": t4}


class FeatureExtractor(nn.Module):
    """Frozen backbone with named tap points and built-in input normalization.

    backbone="vgg16" builds the torchvision VGG-16 trunk; weights_path may
    point at a saved state dict (absence falls back to a seeded random
    init, recorded in .notes). backbone="tiny" is the test-scale extractor.
    """

    def __init__(self, backbone: str = "vgg16", weights_path: str | None = None, seed: int = 0):
        super().__init__()
        self.backbone = backbone
        self.notes: list[str] = []
        if backbone == "vgg16":
            import torchvision

            with torch.random.fork_rng():
                torch.manual_seed(seed)
                vgg = torchvision.models.vgg16(weights=None)
            self.trunk = vgg.features[: max(_VGG16_TAPS.values()) + 1]
            self._taps = dict(_VGG16_TAPS)
            if weights_path:
                state = torch.load(weights_path, map_location="cpu", weights_only=True)
                missing = self.trunk.load_state_dict(state, strict=False)
                if missing.missing_keys:
                    raise ValueError(f"feature extractor weights missing keys: {missing.missing_keys}")
            else:
                note = "no pretrained weights file given; VGG-16 trunk uses a seeded random init"
                self.notes.append(note)
                warnings.warn(note)
        elif backbone == "tiny":
            self.trunk = _TinyBackbone(seed=seed)
            self._taps = None
        else:
            raise ValueError(f"unknown feature extractor backbone: {backbone!r}")

        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @property
    def tap_names(self) -> tuple[str, ...]:
        return STYLE_LAYERS + CONTENT_LAYERS

    def extract(self, x: torch.Tensor, layers) -> list[torch.Tensor]:
        """Normalized forward pass; returns one feature map per requested
        layer, in request order. Gradients flow to x but never into the
        frozen parameters."""
        unknown = [l for l in layers if l not in self.tap_names]
        if unknown:
            raise ValueError(f"unknown tap layer(s) {unknown}; available: {list(self.tap_names)}")
        x = (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        if isinstance(self.trunk, _TinyBackbone):
            taps = self.trunk.taps(x)
            return [taps[l] for l in layers]
        wanted = {self._taps[l]: l for l in layers}
        out = {}
        h = x
        for i, module in enumerate(self.trunk):
            h = module(h)
            if i in wanted:
                out[wanted[i]] = h
            if len(out) == len(wanted):
                break
        return [out[l] for l in layers]

    def forward(self, x):
        return self.extract(x, self.tap_names)


def gram_matrix(feat: torch.Tensor) -> torch.Tensor:
    """Normalized channel-correlation matrix of a [B, C, H, W] feature map:
    G[b, j, k] = sum_hw F[b,j,h,w] * F[b,k,h,w] / (C*H*W). Returns [B, C, C]."""
    b, c, h, w = feat.shape
    return torch.einsum("bchw,bdhw->bcd", feat, feat) / (c * h * w)


def style_layer_loss(f_aug: torch.Tensor, f_tgt: torch.Tensor) -> torch.Tensor:
    """Squared Frobenius distance between Gram matrices, batch-averaged.

    Spatial dims may differ (the Gram removes them); the target may be a
    batch of one, broadcast over the augmented batch.
    """
    if f_aug.shape[1] != f_tgt.shape[1]:
        raise ValueError(f"channel counts differ: {f_aug.shape[1]} vs {f_tgt.shape[1]}")
    g_a = gram_matrix(f_aug)
    g_t = gram_matrix(f_tgt)
    return ((g_a - g_t) ** 2).sum(dim=(1, 2)).mean()


def content_layer_loss(f_aug: torch.Tensor, f_src: torch.Tensor) -> torch.Tensor:
    """Mean-normalized squared distance of raw feature maps, batch-averaged."""
    if f_aug.shape != f_src.shape:
        raise ValueError(f"feature shapes differ: {tuple(f_aug.shape)} vs {tuple(f_src.shape)}")
    return ((f_aug - f_src) ** 2).mean()


def avgpool_layer_loss(f_a: torch.Tensor, f_b: torch.Tensor, pool_kernel: int) -> torch.Tensor:
    """Non-overlapping average pooling (stride = kernel, remainder truncated)
    on both maps, then the mean-normalized squared distance of the reduced
    maps, batch-averaged. The normalizer uses the reduced dimensions."""
    if f_a.shape != f_b.shape:
        raise ValueError(f"feature shapes differ: {tuple(f_a.shape)} vs {tuple(f_b.shape)}")
    if pool_kernel > min(f_a.shape[-2], f_a.shape[-1]):
        raise ValueError(
            f"pool kernel {pool_kernel} exceeds feature map size {tuple(f_a.shape[-2:])}"
        )
    p_a = F.avg_pool2d(f_a, pool_kernel)
    p_b = F.avg_pool2d(f_b, pool_kernel)
    return ((p_a - p_b) ** 2).mean()


def perceptual_terms(
    fe: FeatureExtractor,
    cfg: PerceptualConfig,
    x_aug: torch.Tensor,
    x_s: torch.Tensor,
    x_t: torch.Tensor,
) -> dict:
    """Weighted style and content terms; style taps compare against the
    target, content taps against the source. Reference features are
    detached so gradients reach only the augmented image."""
    layers = list(STYLE_LAYERS) + list(CONTENT_LAYERS)
    feats_aug = fe.extract(x_aug, layers)
    with torch.no_grad():
        feats_src = fe.extract(x_s, CONTENT_LAYERS)
        feats_tgt = fe.extract(x_t, STYLE_LAYERS)
    aug = dict(zip(layers, feats_aug))

    style = x_aug.new_zeros(())
    for name, f_t in zip(STYLE_LAYERS, feats_tgt):
        w = cfg.layer_weights.get(name, 1.0)
        if cfg.mode == "GRAM":
            style = style + w * style_layer_loss(aug[name], f_t)
        else:
            f_t = f_t.expand_as(aug[name]) if f_t.shape[0] == 1 else f_t
            style = style + w * avgpool_layer_loss(aug[name], f_t, cfg.pool_kernel)

    content = x_aug.new_zeros(())
    for name, f_s in zip(CONTENT_LAYERS, feats_src):
        w = cfg.layer_weights.get(name, 1.0)
        if cfg.mode == "GRAM":
            content = content + w * content_layer_loss(aug[name], f_s)
        else:
            content = content + w * avgpool_layer_loss(aug[name], f_s, cfg.pool_kernel)

    return {"style": style, "content": content}


def perceptual_loss_gram(fe, cfg, x_aug, x_s, x_t) -> torch.Tensor:
    """Weighted multi-layer Gram style loss plus content loss."""
    if cfg.mode != "GRAM":
        raise ValueError(f"config mode is {cfg.mode!r}, expected GRAM")
    terms = perceptual_terms(fe, cfg, x_aug, x_s, x_t)
    return terms["style"] + terms["content"]


def perceptual_loss_avp(fe, cfg, x_aug, x_s, x_t) -> torch.Tensor:
    """Average-pooled variant: same pairing structure, pooled comparisons
    substituted for both the style and content terms."""
    if cfg.mode != "AVP":
        raise ValueError(f"config mode is {cfg.mode!r}, expected AVP")
    terms = perceptual_terms(fe, cfg, x_aug, x_s, x_t)
    return terms["style"] + terms["content"]
