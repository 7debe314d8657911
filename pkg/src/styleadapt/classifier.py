"""Classification network and its cross-entropy objective.

The backbone is pluggable behind one constructor: ResNet-101 for full-scale
runs (optionally initialized from a weights file; the stock classification
head is always discarded for a fresh K-way head) and a small CNN for
desk-scale tests.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .data import ImageBatch

CLASSIFIER_BACKBONES = ("resnet101", "small")


class SmallCNN(nn.Module):
    """Four conv/BN stages with max pooling, global average pooling, linear
    head. BatchNorm keeps plain SGD workable from scratch."""

    def __init__(self, num_classes: int):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, 3, 1, 1), nn.BatchNorm2d(16), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, 1, 1), nn.BatchNorm2d(32), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(32, 64, 3, 1, 1), nn.BatchNorm2d(64), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(64, 64, 3, 1, 1), nn.BatchNorm2d(64), nn.ReLU(),
        )
        self.head = nn.Linear(64, num_classes)

    def forward(self, x):
        h = self.features(x)
        h = F.adaptive_avg_pool2d(h, 1).flatten(1)
        return self.head(h)


def build_classifier(
    backbone: str,
    num_classes: int,
    weights_path: str | None = None,
    trunk_seed: int = 0,
) -> nn.Module:
    """Construct a K-way classifier.

    For resnet101 the trunk init is fixed by trunk_seed (standing in for
    pretrained weights when no file is given) while the replacement head is
    drawn from the ambient RNG, i.e. fresh per training run. The small CNN
    is entirely fresh per run.
    """
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    if backbone == "resnet101":
        import torchvision

        with torch.random.fork_rng():
            torch.manual_seed(trunk_seed)
            model = torchvision.models.resnet101(weights=None)
        if weights_path:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            model.load_state_dict(state, strict=False)
        model.fc = nn.Linear(model.fc.in_features, num_classes)
    elif backbone == "small":
        model = SmallCNN(num_classes)
    else:
        raise ValueError(f"unknown classifier backbone: {backbone!r}")
    model.num_classes = num_classes
    return model


def classify(model: nn.Module, x) -> torch.Tensor:
    """Forward pass to [batch, K] logits; deterministic in eval mode."""
    x = x.data if isinstance(x, ImageBatch) else x
    return model(x)


def one_hot(labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    """Integer class indices to float one-hot rows (each sums to exactly 1)."""
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError("label index out of range")
    return F.one_hot(labels.long(), num_classes).to(torch.get_default_dtype())


def cross_entropy(logits: torch.Tensor, labels_onehot: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of -sum_k y_k * log softmax(logits)_k.

    Uses log-softmax (log-sum-exp) so extreme logits neither overflow nor
    lose the near-zero loss of a confidently correct prediction.
    """
    if logits.shape[0] != labels_onehot.shape[0]:
        raise ValueError(
            f"row counts differ: {logits.shape[0]} logits vs {labels_onehot.shape[0]} labels"
        )
    return -(labels_onehot * F.log_softmax(logits, dim=1)).sum(dim=1).mean()
