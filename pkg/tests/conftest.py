import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from styleadapt.augmenter import ArchitectureSpec, Augmenter
from styleadapt.data import make_synthetic_corpus
from styleadapt.perceptual import FeatureExtractor


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Small two-domain shape corpus shared by the data/training tests."""
    root = tmp_path_factory.mktemp("corpus")
    source, target = make_synthetic_corpus(root, seed=0, n_per_class=8, n_classes=3, image_size=32)
    return {"root": root, "source": source, "target": target}


@pytest.fixture(scope="session")
def tiny_fe():
    return FeatureExtractor(backbone="tiny", seed=0)


def make_mini_augmenter(variant: str, seed: int = 0, base_width: int = 4) -> Augmenter:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return Augmenter(ArchitectureSpec(variant=variant, base_width=base_width))


@pytest.fixture()
def mini_de():
    return make_mini_augmenter("DE")


@pytest.fixture()
def mini_se():
    return make_mini_augmenter("SE")
