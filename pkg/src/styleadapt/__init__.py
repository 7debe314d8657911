"""One-shot unsupervised domain adaptation via learned target-styled
augmentations: an encoder-decoder augmenter trained under style/content
perceptual losses, alternating with classifier training on the augmented
samples."""

__version__ = "0.1.0"

from .augmenter import (
    ArchitectureSpec,
    Augmenter,
    mixup_embeddings,
    sample_mixup_lambda,
)
from .classifier import build_classifier, classify, cross_entropy, one_hot
from .config import TrainConfig, config_digest, config_to_text, load_config
from .data import (
    DomainDataset,
    ImageBatch,
    TargetSet,
    iter_batches,
    load_image_folder,
    make_synthetic_corpus,
    preprocess,
    select_targets,
)
from .errors import CheckpointError, ConfigError, DatasetError, TrainingError
from .evaluation import (
    AggregateReport,
    MetricsReport,
    aggregate_runs,
    evaluate,
    render_report,
    render_table,
)
from .perceptual import (
    FeatureExtractor,
    PerceptualConfig,
    avgpool_layer_loss,
    content_layer_loss,
    gram_matrix,
    perceptual_loss_avp,
    perceptual_loss_gram,
    style_layer_loss,
)
from .training import (
    Checkpoint,
    load_checkpoint,
    param_digest,
    save_checkpoint,
    step_augmenter,
    step_classifier,
    train,
)

__all__ = [
    "AggregateReport",
    "ArchitectureSpec",
    "Augmenter",
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "DatasetError",
    "DomainDataset",
    "FeatureExtractor",
    "ImageBatch",
    "MetricsReport",
    "PerceptualConfig",
    "TargetSet",
    "TrainConfig",
    "TrainingError",
    "aggregate_runs",
    "avgpool_layer_loss",
    "build_classifier",
    "classify",
    "config_digest",
    "config_to_text",
    "content_layer_loss",
    "cross_entropy",
    "evaluate",
    "gram_matrix",
    "iter_batches",
    "load_checkpoint",
    "load_config",
    "load_image_folder",
    "make_synthetic_corpus",
    "mixup_embeddings",
    "one_hot",
    "param_digest",
    "perceptual_loss_avp",
    "perceptual_loss_gram",
    "preprocess",
    "render_report",
    "render_table",
    "sample_mixup_lambda",
    "save_checkpoint",
    "select_targets",
    "step_augmenter",
    "step_classifier",
    "style_layer_loss",
    "train",
]
