"""Two-phase alternating training.

Phase "cm" updates only the classifier on augmented samples carrying their
source labels; phase "aum" updates only the augmentation network under the
perceptual loss (plus the reconstruction term when enabled). The feature
extractor never trains. Per batch, one target image is drawn uniformly
from the target set, then step_ratio decides how many updates of each
phase run on that batch.

Everything stochastic runs off named RNG streams derived from seed_train
(shuffle / target choice / mixup), so identical configs and seeds give
identical loss trajectories, and checkpoints capture enough state (models,
optimizers, counters, RNG streams, the in-flight epoch permutation) to
resume bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .augmenter import ArchitectureSpec, Augmenter, sample_mixup_lambda
from .classifier import build_classifier, classify, cross_entropy, one_hot
from .config import TrainConfig, config_digest, config_to_text, load_config
from .data import DomainDataset, ImageBatch, TargetSet, iter_batches
from .errors import CheckpointError, TrainingError
from .perceptual import FeatureExtractor, PerceptualConfig, perceptual_terms

CHECKPOINT_FORMAT_VERSION = 1

_REQUIRED_CHECKPOINT_FIELDS = (
    "format_version",
    "config_text",
    "config_digest",
    "class_names",
    "counters",
    "models",
    "optimizers",
    "rng",
)


def trajectory_digest(cfg: TrainConfig) -> str:
    """Digest of everything that shapes the step-by-step trajectory.

    epochs and max_steps only decide when training stops, so resuming with
    a larger budget is still the same run.
    """
    import dataclasses

    neutral = dataclasses.replace(cfg, epochs=1, max_steps=0)
    return config_digest(neutral)


def param_digest(module: torch.nn.Module) -> str:
    """SHA-256 over all parameters and buffers; bit-identical states match."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def _grad_norms(named_modules: dict) -> dict:
    out = {}
    for name, module in named_modules.items():
        if module is None:
            continue
        total = 0.0
        for p in module.parameters():
            if p.grad is not None:
                total += float((p.grad.detach() ** 2).sum())
        out[name] = total ** 0.5
    return out


@dataclass
class Checkpoint:
    """Resumable training state: models, optimizers, counters, RNG streams."""

    config_text: str
    config_digest: str
    class_names: tuple
    epoch: int
    batch_in_epoch: int
    global_step: int
    cm_state: dict
    aum_state: Optional[dict]
    cm_opt_state: dict
    aum_opt_state: Optional[dict]
    torch_rng: torch.Tensor
    stream_states: dict
    epoch_perm: Optional[np.ndarray]
    format_version: int = CHECKPOINT_FORMAT_VERSION


def save_checkpoint(ckpt: Checkpoint, path: Path | str) -> None:
    payload = {
        "format_version": ckpt.format_version,
        "config_text": ckpt.config_text,
        "config_digest": ckpt.config_digest,
        "class_names": tuple(ckpt.class_names),
        "counters": {
            "epoch": ckpt.epoch,
            "batch_in_epoch": ckpt.batch_in_epoch,
            "global_step": ckpt.global_step,
        },
        "models": {"cm": ckpt.cm_state, "aum": ckpt.aum_state},
        "optimizers": {"cm": ckpt.cm_opt_state, "aum": ckpt.aum_opt_state},
        "rng": {"torch": ckpt.torch_rng, "streams": ckpt.stream_states},
        "epoch_perm": ckpt.epoch_perm,
    }
    # Serialize through a buffer: the container then carries no trace of the
    # destination path, so equal states give byte-identical files anywhere.
    import io

    buf = io.BytesIO()
    torch.save(payload, buf)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: Path | str) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint file not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise CheckpointError(f"checkpoint {path} is not a state container")
    for key in _REQUIRED_CHECKPOINT_FIELDS:
        if key not in payload:
            raise CheckpointError(f"checkpoint {path} is missing field {key!r}")
    version = payload["format_version"]
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version!r} unsupported (expected {CHECKPOINT_FORMAT_VERSION})"
        )
    return Checkpoint(
        config_text=payload["config_text"],
        config_digest=payload["config_digest"],
        class_names=tuple(payload["class_names"]),
        epoch=payload["counters"]["epoch"],
        batch_in_epoch=payload["counters"]["batch_in_epoch"],
        global_step=payload["counters"]["global_step"],
        cm_state=payload["models"]["cm"],
        aum_state=payload["models"]["aum"],
        cm_opt_state=payload["optimizers"]["cm"],
        aum_opt_state=payload["optimizers"]["aum"],
        torch_rng=payload["rng"]["torch"],
        stream_states=payload["rng"]["streams"],
        epoch_perm=payload["epoch_perm"],
        format_version=version,
    )


def build_models(cfg: TrainConfig, num_classes: int, with_extractor: bool = True):
    """Construct (augmenter, classifier, feature extractor) per config.

    source_only runs get no augmenter and no extractor. Extractor and
    pretrained-style trunks use fixed seeds (isolated from the ambient RNG);
    fresh parts (augmenter, classifier head) draw from the ambient torch RNG.
    """
    aum = None
    fe = None
    if not cfg.source_only:
        spec = ArchitectureSpec(variant=cfg.variant, base_width=cfg.aum_base_width)
        aum = Augmenter(spec)
        if with_extractor:
            fe = FeatureExtractor(cfg.sam_backbone, weights_path=cfg.sam_weights or None, seed=0)
    cm = build_classifier(
        cfg.classifier_backbone, num_classes, weights_path=cfg.classifier_weights or None
    )
    return aum, cm, fe


def make_optimizers(cfg: TrainConfig, cm, aum):
    cm_opt = torch.optim.SGD(cm.parameters(), lr=cfg.cm_lr, momentum=cfg.cm_momentum)
    aum_opt = None
    if aum is not None:
        aum_opt = torch.optim.AdamW(
            aum.parameters(), lr=cfg.aum_lr, weight_decay=cfg.aum_weight_decay
        )
    return cm_opt, aum_opt


def _spawn_streams(seed: int) -> dict:
    ss = np.random.SeedSequence(seed)
    shuffle_ss, target_ss, mixup_ss = ss.spawn(3)
    return {
        "shuffle": np.random.default_rng(shuffle_ss),
        "target": np.random.default_rng(target_ss),
        "mixup": np.random.default_rng(mixup_ss),
    }


def _draw_lambda(cfg: TrainConfig, streams: dict) -> Optional[float]:
    if cfg.variant == "SE" and not cfg.source_only:
        return sample_mixup_lambda(streams["mixup"], cfg.mixup_alpha, cfg.mixup_beta)
    return None


def step_classifier(cm, cm_opt, aum, batch: ImageBatch, target: torch.Tensor,
                    cfg: TrainConfig, lam: Optional[float] = None) -> float:
    """One classifier update on augmented samples with source labels.

    The augmenter runs under no_grad, so its parameters are untouched by
    construction. With source_only (or no augmenter) the raw batch is used.
    """
    if aum is None or cfg.source_only:
        x_in = batch.data
    else:
        with torch.no_grad():
            x_in = aum.augment(batch.data, target, lam=lam)
    logits = classify(cm, x_in)
    loss = cross_entropy(logits, one_hot(batch.labels, cm.num_classes))
    if not torch.isfinite(loss):
        raise TrainingError(
            "non-finite classifier loss",
            {"phase": "cm", "loss": float(loss.detach()), "grad_norms": _grad_norms({"cm": cm})},
        )
    cm_opt.zero_grad()
    loss.backward()
    cm_opt.step()
    return float(loss.detach())


def step_augmenter(aum, aum_opt, fe, batch: ImageBatch, target: torch.Tensor,
                   cfg: TrainConfig, lam: Optional[float] = None) -> tuple[float, dict]:
    """One augmenter update under the perceptual loss (plus reconstruction
    when configured). Classifier and extractor parameters are untouched."""
    pcfg = PerceptualConfig(
        layer_weights=cfg.layer_weights, mode=cfg.perceptual_mode, pool_kernel=cfg.pool_kernel
    )
    x_aug = aum.augment(batch.data, target, lam=lam)
    terms = perceptual_terms(fe, pcfg, x_aug, batch.data, target)
    components = {"style": float(terms["style"].detach()), "content": float(terms["content"].detach())}
    loss = terms["style"] + terms["content"]
    if cfg.use_rec_loss:
        rec_input = torch.cat([batch.data, target], dim=0) if cfg.rec_on_target else batch.data
        rec = aum.reconstruction_loss(rec_input)
        components["rec"] = float(rec.detach())
        loss = loss + rec
    if not torch.isfinite(loss):
        raise TrainingError(
            "non-finite augmenter loss",
            {"phase": "aum", "loss": float(loss.detach()), "components": components,
             "grad_norms": _grad_norms({"aum": aum})},
        )
    aum_opt.zero_grad()
    loss.backward()
    aum_opt.step()
    return float(loss.detach()), components


class _RunLog:
    """Line-delimited JSON records, one per optimizer update."""

    def __init__(self, path: Optional[Path], mode: str = "w"):
        self._fh = open(path, mode) if path is not None else None

    def write(self, record: dict) -> None:
        if self._fh is not None:
            self._fh.write(json.dumps(record) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _make_checkpoint(cfg, class_names, epoch, batch_in_epoch, global_step,
                     cm, aum, cm_opt, aum_opt, streams, epoch_perm) -> Checkpoint:
    return Checkpoint(
        config_text=config_to_text(cfg),
        config_digest=config_digest(cfg),
        class_names=tuple(class_names),
        epoch=epoch,
        batch_in_epoch=batch_in_epoch,
        global_step=global_step,
        cm_state=cm.state_dict(),
        aum_state=aum.state_dict() if aum is not None else None,
        cm_opt_state=cm_opt.state_dict(),
        aum_opt_state=aum_opt.state_dict() if aum_opt is not None else None,
        torch_rng=torch.get_rng_state(),
        stream_states={k: v.bit_generator.state for k, v in streams.items()},
        epoch_perm=None if epoch_perm is None else np.asarray(epoch_perm).copy(),
    )


def train(
    cfg: TrainConfig,
    source: DomainDataset,
    targets: TargetSet,
    out_dir: Path | str,
    eval_dataset: Optional[DomainDataset] = None,
    resume: Optional[Checkpoint] = None,
):
    """Run the alternating schedule over the source set for cfg.epochs.

    Writes train_log.jsonl and per-epoch checkpoint.pt under out_dir.
    Returns (final Checkpoint, MetricsReport or None). A NaN loss aborts
    with diagnostics instead of silently continuing.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(cfg.seed_train)
    aum, cm, fe = build_models(cfg, source.num_classes)
    cm_opt, aum_opt = make_optimizers(cfg, cm, aum)
    streams = _spawn_streams(cfg.seed_train)

    start_epoch, start_batch, global_step = 0, 0, 0
    epoch_perm = None
    if resume is not None:
        if trajectory_digest(load_config_text(resume.config_text)) != trajectory_digest(cfg):
            raise CheckpointError("checkpoint was produced by a different configuration")
        cm.load_state_dict(resume.cm_state)
        if aum is not None:
            if resume.aum_state is None:
                raise CheckpointError("checkpoint has no augmenter state")
            aum.load_state_dict(resume.aum_state)
            aum_opt.load_state_dict(resume.aum_opt_state)
        cm_opt.load_state_dict(resume.cm_opt_state)
        torch.set_rng_state(resume.torch_rng)
        for name, rng in streams.items():
            rng.bit_generator.state = resume.stream_states[name]
        start_epoch = resume.epoch
        start_batch = resume.batch_in_epoch
        global_step = resume.global_step
        epoch_perm = resume.epoch_perm

    s1, s2 = cfg.ratio()
    n = len(source)
    n_batches = (n + cfg.batch_size - 1) // cfg.batch_size
    cache: dict = {}
    log = _RunLog(out_dir / "train_log.jsonl", mode="a" if resume is not None else "w")
    ckpt_path = out_dir / "checkpoint.pt"
    ckpt = None
    stop = False

    def budget_left() -> bool:
        return cfg.max_steps == 0 or global_step < cfg.max_steps

    try:
        for epoch in range(start_epoch, cfg.epochs):
            if epoch_perm is None:
                epoch_perm = streams["shuffle"].permutation(n)
            batches = iter_batches(
                source, cfg.batch_size, size=cfg.input_size,
                order=epoch_perm[start_batch * cfg.batch_size :], cache=cache,
            )
            for b_off, batch in enumerate(batches):
                b_idx = start_batch + b_off
                # The step budget is checked at batch-cycle boundaries so a
                # checkpoint never lands mid-cycle (resume stays bit-exact).
                if not budget_left():
                    stop = True
                    ckpt = _make_checkpoint(cfg, source.class_names, epoch, b_idx,
                                            global_step, cm, aum, cm_opt, aum_opt,
                                            streams, epoch_perm)
                    break
                t_idx = int(streams["target"].integers(targets.k))
                target = targets.images[t_idx : t_idx + 1]
                lam = _draw_lambda(cfg, streams)

                in_warmup = global_step < cfg.classifier_warmup_steps
                cm_updates = 1 if in_warmup else s1
                aum_updates = 0 if (in_warmup or cfg.source_only) else s2

                for _ in range(cm_updates):
                    t0 = time.perf_counter()
                    loss = step_classifier(cm, cm_opt, aum, batch, target, cfg, lam=lam)
                    global_step += 1
                    log.write({
                        "step": global_step, "epoch": epoch, "batch": b_idx, "phase": "cm",
                        "loss": loss, "time": round(time.perf_counter() - t0, 6),
                    })
                for _ in range(aum_updates):
                    t0 = time.perf_counter()
                    loss, comps = step_augmenter(aum, aum_opt, fe, batch, target, cfg, lam=lam)
                    global_step += 1
                    log.write({
                        "step": global_step, "epoch": epoch, "batch": b_idx, "phase": "aum",
                        "loss": loss, "components": comps,
                        "time": round(time.perf_counter() - t0, 6),
                    })
            start_batch = 0
            epoch_perm = None
            if stop:
                break
            ckpt = _make_checkpoint(cfg, source.class_names, epoch + 1, 0, global_step,
                                    cm, aum, cm_opt, aum_opt, streams, None)
            save_checkpoint(ckpt, ckpt_path)
    except TrainingError as exc:
        log.write({"event": "abort", "reason": str(exc), "diagnostics": exc.diagnostics,
                   "step": global_step})
        log.close()
        raise
    log.close()

    if ckpt is None:
        ckpt = _make_checkpoint(cfg, source.class_names, cfg.epochs, 0, global_step,
                                cm, aum, cm_opt, aum_opt, streams, None)
    save_checkpoint(ckpt, ckpt_path)

    report = None
    if eval_dataset is not None:
        from .evaluation import evaluate

        report = evaluate(cm, eval_dataset, batch_size=cfg.batch_size,
                          input_size=cfg.input_size, run_seed=cfg.seed_train)
    return ckpt, report


def models_from_checkpoint(ckpt: Checkpoint):
    """Rebuild (cfg, aum, cm) from a checkpoint's stored config and states."""
    cfg = load_config_text(ckpt.config_text)
    torch.manual_seed(cfg.seed_train)
    aum, cm, _ = build_models(cfg, len(ckpt.class_names), with_extractor=False)
    cm.load_state_dict(ckpt.cm_state)
    if aum is not None and ckpt.aum_state is not None:
        aum.load_state_dict(ckpt.aum_state)
    elif aum is not None:
        aum = None
    return cfg, aum, cm


def load_config_text(text: str) -> TrainConfig:
    from .config import parse_config_text

    return TrainConfig(**parse_config_text(text)).validate()
