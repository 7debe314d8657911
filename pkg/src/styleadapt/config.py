"""Run configuration: a flat dataclass, a flat key=value file format that
mirrors it 1:1, and --set style overrides.

Every key has a default; unknown keys are a hard error. Booleans are
written true/false; the layer-weight map is written name:value pairs
joined by commas (layer_weights=relu1_2:0.25,relu2_2:1.0,relu4_3:1.0).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


def _default_layer_weights() -> dict:
    return {"relu1_2": 0.25, "relu2_2": 1.0, "relu4_3": 1.0}


@dataclass
class TrainConfig:
    # datasets
    source_root: str = ""
    target_root: str = ""
    eval_root: str = ""  # empty -> evaluate on target_root

    # model architecture
    variant: str = "DE"  # SE | DE
    aum_base_width: int = 64
    classifier_backbone: str = "resnet101"  # resnet101 | small
    classifier_weights: str = ""
    sam_backbone: str = "vgg16"  # vgg16 | tiny
    sam_weights: str = ""

    # losses
    perceptual_mode: str = "GRAM"  # GRAM | AVP
    layer_weights: dict = field(default_factory=_default_layer_weights)
    pool_kernel: int = 2
    use_rec_loss: bool = False
    rec_on_target: bool = True

    # optimization
    epochs: int = 20
    batch_size: int = 8
    input_size: int = 224
    cm_lr: float = 1e-4
    cm_momentum: float = 0.9
    aum_lr: float = 1e-3
    aum_weight_decay: float = 0.01
    mixup_alpha: float = 5.0
    mixup_beta: float = 1.0
    classifier_warmup_steps: int = 0
    step_ratio: str = "1:1"  # classifier:augmenter updates per batch
    source_only: bool = False
    max_steps: int = 0  # 0 = no cap; otherwise stop after this many updates

    # targets and seeding
    k_targets: int = 1
    seed_train: int = 0
    seed_target_selection: int = 0

    def ratio(self) -> tuple[int, int]:
        try:
            a, b = (int(p) for p in self.step_ratio.split(":"))
        except ValueError as exc:
            raise ConfigError(f"step_ratio must look like '1:1', got {self.step_ratio!r}") from exc
        return a, b

    def validate(self) -> "TrainConfig":
        problems = []
        if self.variant not in ("SE", "DE"):
            problems.append(f"variant must be SE or DE, got {self.variant!r}")
        if self.perceptual_mode not in ("GRAM", "AVP"):
            problems.append(f"perceptual_mode must be GRAM or AVP, got {self.perceptual_mode!r}")
        if self.classifier_backbone not in ("resnet101", "small"):
            problems.append(f"unknown classifier_backbone {self.classifier_backbone!r}")
        if self.sam_backbone not in ("vgg16", "tiny"):
            problems.append(f"unknown sam_backbone {self.sam_backbone!r}")
        for name in ("cm_lr", "aum_lr"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be > 0")
        for name in ("epochs", "batch_size", "input_size", "k_targets", "aum_base_width"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.input_size % 8:
            problems.append(f"input_size must be divisible by 8, got {self.input_size}")
        if self.classifier_warmup_steps < 0 or self.max_steps < 0:
            problems.append("step counts must be non-negative")
        if any(w < 0 for w in self.layer_weights.values()):
            problems.append("layer_weights must be non-negative")
        if self.use_rec_loss and self.variant != "DE":
            problems.append("use_rec_loss requires variant=DE")
        try:
            a, b = self.ratio()
            if a < 1 or b < 1:
                problems.append("step_ratio components must be >= 1")
        except ConfigError as exc:
            problems.append(str(exc))
        if problems:
            raise ConfigError("; ".join(problems))
        return self


_FIELDS = {f.name: f for f in fields(TrainConfig)}


def _parse_layer_weights(raw: str) -> dict:
    out = {}
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ConfigError(f"layer_weights entries look like name:value, got {part!r}")
        name, val = part.split(":", 1)
        try:
            out[name.strip()] = float(val)
        except ValueError as exc:
            raise ConfigError(f"bad layer weight {part!r}") from exc
    if not out:
        raise ConfigError("layer_weights must name at least one layer")
    return out


def coerce_value(key: str, raw: str):
    """Parse the string form of one config value per its field type."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key: {key!r}")
    if key == "layer_weights":
        return _parse_layer_weights(raw)
    typ = _FIELDS[key].type
    raw = raw.strip()
    if typ == "bool":
        if raw not in ("true", "false"):
            raise ConfigError(f"{key} must be true or false, got {raw!r}")
        return raw == "true"
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_config_text(text: str) -> dict:
    """key=value lines to a {field: parsed value} dict. Blank lines and
    #-comments are ignored; unknown keys raise."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno} is not key=value: {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        values[key] = coerce_value(key, raw)
    return values


def load_config(path: Path | str | None = None, overrides: list[str] | None = None) -> TrainConfig:
    """Resolve defaults <- config file <- --set overrides, then validate."""
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text()))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        values[key.strip()] = coerce_value(key.strip(), raw)
    return TrainConfig(**values).validate()


def config_to_text(cfg: TrainConfig) -> str:
    """Canonical flat serialization; parsing it back reproduces cfg."""
    lines = []
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        if f.name == "layer_weights":
            v = ",".join(f"{k}:{val!r}" for k, val in sorted(v.items()))
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def config_digest(cfg: TrainConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode()).hexdigest()
