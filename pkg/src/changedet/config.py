"""Validated model/training configuration: single source of truth for shapes,
channel widths and ablation flags. Configs are frozen dataclasses, immutable
after validation and safe to share across threads.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from typing import Tuple

from .losses import PhaseSchedule, default_phase_schedule

SCHEMA_VERSION = 1

ABLATION_FLAGS = ("enhanced_bi3", "adaptive_multiscale", "dpb", "attention")


class ConfigError(ValueError):
    """One or more config invariants violated; `errors` lists every violation."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 3
    in_channels: int = 3
    level_channels: Tuple[int, int, int, int] = (32, 64, 128, 256)
    level_strides: Tuple[int, int, int, int] = (4, 8, 16, 32)
    backbone: str = "transformer"  # "transformer" | "conv"
    encoder_depths: Tuple[int, int, int, int] = (2, 2, 2, 2)
    encoder_heads: Tuple[int, int, int, int] = (1, 2, 4, 8)
    encoder_sr_ratios: Tuple[int, int, int, int] = (8, 4, 2, 1)
    encoder_mlp_ratio: int = 4
    bi3_iterations: int = 2
    bi3_share_weights: bool = False
    gdfa_reduction_threshold: int = 128
    gdfa_reduction_factor: int = 2
    gdfa_dropout: float = 0.1
    ppm_bins: Tuple[int, ...] = (1, 2, 3, 6)
    attention_reduction: int = 4
    spatial_kernel: int = 7
    dpb_fusion: str = "add"  # "add" | "concat"
    shape_residual: bool = True
    decoder_channels: int = 64
    # ablation flags (one per module group)
    enhanced_bi3: bool = True
    adaptive_multiscale: bool = True
    dpb: bool = True
    attention: bool = True

    @property
    def ablation_flags(self) -> dict:
        return {name: getattr(self, name) for name in ABLATION_FLAGS}

    def with_ablation(self, **flags) -> "ModelConfig":
        unknown = set(flags) - set(ABLATION_FLAGS)
        if unknown:
            raise ConfigError([f"unknown ablation flag(s): {sorted(unknown)}; known: {list(ABLATION_FLAGS)}"])
        return validate(replace(self, **flags))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        kwargs = {}
        for f in dataclasses.fields(ModelConfig):
            if f.name in d:
                v = d[f.name]
                kwargs[f.name] = tuple(v) if isinstance(v, list) else v
        return ModelConfig(**kwargs)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    base_lr: float = 1e-3
    backbone_lr_multiplier: float = 0.1
    weight_decay: float = 1e-2
    betas: Tuple[float, float] = (0.9, 0.999)
    batch_size: int = 4
    seed: int = 0
    freeze_backbone: bool = False
    cosine_decay: bool = False
    early_stop_patience: int = 0  # 0 disables early stopping
    phase_schedule: PhaseSchedule = field(default_factory=default_phase_schedule)
    # augmentation
    mixup_alpha: float = 0.2
    cutmix_alpha: float = 1.0
    geometric_prob: float = 0.5
    cutmix_prob: float = 0.3
    mixup_prob: float = 0.2
    photometric_prob: float = 0.5
    photometric_jitter: float = 0.1
    # loss details
    dice_eps: float = 1.0
    contrastive_margin: float = 1.0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["phase_schedule"] = self.phase_schedule.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        kwargs = {}
        for f in dataclasses.fields(TrainConfig):
            if f.name in d:
                v = d[f.name]
                if f.name == "phase_schedule":
                    v = PhaseSchedule.from_dict(v) if isinstance(v, dict) else v
                elif isinstance(v, list):
                    v = tuple(v)
                kwargs[f.name] = v
        return TrainConfig(**kwargs)


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _model_errors(cfg: ModelConfig) -> list:
    errs = []
    if cfg.num_classes < 2:
        errs.append(f"num_classes: must be >= 2, got {cfg.num_classes}")
    if cfg.in_channels < 1:
        errs.append(f"in_channels: must be >= 1, got {cfg.in_channels}")
    if len(cfg.level_channels) != 4:
        errs.append(f"level_channels: expected 4 entries, got {len(cfg.level_channels)}")
    else:
        if any(c < 8 for c in cfg.level_channels):
            errs.append(f"level_channels: all entries must be >= 8, got {cfg.level_channels}")
        if any(a > b for a, b in zip(cfg.level_channels, cfg.level_channels[1:])):
            errs.append(f"level_channels: must be non-decreasing, got {cfg.level_channels}")
        if cfg.level_channels[-1] % 4 != 0:
            errs.append(
                f"level_channels[3]: must be divisible by 4 for pyramid pooling branches, "
                f"got {cfg.level_channels[-1]}"
            )
    if len(cfg.level_strides) != 4:
        errs.append(f"level_strides: expected 4 entries, got {len(cfg.level_strides)}")
    else:
        if any(a >= b for a, b in zip(cfg.level_strides, cfg.level_strides[1:])):
            errs.append(f"level_strides: strides not strictly increasing: {cfg.level_strides}")
        if any(not _is_power_of_two(s) for s in cfg.level_strides):
            errs.append(f"level_strides: every stride must be a power of two, got {cfg.level_strides}")
    if cfg.backbone not in ("transformer", "conv"):
        errs.append(f"backbone: expected 'transformer' or 'conv', got {cfg.backbone!r}")
    if cfg.backbone == "transformer" and len(cfg.level_channels) == 4:
        for i, (c, h) in enumerate(zip(cfg.level_channels, cfg.encoder_heads)):
            if h < 1 or c % h != 0:
                errs.append(f"encoder_heads[{i}]: {h} must divide level_channels[{i}]={c}")
    if any(d < 1 for d in cfg.encoder_depths):
        errs.append(f"encoder_depths: all depths must be >= 1, got {cfg.encoder_depths}")
    if cfg.bi3_iterations < 1:
        errs.append(f"bi3_iterations: must be >= 1, got {cfg.bi3_iterations}")
    if cfg.gdfa_reduction_factor < 1:
        errs.append(f"gdfa_reduction_factor: must be >= 1, got {cfg.gdfa_reduction_factor}")
    if not 0.0 <= cfg.gdfa_dropout <= 1.0:
        errs.append(f"gdfa_dropout: probability out of range [0, 1]: {cfg.gdfa_dropout}")
    if not cfg.ppm_bins or any(b < 1 for b in cfg.ppm_bins):
        errs.append(f"ppm_bins: bins must be positive integers, got {cfg.ppm_bins}")
    if cfg.attention_reduction < 1:
        errs.append(f"attention_reduction: must be >= 1, got {cfg.attention_reduction}")
    if cfg.spatial_kernel % 2 != 1:
        errs.append(f"spatial_kernel: must be odd for same padding, got {cfg.spatial_kernel}")
    if cfg.dpb_fusion not in ("add", "concat"):
        errs.append(f"dpb_fusion: expected 'add' or 'concat', got {cfg.dpb_fusion!r}")
    if cfg.decoder_channels < 8:
        errs.append(f"decoder_channels: must be >= 8, got {cfg.decoder_channels}")
    return errs


def _train_errors(cfg: TrainConfig) -> list:
    errs = []
    if cfg.epochs < 1:
        errs.append(f"epochs: must be >= 1, got {cfg.epochs}")
    if cfg.base_lr <= 0:
        errs.append(f"base_lr: must be positive, got {cfg.base_lr}")
    if not 0 < cfg.backbone_lr_multiplier <= 1.0:
        errs.append(f"backbone_lr_multiplier: must be in (0, 1], got {cfg.backbone_lr_multiplier}")
    if cfg.weight_decay < 0:
        errs.append(f"weight_decay: must be >= 0, got {cfg.weight_decay}")
    if cfg.batch_size < 1:
        errs.append(f"batch_size: must be >= 1, got {cfg.batch_size}")
    if cfg.mixup_alpha <= 0:
        errs.append(f"mixup_alpha: must be positive, got {cfg.mixup_alpha}")
    if cfg.cutmix_alpha <= 0:
        errs.append(f"cutmix_alpha: must be positive, got {cfg.cutmix_alpha}")
    for name in ("geometric_prob", "cutmix_prob", "mixup_prob", "photometric_prob", "gdfa_dropout"):
        if not hasattr(cfg, name):
            continue
        v = getattr(cfg, name)
        if not 0.0 <= v <= 1.0:
            errs.append(f"{name}: probability out of range [0, 1]: {v}")
    if cfg.cutmix_prob + cfg.mixup_prob > 1.0:
        errs.append(
            f"cutmix_prob + mixup_prob: must not exceed 1 (mutually exclusive per batch), "
            f"got {cfg.cutmix_prob} + {cfg.mixup_prob}"
        )
    if cfg.early_stop_patience < 0:
        errs.append(f"early_stop_patience: must be >= 0, got {cfg.early_stop_patience}")
    errs.extend(cfg.phase_schedule.validation_errors())
    if not errs and cfg.phase_schedule.epochs != cfg.epochs:
        errs.append(
            f"phase_schedule: covers [0, {cfg.phase_schedule.epochs}) but epochs={cfg.epochs}"
        )
    return errs


def validation_errors(cfg) -> list:
    """All violated invariants of a ModelConfig or TrainConfig, as field-path messages."""
    if isinstance(cfg, ModelConfig):
        return _model_errors(cfg)
    if isinstance(cfg, TrainConfig):
        return _train_errors(cfg)
    raise TypeError(f"expected ModelConfig or TrainConfig, got {type(cfg).__name__}")


def validate(cfg):
    """Return `cfg` unchanged if every invariant holds, else raise ConfigError."""
    errs = validation_errors(cfg)
    if errs:
        raise ConfigError(errs)
    return cfg


# Named presets. "tiny" is the fast-test / desk-acceptance scale; "b1" follows
# the full-width reference encoder the default architecture miniaturizes.
PRESETS = {
    "default": ModelConfig(),
    "tiny": ModelConfig(
        level_channels=(16, 16, 32, 32),
        encoder_depths=(1, 1, 1, 1),
        encoder_heads=(1, 2, 4, 8),
        bi3_iterations=1,
        decoder_channels=16,
    ),
    "b1": ModelConfig(
        level_channels=(64, 128, 320, 512),
        encoder_depths=(2, 2, 2, 2),
        encoder_heads=(1, 2, 5, 8),
        decoder_channels=128,
    ),
}


def preset(name: str) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError([f"preset: unknown preset {name!r}; available: {sorted(PRESETS)}"])
    return validate(PRESETS[name])
