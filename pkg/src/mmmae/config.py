"""Flat dotted-key configuration: defaults < mode defaults < file < --set overrides.

The resolved config is rendered to canonical sorted key=value text; that text
is echoed to the run directory and hashed into checkpoints so a resumed run
can prove it matches the original.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from .decoder import DecoderConfig
from .encoder import ENCODER_PRESETS, EncoderConfig
from .errors import ConfigurationError
from .model import ModelConfig
from .trainer import TrainingConfig

DEFAULTS: dict[str, Any] = {
    "model.image_size": 224,
    "model.patch": 16,
    "model.d_max": 2.0,
    "model.n_groups": 196,
    "model.group_size": 32,
    "model.target_mode": "standardize",
    "encoder.preset": "small",
    "encoder.dim": 0,  # 0 = take from preset
    "encoder.depth": 0,
    "encoder.heads": 0,
    "encoder.mlp_ratio": 4.0,
    "encoder.layerscale": False,
    "encoder.layerscale_init": 1e-5,
    "decoder.dim": 512,
    "decoder.depth": 4,
    "decoder.heads": 8,
    "decoder.shared_mask_token": False,
    "mask.alpha": 1.0,
    "mask.budget": 96,
    "train.total_steps": 100,
    "train.warmup_steps": 10,
    "train.peak_lr": 3e-4,
    "train.min_lr": 3e-6,
    "train.weight_decay": 0.01,
    "train.grad_clip_norm": 0.1,
    "train.batch_size": 2,
    "train.seed": 0,
    "train.ckpt_every": 0,
    "train.augment": False,
    "train.beta": 1.0,
    "train.smooth_l1_delta": 1.0,
    "augment.brightness": 0.1,
    "augment.contrast": 0.1,
    "augment.saturation": 0.1,
    "augment.hue": 0.05,
    "data.path": "",
    "data.n_points": 8192,
    "distill.teacher": "",
}

MODE_DEFAULTS = {"distill": {"mask.budget": 60}}


def _coerce(key: str, raw: str) -> Any:
    default = DEFAULTS[key]
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"config key {key} expects a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as e:
        raise ConfigurationError(f"config key {key}: {e}") from e
    return raw.strip()


def parse_text(text: str, origin: str = "<config>") -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"{origin}:{lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def parse_file(path: str | Path) -> dict[str, str]:
    return parse_text(Path(path).read_text(), origin=str(path))


def from_text(text: str) -> dict[str, Any]:
    """Coerce a rendered config snapshot back into typed values."""
    raw = parse_text(text)
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigurationError(f"unknown config keys in snapshot: {', '.join(unknown)}")
    cfg = dict(DEFAULTS)
    cfg.update({k: _coerce(k, v) for k, v in raw.items()})
    return cfg


def resolve(
    file_path: Optional[str] = None,
    overrides: Optional[list[str]] = None,
    mode: Optional[str] = None,
    seed: Optional[int] = None,
) -> dict[str, Any]:
    """Resolved flat config. Unknown keys are rejected."""
    cfg = dict(DEFAULTS)
    cfg.update(MODE_DEFAULTS.get(mode, {}))

    raw: dict[str, str] = {}
    if file_path:
        raw.update(parse_file(file_path))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()

    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    for key, value in raw.items():
        cfg[key] = _coerce(key, value)
    if seed is not None:
        cfg["train.seed"] = seed
    return cfg


def render(cfg: dict[str, Any]) -> str:
    lines = []
    for key in sorted(cfg):
        v = cfg[key]
        lines.append(f"{key}={str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def encoder_config(cfg: dict[str, Any]) -> EncoderConfig:
    preset = cfg["encoder.preset"]
    if preset != "custom":
        base = ENCODER_PRESETS.get(preset)
        if base is None:
            raise ConfigurationError(f"unknown encoder preset {preset!r}")
    else:
        base = None
    dim = cfg["encoder.dim"] or (base.dim if base else 0)
    depth = cfg["encoder.depth"] or (base.depth if base else 0)
    heads = cfg["encoder.heads"] or (base.heads if base else 0)
    if dim <= 0 or heads <= 0:
        raise ConfigurationError("encoder.dim/heads must be set (directly or via a preset)")
    return EncoderConfig(
        dim=dim,
        depth=depth,
        heads=heads,
        mlp_ratio=cfg["encoder.mlp_ratio"],
        layerscale=cfg["encoder.layerscale"],
        layerscale_init=cfg["encoder.layerscale_init"],
    )


def model_config(cfg: dict[str, Any]) -> ModelConfig:
    return ModelConfig(
        image_size=cfg["model.image_size"],
        patch=cfg["model.patch"],
        d_max=cfg["model.d_max"],
        n_groups=cfg["model.n_groups"],
        group_size=cfg["model.group_size"],
        encoder=encoder_config(cfg),
        decoder=DecoderConfig(
            dim=cfg["decoder.dim"],
            depth=cfg["decoder.depth"],
            heads=cfg["decoder.heads"],
            shared_mask_token=cfg["decoder.shared_mask_token"],
        ),
        target_mode=cfg["model.target_mode"],
    )


def training_config(cfg: dict[str, Any]) -> TrainingConfig:
    return TrainingConfig(
        total_steps=cfg["train.total_steps"],
        warmup_steps=cfg["train.warmup_steps"],
        peak_lr=cfg["train.peak_lr"],
        min_lr=cfg["train.min_lr"],
        weight_decay=cfg["train.weight_decay"],
        grad_clip_norm=cfg["train.grad_clip_norm"],
        batch_size=cfg["train.batch_size"],
        budget=cfg["mask.budget"],
        alpha=cfg["mask.alpha"],
        beta=cfg["train.beta"],
        seed=cfg["train.seed"],
        ckpt_every=cfg["train.ckpt_every"],
        augment=cfg["train.augment"],
        jitter=(
            cfg["augment.brightness"],
            cfg["augment.contrast"],
            cfg["augment.saturation"],
            cfg["augment.hue"],
        ),
        smooth_l1_delta=cfg["train.smooth_l1_delta"],
    )
