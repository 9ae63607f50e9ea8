"""Resolved run configuration: presets, config-file merging, snapshots.

The ``toy`` preset is the desk-scale default (32x32 crops, short stages);
``paper`` pins the full-scale recipe (100 frames at stride 6, 224x224
crops, 150/50 epochs, lr 0.01/0.00015, weight decay 0.0001/0.05). Flags
override config-file values, which override the preset. Every command
writes its resolved config next to its outputs so a run can be reproduced
from its directory alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import EncoderConfig
from .lm import LMConfig
from .train import StageConfig, joint_config, warmup_config


@dataclass
class DataConfig:
    canvas: int = 40
    raw_length: int = 64
    object_size: int = 9
    speed: float = 0.4
    frame_count: int = 8
    frame_stride: int = 6
    crop_size: int = 32
    sampler: str = "strided"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RunConfig:
    preset: str = "toy"
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lm: LMConfig = field(default_factory=LMConfig)
    data: DataConfig = field(default_factory=DataConfig)
    warmup: StageConfig = field(default_factory=lambda: warmup_config())
    joint: StageConfig = field(default_factory=lambda: joint_config())
    eval_clips: int = 25
    max_new_tokens: int = 16
    system_text: str = "describe the video"
    w_c: float = 0.5
    w_s: float = 0.5

    def __post_init__(self):
        if self.data.crop_size > self.data.canvas:
            raise ValueError(
                f"crop_size {self.data.crop_size} exceeds canvas {self.data.canvas}")
        if self.encoder.input_size != self.data.crop_size:
            raise ValueError(
                f"encoder input_size {self.encoder.input_size} must equal "
                f"crop_size {self.data.crop_size}")

    def stage(self, name: str) -> StageConfig:
        if name == "warmup":
            return self.warmup
        if name == "joint":
            return self.joint
        raise ValueError(f"unknown stage {name!r}")

    def to_dict(self) -> dict:
        return {
            "preset": self.preset, "seed": self.seed,
            "encoder": self.encoder.to_dict(), "lm": self.lm.to_dict(),
            "data": self.data.to_dict(),
            "warmup": self.warmup.to_dict(), "joint": self.joint.to_dict(),
            "eval_clips": self.eval_clips, "max_new_tokens": self.max_new_tokens,
            "system_text": self.system_text, "w_c": self.w_c, "w_s": self.w_s,
        }

    def snapshot(self, directory: str | Path, extra: dict | None = None) -> Path:
        payload = self.to_dict()
        if extra:
            payload["command"] = extra
        path = Path(directory) / "resolved_config.json"
        path.write_text(json.dumps(payload, indent=2))
        return path


def _sync_stage_data(stage: StageConfig, data: DataConfig, system_text: str) -> StageConfig:
    return StageConfig(**{**stage.__dict__,
                          "frame_count": data.frame_count,
                          "frame_stride": data.frame_stride,
                          "crop_size": data.crop_size,
                          "sampler": data.sampler,
                          "system_text": system_text})


def make_run_config(preset: str = "toy", seed: int = 0,
                    overrides: dict | None = None) -> RunConfig:
    """Build the resolved config: preset, then config-file dict, then caller."""
    if preset == "toy":
        cfg = RunConfig(preset="toy", seed=seed)
        cfg.warmup = warmup_config(epochs=15, seed=seed)
        cfg.joint = joint_config(epochs=5, seed=seed)
    elif preset == "paper":
        data = DataConfig(canvas=256, raw_length=64, object_size=48, speed=0.4,
                          frame_count=100, frame_stride=6, crop_size=224)
        cfg = RunConfig(
            preset="paper", seed=seed,
            encoder=EncoderConfig(input_size=224),
            data=data,
            warmup=warmup_config(epochs=150, seed=seed),
            joint=joint_config(epochs=50, seed=seed))
    else:
        raise ValueError(f"unknown preset {preset!r} (expected 'toy' or 'paper')")

    if overrides:
        cfg = apply_overrides(cfg, overrides)
    cfg.warmup = _sync_stage_data(cfg.warmup, cfg.data, cfg.system_text)
    cfg.joint = _sync_stage_data(cfg.joint, cfg.data, cfg.system_text)
    return cfg


_SECTION_TYPES = {
    "encoder": EncoderConfig, "lm": LMConfig, "data": DataConfig,
    "warmup": StageConfig, "joint": StageConfig,
}


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Merge a (possibly partial) nested dict into the config."""
    for key, value in overrides.items():
        if key in _SECTION_TYPES:
            current = getattr(cfg, key)
            merged = dict(current.to_dict(), **value)
            if key in ("warmup", "joint"):
                setattr(cfg, key, StageConfig.from_dict(merged))
            elif key == "data":
                setattr(cfg, key, DataConfig(**merged))
            else:
                setattr(cfg, key, _SECTION_TYPES[key].from_dict(merged))
        elif hasattr(cfg, key):
            setattr(cfg, key, value)
        else:
            raise ValueError(f"unknown config key {key!r}")
    cfg.__post_init__()
    return cfg


def load_config_file(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
