"""Randomly initialized residual conv-net that turns frames into feature rows.

Frames go through a 3x3 stem, a sequence of residual stages (stride 2 at
each stage boundary after the first), and a global average pool, yielding
one feature vector per frame. There is deliberately no pretrained-weight
path: parameters only ever come from the seeded initializer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError


@dataclass(frozen=True)
class EncoderConfig:
    stem_channels: int = 16
    stage_widths: tuple[int, ...] = (16, 32, 64)
    blocks_per_stage: tuple[int, ...] = (1, 1, 1)
    input_size: int = 32
    in_channels: int = 3

    def __post_init__(self):
        if len(self.stage_widths) != len(self.blocks_per_stage) or not self.stage_widths:
            raise ValueError("stage_widths and blocks_per_stage must be equal-length and non-empty")
        if any(w <= 0 for w in self.stage_widths) or any(b <= 0 for b in self.blocks_per_stage):
            raise ValueError("stage widths and block counts must be positive")

    @property
    def feature_dim(self) -> int:
        return self.stage_widths[-1]

    def to_dict(self) -> dict:
        return {
            "stem_channels": self.stem_channels,
            "stage_widths": list(self.stage_widths),
            "blocks_per_stage": list(self.blocks_per_stage),
            "input_size": self.input_size,
            "in_channels": self.in_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            stem_channels=d["stem_channels"],
            stage_widths=tuple(d["stage_widths"]),
            blocks_per_stage=tuple(d["blocks_per_stage"]),
            input_size=d["input_size"],
            in_channels=d.get("in_channels", 3),
        )


def _he_conv(rng: np.random.Generator, out_c: int, in_c: int, k: int, dtype) -> Tensor:
    fan_in = in_c * k * k
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_c, in_c, k, k))
    return Tensor(w.astype(dtype), requires_grad=True)


def _bn_params(params: dict, buffers: dict, name: str, channels: int, dtype) -> None:
    params[f"{name}.scale"] = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
    params[f"{name}.shift"] = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
    buffers[f"{name}.running_mean"] = np.zeros(channels, dtype=dtype)
    buffers[f"{name}.running_var"] = np.ones(channels, dtype=dtype)


def init_encoder(config: EncoderConfig, seed: int, dtype=np.float32):
    """He fan-in normal conv kernels, unit norm scales, zero shifts.

    Returns (params, buffers); deterministic per seed, no file or network access.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    buffers: dict[str, np.ndarray] = {}

    params["encoder.stem.conv.weight"] = _he_conv(
        rng, config.stem_channels, config.in_channels, 3, dtype)
    _bn_params(params, buffers, "encoder.stem.bn", config.stem_channels, dtype)

    in_c = config.stem_channels
    for s, (width, blocks) in enumerate(zip(config.stage_widths, config.blocks_per_stage), start=1):
        for b in range(blocks):
            prefix = f"encoder.stage{s}.block{b}"
            stride = 2 if (s > 1 and b == 0) else 1
            params[f"{prefix}.conv1.weight"] = _he_conv(rng, width, in_c, 3, dtype)
            _bn_params(params, buffers, f"{prefix}.bn1", width, dtype)
            params[f"{prefix}.conv2.weight"] = _he_conv(rng, width, width, 3, dtype)
            _bn_params(params, buffers, f"{prefix}.bn2", width, dtype)
            if stride != 1 or in_c != width:
                params[f"{prefix}.shortcut.conv.weight"] = _he_conv(rng, width, in_c, 1, dtype)
                _bn_params(params, buffers, f"{prefix}.shortcut.bn", width, dtype)
            in_c = width
    return params, buffers


def _bn(x: Tensor, params: dict, buffers: dict, name: str, training: bool) -> Tensor:
    return ad.batch_norm_2d(
        x, params[f"{name}.scale"], params[f"{name}.shift"],
        buffers[f"{name}.running_mean"], buffers[f"{name}.running_var"], training)


def residual_block(x: Tensor, params: dict, buffers: dict, prefix: str,
                   stride: int, training: bool) -> Tensor:
    """conv-norm-relu-conv-norm residual branch, relu after the addition."""
    out = ad.conv2d(x, params[f"{prefix}.conv1.weight"], stride=stride, padding=1)
    out = _bn(out, params, buffers, f"{prefix}.bn1", training)
    out = ad.relu(out)
    out = ad.conv2d(out, params[f"{prefix}.conv2.weight"], stride=1, padding=1)
    out = _bn(out, params, buffers, f"{prefix}.bn2", training)
    if f"{prefix}.shortcut.conv.weight" in params:
        shortcut = ad.conv2d(x, params[f"{prefix}.shortcut.conv.weight"], stride=stride, padding=0)
        shortcut = _bn(shortcut, params, buffers, f"{prefix}.shortcut.bn", training)
    else:
        shortcut = x
    if shortcut.shape != out.shape:
        raise ShapeError(
            f"residual_block: branch {out.shape} and shortcut {shortcut.shape} disagree")
    return ad.relu(ad.add(out, shortcut))


def encode_frames(frames, params: dict, buffers: dict, config: EncoderConfig,
                  training: bool = False) -> Tensor:
    """Encode a T,C,H,W frame batch into T feature rows (no implicit resize)."""
    x = frames if isinstance(frames, Tensor) else Tensor(frames)
    if x.ndim != 4:
        raise ShapeError(f"encode_frames: expected T,C,H,W input, got {x.shape}")
    t, c, h, w = x.shape
    if c != config.in_channels or h != config.input_size or w != config.input_size:
        raise ShapeError(
            f"encode_frames: frames {x.shape} do not match configured input "
            f"{config.in_channels}x{config.input_size}x{config.input_size}")

    out = ad.conv2d(x, params["encoder.stem.conv.weight"], stride=1, padding=1)
    out = _bn(out, params, buffers, "encoder.stem.bn", training)
    out = ad.relu(out)
    for s, blocks in enumerate(config.blocks_per_stage, start=1):
        for b in range(blocks):
            stride = 2 if (s > 1 and b == 0) else 1
            out = residual_block(out, params, buffers, f"encoder.stage{s}.block{b}",
                                 stride, training)
    return ad.global_avg_pool_2d(out)
