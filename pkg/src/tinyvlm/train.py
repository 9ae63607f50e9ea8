"""Two-stage training: encoder-only warm-up, then joint fine-tuning.

Each stage owns an optimizer over the parameters selected by its
trainable-prefix set; everything else is guaranteed untouched. The whole
trajectory is a pure function of (seed, config, data): per-epoch shuffles,
clip sampling and crops all come from one explicitly carried RNG whose
state is checkpointable mid-stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import VideoRecord, random_crop, sample_frames
from .errors import NumericalError
from .model import ModelBundle, batch_loss
from .optim import make_optimizer

WARMUP_PREFIXES = ("encoder.",)
JOINT_PREFIXES = ("encoder.", "projector.", "lm.")


@dataclass
class StageConfig:
    stage: str = "joint"                     # "warmup" | "joint"
    epochs: int = 5
    learning_rate: float = 0.00015
    weight_decay: float = 0.05
    batch_size: int = 4
    seed: int = 0
    optimizer: str = "adamw"                 # "sgd" | "adamw"
    trainable_prefixes: tuple[str, ...] = JOINT_PREFIXES
    frame_count: int = 8
    frame_stride: int = 6
    crop_size: int = 32
    sampler: str = "strided"
    system_text: str = "describe the video"

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["trainable_prefixes"] = list(self.trainable_prefixes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StageConfig":
        d = dict(d)
        d["trainable_prefixes"] = tuple(d["trainable_prefixes"])
        return cls(**d)


def warmup_config(**overrides) -> StageConfig:
    base = StageConfig(stage="warmup", epochs=15, learning_rate=0.01,
                       weight_decay=0.0001, optimizer="sgd",
                       trainable_prefixes=WARMUP_PREFIXES)
    return StageConfig(**{**base.__dict__, **overrides})


def joint_config(**overrides) -> StageConfig:
    base = StageConfig(stage="joint", epochs=5, learning_rate=0.00015,
                       weight_decay=0.05, optimizer="adamw",
                       trainable_prefixes=JOINT_PREFIXES)
    return StageConfig(**{**base.__dict__, **overrides})


@dataclass
class TrainState:
    """Resumable position inside a stage."""

    config: StageConfig
    optimizer: object
    rng: np.random.Generator
    epoch: int = 0
    step_in_epoch: int = 0
    global_step: int = 0
    epoch_order: list[int] = field(default_factory=list)

    @classmethod
    def fresh(cls, config: StageConfig) -> "TrainState":
        return cls(
            config=config,
            optimizer=make_optimizer(config.optimizer, config.learning_rate,
                                     config.weight_decay),
            rng=np.random.default_rng(config.seed))

    @property
    def done(self) -> bool:
        return self.epoch >= self.config.epochs


def _steps_per_epoch(n_records: int, batch_size: int) -> int:
    return math.ceil(n_records / batch_size)


def training_batch(records: list[VideoRecord], state: TrainState) -> list:
    """Draw the next batch's clips/crops; advances the carried RNG."""
    cfg = state.config
    if not state.epoch_order:
        state.epoch_order = [int(i) for i in state.rng.permutation(len(records))]
    per_epoch = _steps_per_epoch(len(records), cfg.batch_size)
    lo = state.step_in_epoch * cfg.batch_size
    picked = state.epoch_order[lo:lo + cfg.batch_size]
    items = []
    for idx in picked:
        rec = records[idx]
        clip = sample_frames(rec.frames, cfg.frame_count, cfg.frame_stride,
                             state.rng, mode=cfg.sampler)
        clip = random_crop(clip, cfg.crop_size, state.rng)
        items.append((clip, cfg.system_text, "", rec.caption))
    state.step_in_epoch += 1
    if state.step_in_epoch >= per_epoch:
        state.step_in_epoch = 0
        state.epoch += 1
        state.epoch_order = []
    return items


def run_stage(bundle: ModelBundle, records: list[VideoRecord], config: StageConfig,
              state: TrainState | None = None, max_steps: int | None = None,
              log_callback=None):
    """Train until the stage's epochs complete (or max_steps more steps).

    Returns (history, state). History entries are per-step dicts with
    stage/epoch/step/loss. Raises NumericalError on a non-finite loss.
    """
    if not records:
        raise ValueError("run_stage: dataset is empty")
    if state is None:
        state = TrainState.fresh(config)
    trainable = bundle.trainable(config.trainable_prefixes)
    history: list[dict] = []
    steps_done = 0
    while not state.done and (max_steps is None or steps_done < max_steps):
        epoch = state.epoch
        items = training_batch(records, state)
        loss = batch_loss(bundle, items, training=True)
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise NumericalError(
                f"non-finite loss {loss_value} in stage {config.stage} "
                f"(epoch {epoch}, step {state.global_step}, lr {config.learning_rate})",
                stage=config.stage, epoch=epoch, step=state.global_step,
                learning_rate=config.learning_rate)
        loss.backward()
        state.optimizer.step(trainable)
        ad.reset_grads(bundle.params.values())
        entry = {"stage": config.stage, "epoch": epoch,
                 "step": state.global_step, "loss": loss_value}
        history.append(entry)
        if log_callback is not None:
            log_callback(entry)
        state.global_step += 1
        steps_done += 1
    return history, state
