"""Pydantic request/response models for the service endpoints."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class MakeDatasetRequest(BaseModel):
    n_train: int = 8
    n_test: int = 4
    seed: int = 0
    out_dir: str
    force: bool = False
    preset: Literal["toy", "paper"] = "toy"
    config: Optional[dict] = None


class MakeDatasetResponse(BaseModel):
    out_dir: str
    manifest: str
    n_records: int
    splits: dict[str, int]


class TrainRequest(BaseModel):
    data_dir: str
    out_dir: str
    preset: Literal["toy", "paper"] = "toy"
    seed: int = 0
    stage: Optional[Literal["warmup", "joint"]] = None
    force: bool = False
    config: Optional[dict] = None


class TrainResponse(BaseModel):
    out_dir: str
    checkpoints: dict[str, str]
    loss_log: str
    steps: int
    first_loss: float
    final_loss: float


class TuneRequest(BaseModel):
    out_dir: str
    budget: int = 25
    seed: int = 0
    stage: Literal["warmup", "joint"] = "joint"
    data_dir: Optional[str] = None
    objective: Literal["proxy", "quadratic"] = "proxy"
    preset: Literal["toy", "paper"] = "toy"
    force: bool = False
    config: Optional[dict] = None


class TuneResponse(BaseModel):
    out_dir: str
    trace: str
    best: dict[str, float]
    best_objective: float
    evaluations: int


class GenerateRequest(BaseModel):
    checkpoint: str
    data_dir: Optional[str] = None
    video_id: Optional[str] = None
    frames_file: Optional[str] = None
    question: str = ""
    preset: Literal["toy", "paper"] = "toy"
    seed: int = 0
    max_new_tokens: Optional[int] = Field(default=None, ge=1)
    clips: Optional[int] = Field(default=None, ge=1)
    config: Optional[dict] = None


class GenerateResponse(BaseModel):
    source: str
    question: str
    text: str
    token_ids: list[int]
    stopped_on_eos: bool
    truncated: bool


class EvaluateRequest(BaseModel):
    checkpoint: str = ""
    data_dir: str
    out_dir: str
    preset: Literal["toy", "paper"] = "toy"
    seed: int = 0
    force: bool = False
    predictions_file: Optional[str] = None
    dataset_name: str = "synthetic"
    config: Optional[dict] = None


class EvaluateResponse(BaseModel):
    CI: float
    DO: float
    CU: float
    TU: float
    C: float
    Mean: float
    accuracy: dict[str, float]
    weights: dict[str, float]
    skipped: dict[str, int]
    out_dir: str
    report: str
    markdown: str
    predictions: str


class ErrorPayload(BaseModel):
    message: str
    exit_code: int
