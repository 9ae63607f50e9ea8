"""High-level run operations behind the service endpoints.

Each function is a complete, reproducible job: it resolves its config,
does the work, writes machine-readable outputs plus a resolved-config
snapshot into its output directory, and returns a summary dict. Progress
goes to standard error via logging; files and return values carry the
machine-readable results.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, make_run_config
from .data import (DatasetManifest, VideoRecord, build_dataset, load_dataset,
                   random_crop, read_rvf, sample_frames, save_dataset)
from .encoder import encode_frames
from .errors import UsageError
from .metrics import EvalItem, EvalReport, build_report, report_markdown
from .model import (ModelBundle, decode_from_features, init_bundle,
                    sequence_loss)
from .train import TrainState, run_stage
from .tune import TuneSpace, bayes_opt_tune
from .vocab import default_vocabulary

log = logging.getLogger("tinyvlm")


def _prepare_out_dir(out_dir: str | Path, force: bool) -> Path:
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"output directory {out} exists and is not empty (use force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_dataset(data_dir: str | Path) -> DatasetManifest:
    path = Path(data_dir)
    if not path.exists():
        raise UsageError(f"dataset directory {path} does not exist")
    return load_dataset(path)


def make_dataset_job(n_train: int, n_test: int, seed: int, out_dir: str,
                     force: bool = False, preset: str = "toy",
                     overrides: dict | None = None) -> dict:
    if n_train < 1 or n_test < 0:
        raise UsageError("need n_train >= 1 and n_test >= 0")
    cfg = make_run_config(preset, seed, overrides)
    out = _prepare_out_dir(out_dir, force)
    d = cfg.data
    manifest = build_dataset(n_train, n_test, seed, spec_defaults={
        "canvas": d.canvas, "raw_length": d.raw_length,
        "object_size": d.object_size, "speed": d.speed})
    save_dataset(manifest, out)
    cfg.snapshot(out, {"command": "make-dataset", "n_train": n_train,
                       "n_test": n_test, "seed": seed, "force": force})
    log.info("wrote %d records to %s", len(manifest.records), out)
    return {
        "out_dir": str(out), "manifest": str(out / "manifest.json"),
        "n_records": len(manifest.records),
        "splits": {"train": len(manifest.split("train")),
                   "test": len(manifest.split("test"))},
    }


def _fresh_bundle(cfg: RunConfig) -> ModelBundle:
    return init_bundle(cfg.encoder, cfg.lm, default_vocabulary(), cfg.seed)


def train_job(data_dir: str, out_dir: str, preset: str = "toy", seed: int = 0,
              stage: str | None = None, force: bool = False,
              overrides: dict | None = None) -> dict:
    cfg = make_run_config(preset, seed, overrides)
    manifest = _require_dataset(data_dir)
    records = manifest.split("train")
    if not records:
        raise UsageError(f"dataset {data_dir} has no training records")
    out = _prepare_out_dir(out_dir, force)

    bundle = _fresh_bundle(cfg)
    stages = [stage] if stage else ["warmup", "joint"]
    checkpoints: dict[str, str] = {}
    init_state = TrainState.fresh(cfg.stage(stages[0]))
    init_path = out / "checkpoint_init.rvc"
    save_checkpoint(bundle, init_state, init_path)
    checkpoints["init"] = str(init_path)

    history: list[dict] = []
    log_path = out / "loss_log.jsonl"
    with open(log_path, "w") as fh:
        for name in stages:
            stage_cfg = cfg.stage(name)
            log.info("stage %s: %d epochs on %d records", name, stage_cfg.epochs,
                     len(records))
            entries, state = run_stage(
                bundle, records, stage_cfg,
                log_callback=lambda e: fh.write(json.dumps(e) + "\n"))
            history.extend(entries)
            path = out / f"checkpoint_{name}.rvc"
            save_checkpoint(bundle, state, path)
            checkpoints[name] = str(path)
            log.info("stage %s done, final loss %.4f", name, entries[-1]["loss"])

    cfg.snapshot(out, {"command": "train", "data_dir": str(data_dir),
                       "stage": stage, "seed": seed})
    return {
        "out_dir": str(out), "checkpoints": checkpoints,
        "loss_log": str(log_path), "steps": len(history),
        "first_loss": history[0]["loss"], "final_loss": history[-1]["loss"],
    }


def _validation_loss(bundle: ModelBundle, records: list[VideoRecord],
                     cfg: RunConfig, seed: int) -> float:
    """Deterministic eval-mode loss over held-out records."""
    losses = []
    with ad.no_grad():
        for i, rec in enumerate(records):
            rng = np.random.default_rng([seed, i])
            clip = sample_frames(rec.frames, cfg.data.frame_count,
                                 cfg.data.frame_stride, rng, mode=cfg.data.sampler)
            clip = random_crop(clip, cfg.data.crop_size, rng)
            loss = sequence_loss(bundle, clip, cfg.system_text, "", rec.caption,
                                 training=False)
            losses.append(loss.item())
    return float(np.mean(losses))


def proxy_objective(cfg: RunConfig, manifest: DatasetManifest, stage_name: str,
                    proxy_epochs: int = 2):
    """Objective for the tuner: short training run, then validation loss.

    The point is (log10 lr, log10 weight decay) for the chosen stage.
    """
    train_records = manifest.split("train")
    val_records = manifest.split("test") or train_records

    def objective(point) -> float:
        lr, wd = 10.0 ** point[0], 10.0 ** point[1]
        stage_cfg = cfg.stage(stage_name)
        probe_cfg = type(stage_cfg)(**{**stage_cfg.__dict__,
                                       "learning_rate": lr, "weight_decay": wd,
                                       "epochs": proxy_epochs})
        bundle = _fresh_bundle(cfg)
        try:
            run_stage(bundle, train_records, probe_cfg)
        except Exception:
            return float("nan")
        return _validation_loss(bundle, val_records, cfg, seed=cfg.seed)

    return objective


QUADRATIC_SPACE = TuneSpace(names=("x",), lows=(0.0,), highs=(1.0,))
DEFAULT_TUNE_SPACE = TuneSpace(names=("log10_lr", "log10_wd"),
                               lows=(-5.0, -6.0), highs=(-1.0, -1.0))


def tune_job(out_dir: str, budget: int = 25, seed: int = 0, stage: str = "joint",
             data_dir: str | None = None, objective: str = "proxy",
             preset: str = "toy", force: bool = False,
             overrides: dict | None = None) -> dict:
    if budget < 5:
        raise UsageError(f"tuning budget must be >= 5, got {budget}")
    cfg = make_run_config(preset, seed, overrides)
    out = _prepare_out_dir(out_dir, force)

    if objective == "quadratic":
        space = QUADRATIC_SPACE
        fn = lambda p: (p[0] - 0.3) ** 2
    elif objective == "proxy":
        if not data_dir:
            raise UsageError("proxy objective needs a dataset (data_dir)")
        manifest = _require_dataset(data_dir)
        space = DEFAULT_TUNE_SPACE
        fn = proxy_objective(cfg, manifest, stage)
    else:
        raise UsageError(f"unknown tune objective {objective!r}")

    best, state = bayes_opt_tune(fn, space, budget, seed)
    trace_path = out / "tune_trace.json"
    trace_path.write_text(json.dumps(state.to_dict(), indent=2))
    cfg.snapshot(out, {"command": "tune", "budget": budget, "seed": seed,
                       "stage": stage, "objective": objective})
    result = {
        "out_dir": str(out), "trace": str(trace_path),
        "best": {name: float(v) for name, v in zip(space.names, best)},
        "best_objective": state.best_value, "evaluations": len(state.values),
    }
    if objective == "proxy":
        result["best"]["learning_rate"] = float(10.0 ** best[0])
        result["best"]["weight_decay"] = float(10.0 ** best[1])
    log.info("tune done: best %s", result["best"])
    return result


def averaged_features(bundle: ModelBundle, frames: np.ndarray, cfg: RunConfig,
                      rng: np.random.Generator, clips: int) -> np.ndarray:
    """Mean frame features over several sampled clips (eval-mode encoder)."""
    total = None
    with ad.no_grad():
        for _ in range(clips):
            clip = sample_frames(frames, cfg.data.frame_count,
                                 cfg.data.frame_stride, rng, mode=cfg.data.sampler)
            clip = random_crop(clip, cfg.data.crop_size, rng)
            feats = encode_frames(clip, bundle.params, bundle.buffers,
                                  bundle.encoder_config, training=False).data
            total = feats if total is None else total + feats
    return total / clips


def _load_bundle(checkpoint: str) -> ModelBundle:
    path = Path(checkpoint)
    if not path.exists():
        raise UsageError(f"checkpoint {path} does not exist")
    bundle, _ = load_checkpoint(path)
    return bundle


def generate_job(checkpoint: str, data_dir: str | None = None,
                 video_id: str | None = None, frames_file: str | None = None,
                 question: str = "", preset: str = "toy", seed: int = 0,
                 max_new_tokens: int | None = None,
                 clips: int | None = None, overrides: dict | None = None) -> dict:
    cfg = make_run_config(preset, seed, overrides)
    bundle = _load_bundle(checkpoint)
    if frames_file:
        frames = read_rvf(frames_file)
        source = frames_file
    elif data_dir and video_id:
        manifest = _require_dataset(data_dir)
        matches = [r for r in manifest.records if r.id == video_id]
        if not matches:
            raise UsageError(f"video id {video_id!r} not found in {data_dir}")
        frames = matches[0].frames
        source = f"{data_dir}:{video_id}"
    else:
        raise UsageError("generate needs either frames_file or data_dir + video_id")

    rng = np.random.default_rng([seed, 0])
    feats = averaged_features(bundle, frames, cfg, rng,
                              clips if clips is not None else cfg.eval_clips)
    result = decode_from_features(
        bundle, feats, cfg.system_text, question,
        max_new_tokens if max_new_tokens is not None else cfg.max_new_tokens)
    return {
        "source": source, "question": question, "text": result.text,
        "token_ids": result.token_ids, "stopped_on_eos": result.stopped_on_eos,
        "truncated": result.truncated,
    }


def gold_keywords(rec: VideoRecord) -> frozenset:
    return frozenset({rec.spec.color, rec.spec.shape, rec.spec.motion})


def gold_details(rec: VideoRecord) -> frozenset:
    return frozenset({rec.spec.color})


def gold_events(rec: VideoRecord) -> tuple:
    return ("moves", rec.spec.motion)


def predict_records(bundle: ModelBundle, records: list[VideoRecord],
                    cfg: RunConfig, seed: int) -> list[dict]:
    """Caption plus every QA question (both phrasings) for each record."""
    rows = []
    for i, rec in enumerate(records):
        rng = np.random.default_rng([seed, i])
        feats = averaged_features(bundle, rec.frames, cfg, rng, cfg.eval_clips)

        def answer(q: str) -> str:
            return decode_from_features(bundle, feats, cfg.system_text, q,
                                        cfg.max_new_tokens).text

        rows.append({"id": rec.id, "question": cfg.system_text,
                     "answer": rec.caption, "prediction": answer(""),
                     "prediction_alt": None})
        for qa in rec.qa_pairs:
            rows.append({"id": rec.id, "question": qa.question, "answer": qa.answer,
                         "prediction": answer(qa.question),
                         "prediction_alt": answer(qa.question_alt)})
    return rows


def items_from_predictions(manifest: DatasetManifest, rows: list[dict],
                           system_text: str) -> tuple[list[EvalItem], list[EvalItem]]:
    """Split prediction rows into caption items and QA items with gold data."""
    by_id = {rec.id: rec for rec in manifest.records}
    caption_items, qa_items = [], []
    for row in rows:
        rec = by_id.get(row["id"])
        if rec is None:
            raise UsageError(f"prediction references unknown record id {row['id']!r}")
        if row["question"] == system_text:
            caption_items.append(EvalItem(
                question=row["question"], gold=row["answer"],
                prediction=row["prediction"], video_id=rec.id,
                keywords=gold_keywords(rec), details=gold_details(rec),
                events=gold_events(rec)))
        else:
            qa = next((q for q in rec.qa_pairs if q.question == row["question"]), None)
            if qa is None:
                raise UsageError(
                    f"prediction question {row['question']!r} not in record {rec.id!r}")
            qa_items.append(EvalItem(
                question=qa.question, gold=qa.answer, prediction=row["prediction"],
                video_id=rec.id, question_alt=qa.question_alt,
                prediction_alt=row.get("prediction_alt")))
    return caption_items, qa_items


def evaluate_job(checkpoint: str, data_dir: str, out_dir: str,
                 preset: str = "toy", seed: int = 0, force: bool = False,
                 predictions_file: str | None = None,
                 dataset_name: str = "synthetic",
                 overrides: dict | None = None) -> dict:
    cfg = make_run_config(preset, seed, overrides)
    manifest = _require_dataset(data_dir)
    records = manifest.split("test") or manifest.records
    out = _prepare_out_dir(out_dir, force)

    if predictions_file:
        rows = json.loads(Path(predictions_file).read_text())
    else:
        bundle = _load_bundle(checkpoint)
        if bundle.encoder_config.input_size != cfg.data.crop_size:
            raise UsageError(
                f"checkpoint expects {bundle.encoder_config.input_size}px frames "
                f"but the config crops to {cfg.data.crop_size}px")
        rows = predict_records(bundle, records, cfg, seed)

    caption_items, qa_items = items_from_predictions(manifest, rows, cfg.system_text)
    if not caption_items:
        raise UsageError("no caption predictions to score")
    report = build_report(caption_items, qa_items, dataset_name, cfg.w_c, cfg.w_s)

    predictions_path = out / "predictions.json"
    predictions_path.write_text(json.dumps(rows, indent=2))
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2))
    markdown_path = out / "report.md"
    markdown_path.write_text(report_markdown(report))
    cfg.snapshot(out, {"command": "evaluate", "checkpoint": checkpoint,
                       "data_dir": str(data_dir), "seed": seed})
    summary = report.to_dict()
    summary.pop("items")
    summary.update({"out_dir": str(out), "report": str(report_path),
                    "markdown": str(markdown_path),
                    "predictions": str(predictions_path)})
    return summary
