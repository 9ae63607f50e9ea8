"""FastAPI service wrapping the pipeline jobs.

Endpoints are synchronous jobs: the response arrives when the work is
done. Input problems map to 400 with exit_code 2 in the payload;
numerical failures map to 500 with exit_code 3 (the CLI reuses these as
process exit codes).
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import FormatError, NumericalError, UsageError
from .. import pipeline
from . import schemas


def create_app() -> FastAPI:
    app = FastAPI(title="tinyvlm", version=__version__)

    @app.exception_handler(UsageError)
    @app.exception_handler(FormatError)
    @app.exception_handler(FileNotFoundError)
    async def usage_error(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=400,
                            content={"message": str(exc), "exit_code": 2})

    @app.exception_handler(NumericalError)
    async def numerical_error(request: Request, exc: NumericalError) -> JSONResponse:
        return JSONResponse(
            status_code=500,
            content={"message": str(exc), "exit_code": 3,
                     "stage": exc.stage, "epoch": exc.epoch, "step": exc.step,
                     "learning_rate": exc.learning_rate})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/datasets", response_model=schemas.MakeDatasetResponse)
    def make_dataset(req: schemas.MakeDatasetRequest):
        return pipeline.make_dataset_job(
            req.n_train, req.n_test, req.seed, req.out_dir, force=req.force,
            preset=req.preset, overrides=req.config)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        return pipeline.train_job(
            req.data_dir, req.out_dir, preset=req.preset, seed=req.seed,
            stage=req.stage, force=req.force, overrides=req.config)

    @app.post("/tune", response_model=schemas.TuneResponse)
    def tune(req: schemas.TuneRequest):
        return pipeline.tune_job(
            req.out_dir, budget=req.budget, seed=req.seed, stage=req.stage,
            data_dir=req.data_dir, objective=req.objective, preset=req.preset,
            force=req.force, overrides=req.config)

    @app.post("/generate", response_model=schemas.GenerateResponse)
    def generate(req: schemas.GenerateRequest):
        return pipeline.generate_job(
            req.checkpoint, data_dir=req.data_dir, video_id=req.video_id,
            frames_file=req.frames_file, question=req.question, preset=req.preset,
            seed=req.seed, max_new_tokens=req.max_new_tokens, clips=req.clips,
            overrides=req.config)

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest):
        return pipeline.evaluate_job(
            req.checkpoint, req.data_dir, req.out_dir, preset=req.preset,
            seed=req.seed, force=req.force, predictions_file=req.predictions_file,
            dataset_name=req.dataset_name, overrides=req.config)

    return app


app = create_app()
