"""Thin command-line client for the service.

Every subcommand builds a request model and posts it to the API: against
an in-process app by default, or a remote server when --server is given.
Machine-readable results go to stdout as JSON; progress/log lines go to
stderr. Exit codes: 0 success, 2 usage/input error, 3 numerical failure.
"""

from __future__ import annotations

import asyncio
import json
import logging
import sys

import click
import httpx

from .service import schemas


def _post(path: str, payload: dict, server: str | None) -> dict:
    async def go() -> httpx.Response:
        if server:
            async with httpx.AsyncClient(base_url=server, timeout=None) as client:
                return await client.post(path, json=payload)
        from .service.app import create_app
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(transport=transport, timeout=None,
                                     base_url="http://tinyvlm.local") as client:
            return await client.post(path, json=payload)

    response = asyncio.run(go())
    body = response.json()
    if response.status_code != 200:
        message = body.get("message") or json.dumps(body)
        click.echo(f"error: {message}", err=True)
        sys.exit(int(body.get("exit_code", 2 if response.status_code < 500 else 3)))
    return body


def _emit(body: dict) -> None:
    click.echo(json.dumps(body, indent=2))


def _config_overrides(config_path: str | None) -> dict | None:
    if not config_path:
        return None
    with open(config_path) as fh:
        return json.load(fh)


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Remote service URL; default runs the app in-process.")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
@click.pass_context
def main(ctx: click.Context, server: str | None, verbose: bool) -> None:
    """Video-to-text lab: datasets, training, tuning, generation, evaluation."""
    logging.basicConfig(stream=sys.stderr,
                        level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {"server": server}


@main.command("make-dataset")
@click.option("--n-train", default=8, show_default=True)
@click.option("--n-test", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--force", is_flag=True, help="Overwrite a non-empty output dir.")
@click.option("--preset", default="toy", type=click.Choice(["toy", "paper"]))
@click.option("--config", type=click.Path(exists=True), default=None)
@click.pass_context
def make_dataset(ctx, n_train, n_test, seed, out_dir, force, preset, config):
    """Generate a synthetic moving-shapes dataset."""
    req = schemas.MakeDatasetRequest(
        n_train=n_train, n_test=n_test, seed=seed, out_dir=out_dir, force=force,
        preset=preset, config=_config_overrides(config))
    _emit(_post("/datasets", req.model_dump(), ctx.obj["server"]))


@main.command()
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--preset", default="toy", type=click.Choice(["toy", "paper"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--stage", default=None, type=click.Choice(["warmup", "joint"]))
@click.option("--force", is_flag=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.pass_context
def train(ctx, data_dir, out_dir, preset, seed, stage, force, config):
    """Run the two-stage recipe (or one stage with --stage)."""
    req = schemas.TrainRequest(
        data_dir=data_dir, out_dir=out_dir, preset=preset, seed=seed,
        stage=stage, force=force, config=_config_overrides(config))
    _emit(_post("/train", req.model_dump(), ctx.obj["server"]))


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--budget", default=25, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--stage", default="joint", type=click.Choice(["warmup", "joint"]))
@click.option("--data", "data_dir", default=None, type=click.Path())
@click.option("--objective", default="proxy", type=click.Choice(["proxy", "quadratic"]))
@click.option("--preset", default="toy", type=click.Choice(["toy", "paper"]))
@click.option("--force", is_flag=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.pass_context
def tune(ctx, out_dir, budget, seed, stage, data_dir, objective, preset, force, config):
    """Search (learning rate, weight decay) with the GP tuner."""
    req = schemas.TuneRequest(
        out_dir=out_dir, budget=budget, seed=seed, stage=stage, data_dir=data_dir,
        objective=objective, preset=preset, force=force,
        config=_config_overrides(config))
    _emit(_post("/tune", req.model_dump(), ctx.obj["server"]))


@main.command()
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--data", "data_dir", default=None, type=click.Path())
@click.option("--video-id", default=None)
@click.option("--frames", "frames_file", default=None, type=click.Path())
@click.option("--question", default="")
@click.option("--preset", default="toy", type=click.Choice(["toy", "paper"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--max-new-tokens", default=None, type=int)
@click.option("--clips", default=None, type=int)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.pass_context
def generate(ctx, checkpoint, data_dir, video_id, frames_file, question, preset,
             seed, max_new_tokens, clips, config):
    """Describe a video (or answer a question about it)."""
    req = schemas.GenerateRequest(
        checkpoint=checkpoint, data_dir=data_dir, video_id=video_id,
        frames_file=frames_file, question=question, preset=preset, seed=seed,
        max_new_tokens=max_new_tokens, clips=clips,
        config=_config_overrides(config))
    _emit(_post("/generate", req.model_dump(), ctx.obj["server"]))


@main.command()
@click.option("--checkpoint", default="", type=click.Path())
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--preset", default="toy", type=click.Choice(["toy", "paper"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--force", is_flag=True)
@click.option("--predictions", "predictions_file", default=None, type=click.Path(),
              help="Score an existing predictions JSON instead of generating.")
@click.option("--dataset-name", default="synthetic")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.pass_context
def evaluate(ctx, checkpoint, data_dir, out_dir, preset, seed, force,
             predictions_file, dataset_name, config):
    """Generate predictions for the test split and score them."""
    req = schemas.EvaluateRequest(
        checkpoint=checkpoint, data_dir=data_dir, out_dir=out_dir, preset=preset,
        seed=seed, force=force, predictions_file=predictions_file,
        dataset_name=dataset_name, config=_config_overrides(config))
    _emit(_post("/evaluate", req.model_dump(), ctx.obj["server"]))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host: str, port: int) -> None:
    """Run the service with uvicorn."""
    import uvicorn

    uvicorn.run("tinyvlm.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
