"""RVC1 checkpoint container.

Layout: magic ``RVC1``, u32 version, u32 header length, a JSON header
(configs, vocabulary, RNG state, buffer names/shapes), the raw
little-endian float32 buffers in header order, and a trailing CRC32 over
everything after the magic. Restoring a checkpoint reproduces the
training trajectory bit-identically.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .encoder import EncoderConfig
from .errors import FormatError
from .lm import LMConfig
from .model import ModelBundle
from .optim import make_optimizer
from .train import StageConfig, TrainState
from .vocab import Vocabulary

RVC_MAGIC = b"RVC1"
RVC_VERSION = 1


def _rng_state(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return json.loads(json.dumps(state))  # plain JSON types only


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


def save_checkpoint(bundle: ModelBundle, state: TrainState, path: str | Path) -> Path:
    """Serialize bundle + mid-stage training state; atomic replace on success."""
    entries = []
    blobs = []

    def push(name: str, arr: np.ndarray, group: str) -> None:
        data = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "group": group})
        blobs.append(data.tobytes())

    for name, tensor in bundle.params.items():
        push(name, tensor.data, "param")
    for name, buf in bundle.buffers.items():
        push(name, buf, "buffer")
    opt_state = state.optimizer.state_dict()
    for name, buf in opt_state["buffers"].items():
        push(name, buf, "opt")

    header = {
        "stage": state.config.stage,
        "epoch": state.epoch,
        "step_in_epoch": state.step_in_epoch,
        "global_step": state.global_step,
        "epoch_order": state.epoch_order,
        "stage_config": state.config.to_dict(),
        "optimizer": {k: v for k, v in opt_state.items() if k != "buffers"},
        "rng_state": _rng_state(state.rng),
        "encoder_config": bundle.encoder_config.to_dict(),
        "lm_config": bundle.lm_config.to_dict(),
        "vocab_tokens": bundle.vocab.id_to_token,
        "entries": entries,
    }
    header_bytes = json.dumps(header).encode("utf-8")

    body = struct.pack("<I", RVC_VERSION) + struct.pack("<I", len(header_bytes)) + header_bytes
    body += b"".join(blobs)
    crc = struct.pack("<I", zlib.crc32(body))

    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(RVC_MAGIC)
        fh.write(body)
        fh.write(crc)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> tuple[ModelBundle, TrainState]:
    """Parse fully before constructing anything; a bad file changes nothing."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != RVC_MAGIC:
        raise FormatError(f"{path}: not an RVC1 checkpoint")
    body, crc_bytes = raw[4:-4], raw[-4:]
    if struct.unpack("<I", crc_bytes)[0] != zlib.crc32(body):
        raise FormatError(f"{path}: checksum mismatch (corrupt or truncated)")
    version, header_len = struct.unpack("<II", body[:8])
    if version != RVC_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(body[8:8 + header_len].decode("utf-8"))

    offset = 8 + header_len
    arrays: dict[str, tuple[str, np.ndarray]] = {}
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        blob = body[offset:offset + n_bytes]
        if len(blob) != n_bytes:
            raise FormatError(f"{path}: buffer {entry['name']!r} truncated")
        arrays[entry["name"]] = (
            entry["group"],
            np.frombuffer(blob, dtype="<f4").reshape(shape).copy())
        offset += n_bytes
    if offset != len(body):
        raise FormatError(f"{path}: trailing bytes after buffers")

    vocab = Vocabulary(header["vocab_tokens"][6:])
    params = {n: Tensor(a, requires_grad=True)
              for n, (g, a) in arrays.items() if g == "param"}
    buffers = {n: a for n, (g, a) in arrays.items() if g == "buffer"}
    bundle = ModelBundle(
        encoder_config=EncoderConfig.from_dict(header["encoder_config"]),
        lm_config=LMConfig.from_dict(header["lm_config"]),
        vocab=vocab, params=params, buffers=buffers)

    config = StageConfig.from_dict(header["stage_config"])
    opt_meta = header["optimizer"]
    optimizer = make_optimizer(opt_meta["kind"], opt_meta["lr"], opt_meta["weight_decay"])
    for attr in ("momentum", "beta1", "beta2", "eps"):
        if attr in opt_meta and hasattr(optimizer, attr):
            setattr(optimizer, attr, opt_meta[attr])
    optimizer.load_buffers({n: a for n, (g, a) in arrays.items() if g == "opt"},
                           opt_meta.get("scalars", {}))
    state = TrainState(
        config=config, optimizer=optimizer, rng=_restore_rng(header["rng_state"]),
        epoch=header["epoch"], step_in_epoch=header["step_in_epoch"],
        global_step=header["global_step"], epoch_order=list(header["epoch_order"]))
    return bundle, state
