"""Synthetic moving-shape videos with programmatic captions and QA pairs.

A video is a single colored shape translating across a black canvas at a
constant speed. Captions follow the grammar
``"the {color} {shape} moves {motion}"`` and every QA answer is one of the
caption's words, so metric gold sets can be derived mechanically.

Frames persist in the RVF1 container: magic ``RVF1``, four u32
little-endian dims (T, C, H, W), the float32 little-endian payload, and a
CRC32 of the payload.
"""

from __future__ import annotations

import itertools
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .vocab import GRAMMAR_COLORS, GRAMMAR_MOTIONS, GRAMMAR_SHAPES

RVF_MAGIC = b"RVF1"
MANIFEST_VERSION = 1

COLOR_RGB = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
}
# (row, col) unit steps; "up" decreases the row index
MOTION_STEP = {"left": (0, -1), "right": (0, 1), "up": (-1, 0), "down": (1, 0)}


@dataclass(frozen=True)
class SyntheticVideoSpec:
    shape: str = "square"
    color: str = "red"
    motion: str = "right"
    speed: float = 0.4
    raw_length: int = 64
    canvas: int = 40
    object_size: int = 9

    def __post_init__(self):
        if self.shape not in GRAMMAR_SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.color not in COLOR_RGB:
            raise ValueError(f"unknown color {self.color!r}")
        if self.motion not in MOTION_STEP:
            raise ValueError(f"unknown motion {self.motion!r}")
        if self.canvas < self.object_size:
            raise ValueError(
                f"canvas {self.canvas} smaller than object size {self.object_size}")

    def to_dict(self) -> dict:
        return {"shape": self.shape, "color": self.color, "motion": self.motion,
                "speed": self.speed, "raw_length": self.raw_length,
                "canvas": self.canvas, "object_size": self.object_size}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticVideoSpec":
        return cls(**d)


@dataclass
class QAPair:
    question: str
    answer: str
    question_alt: str


@dataclass
class VideoRecord:
    id: str
    frames: np.ndarray  # raw_length x C x H x W, float32 in [0, 1]
    caption: str
    qa_pairs: list[QAPair]
    spec: SyntheticVideoSpec
    split: str = "train"
    meta: dict = field(default_factory=dict)

    @property
    def paraphrase_pairs(self) -> list[tuple[str, str]]:
        return [(qa.question, qa.question_alt) for qa in self.qa_pairs]

    def equals(self, other: "VideoRecord") -> bool:
        return (self.id == other.id and self.caption == other.caption
                and self.qa_pairs == other.qa_pairs and self.spec == other.spec
                and self.split == other.split and self.meta == other.meta
                and np.array_equal(self.frames, other.frames))


@dataclass
class DatasetManifest:
    version: int
    seed: int
    records: list[VideoRecord]

    def split(self, tag: str) -> list[VideoRecord]:
        return [r for r in self.records if r.split == tag]


def _shape_mask(shape: str, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    if shape == "square":
        return np.ones((size, size), dtype=bool)
    if shape == "circle":
        c = (size - 1) / 2.0
        return (yy - c) ** 2 + (xx - c) ** 2 <= (size / 2.0) ** 2
    # upward-pointing triangle: row i spans a width growing linearly
    c = (size - 1) / 2.0
    return np.abs(xx - c) <= (yy + 1) * (size / 2.0) / size


def caption_for(spec: SyntheticVideoSpec) -> str:
    return f"the {spec.color} {spec.shape} moves {spec.motion}"


def qa_for(spec: SyntheticVideoSpec) -> list[QAPair]:
    return [
        QAPair("what color is the shape", spec.color,
               "which color does the shape have"),
        QAPair("what shape is in the video", spec.shape,
               "which shape does the video show"),
        QAPair("which way does the shape move", spec.motion,
               "in which direction does the shape move"),
    ]


def generate_video(spec: SyntheticVideoSpec, seed: int) -> VideoRecord:
    """Render a record deterministically from (spec, seed).

    The start position is drawn so the whole trajectory stays on the
    canvas when possible; otherwise positions wrap and the wrap is
    recorded in the metadata.
    """
    rng = np.random.default_rng(seed)
    size, canvas = spec.object_size, spec.canvas
    mask = _shape_mask(spec.shape, size)
    color = np.array(COLOR_RGB[spec.color], dtype=np.float32)
    dy, dx = MOTION_STEP[spec.motion]
    travel = spec.speed * (spec.raw_length - 1)

    limit = canvas - size
    lo_r, hi_r = (travel, limit) if dy < 0 else (0, limit - travel * dy)
    lo_c, hi_c = (travel, limit) if dx < 0 else (0, limit - travel * dx)
    wrapped = hi_r < lo_r or hi_c < lo_c
    if wrapped:
        lo_r, hi_r, lo_c, hi_c = 0, limit, 0, limit
    r0 = lo_r + rng.random() * (hi_r - lo_r)
    c0 = lo_c + rng.random() * (hi_c - lo_c)

    frames = np.zeros((spec.raw_length, 3, canvas, canvas), dtype=np.float32)
    for t in range(spec.raw_length):
        r = int(round(r0 + dy * spec.speed * t)) % canvas
        c = int(round(c0 + dx * spec.speed * t)) % canvas
        rows = (np.arange(size) + r) % canvas
        cols = (np.arange(size) + c) % canvas
        patch = frames[t][:, rows[:, None], cols[None, :]]
        frames[t][:, rows[:, None], cols[None, :]] = np.where(
            mask[None, :, :], color[:, None, None], patch)

    return VideoRecord(
        id="", frames=frames, caption=caption_for(spec), qa_pairs=qa_for(spec),
        spec=spec, meta={"wrapped": bool(wrapped), "start": [float(r0), float(c0)],
                         "seed": int(seed)})


def sample_frames(frames: np.ndarray, count: int, stride: int,
                  rng: np.random.Generator, mode: str = "strided") -> np.ndarray:
    """Pick a clip of ``count`` frames.

    ``strided``: start uniformly at random, then fixed-interval indices
    taken modulo the video length (wrap rule). ``even``: evenly spaced
    over the whole video, no randomness.
    """
    raw_length = frames.shape[0]
    if raw_length == 0:
        raise ValueError("sample_frames: empty video")
    if count < 1 or stride < 1:
        raise ValueError("sample_frames: count and stride must be >= 1")
    if mode == "even":
        idx = np.linspace(0, raw_length - 1, count).round().astype(np.int64)
    elif mode == "strided":
        start = int(rng.integers(raw_length))
        idx = (start + stride * np.arange(count, dtype=np.int64)) % raw_length
    else:
        raise ValueError(f"sample_frames: unknown mode {mode!r}")
    return frames[idx]


def clip_indices(start: int, count: int, stride: int, raw_length: int) -> np.ndarray:
    """The strided sampler's index law, exposed for verification."""
    return (start + stride * np.arange(count, dtype=np.int64)) % raw_length


def random_crop(frames: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """One offset per video, shared across its frames (motion-coherent)."""
    h, w = frames.shape[-2:]
    if size > h or size > w:
        raise ValueError(f"random_crop: size {size} exceeds frame dims {h}x{w}")
    oy = int(rng.integers(0, h - size + 1))
    ox = int(rng.integers(0, w - size + 1))
    return frames[..., oy:oy + size, ox:ox + size]


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def write_rvf(path: str | Path, frames: np.ndarray) -> None:
    if frames.ndim != 4:
        raise ValueError(f"write_rvf: need T,C,H,W frames, got {frames.shape}")
    payload = np.ascontiguousarray(frames, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(RVF_MAGIC)
        fh.write(struct.pack("<4I", *frames.shape))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def read_rvf(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 24 or raw[:4] != RVF_MAGIC:
        raise FormatError(f"{path}: not an RVF1 file")
    t, c, h, w = struct.unpack("<4I", raw[4:20])
    n_bytes = t * c * h * w * 4
    if len(raw) != 20 + n_bytes + 4:
        raise FormatError(f"{path}: truncated or oversized RVF1 payload")
    payload = raw[20:20 + n_bytes]
    (crc,) = struct.unpack("<I", raw[20 + n_bytes:])
    if zlib.crc32(payload) != crc:
        raise FormatError(f"{path}: RVF1 checksum mismatch")
    return np.frombuffer(payload, dtype="<f4").reshape(t, c, h, w).copy()


def save_dataset(manifest: DatasetManifest, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in manifest.records:
        fname = f"{rec.id}.rvf"
        write_rvf(directory / fname, rec.frames)
        entries.append({
            "id": rec.id, "file": fname, "caption": rec.caption,
            "qa": [{"q": qa.question, "a": qa.answer, "q_alt": qa.question_alt}
                   for qa in rec.qa_pairs],
            "split": rec.split,
            "spec": rec.spec.to_dict(), "meta": rec.meta,
        })
    payload = {"version": manifest.version, "seed": manifest.seed, "records": entries}
    path = directory / "manifest.json"
    path.write_text(json.dumps(payload, indent=2))
    return path


def load_dataset(directory: str | Path) -> DatasetManifest:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{directory}: missing manifest.json")
    payload = json.loads(manifest_path.read_text())
    if payload.get("version") != MANIFEST_VERSION:
        raise FormatError(f"unsupported manifest version {payload.get('version')!r}")
    records = []
    seen = set()
    for entry in payload["records"]:
        if entry["id"] in seen:
            raise FormatError(f"duplicate record id {entry['id']!r}")
        seen.add(entry["id"])
        frame_path = directory / entry["file"]
        if not frame_path.exists():
            raise FormatError(f"missing frame file {entry['file']!r}")
        records.append(VideoRecord(
            id=entry["id"], frames=read_rvf(frame_path), caption=entry["caption"],
            qa_pairs=[QAPair(q["q"], q["a"], q["q_alt"]) for q in entry["qa"]],
            spec=SyntheticVideoSpec.from_dict(entry["spec"]),
            split=entry["split"], meta=entry.get("meta", {})))
    return DatasetManifest(version=payload["version"], seed=payload["seed"], records=records)


def build_dataset(n_train: int, n_test: int, seed: int,
                  spec_defaults: dict | None = None) -> DatasetManifest:
    """Deterministic dataset: shuffled attribute combos, early records get
    (shape, color) pairs that are pairwise distinct where possible."""
    rng = np.random.default_rng(seed)
    combos = list(itertools.product(GRAMMAR_SHAPES, GRAMMAR_COLORS, GRAMMAR_MOTIONS))
    order = rng.permutation(len(combos))
    shuffled = [combos[i] for i in order]

    chosen: list[tuple[str, str, str]] = []
    used_pairs: set[tuple[str, str]] = set()
    pool = list(shuffled)
    while len(chosen) < n_train + n_test and pool:
        pick = next((c for c in pool if (c[0], c[1]) not in used_pairs), pool[0])
        pool.remove(pick)
        used_pairs.add((pick[0], pick[1]))
        chosen.append(pick)
    while len(chosen) < n_train + n_test:  # more records than combos: cycle
        chosen.append(shuffled[len(chosen) % len(shuffled)])

    defaults = spec_defaults or {}
    record_seeds = np.random.SeedSequence(seed).generate_state(len(chosen) + 1)[1:]
    records = []
    for i, (shape, color, motion) in enumerate(chosen):
        spec = SyntheticVideoSpec(shape=shape, color=color, motion=motion, **defaults)
        rec = generate_video(spec, int(record_seeds[i]))
        if i < n_train:
            rec.id, rec.split = f"train-{i:03d}", "train"
        else:
            rec.id, rec.split = f"test-{i - n_train:03d}", "test"
        records.append(rec)
    return DatasetManifest(version=MANIFEST_VERSION, seed=seed, records=records)
