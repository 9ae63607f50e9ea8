"""Tiny decoder-only transformer plus the fused-prompt machinery around it.

The prompt layout is fixed: one CLS slot, T visual slots (projected frame
features), the tokenized system command, the question, and, when training,
the answer tokens followed by EOS. Loss targets exist only for the answer
span; everything else is context.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContextOverflowError, ShapeError
from .vocab import CLS, EOS, VIS, Vocabulary, tokenize

IGNORE_INDEX = -1


@dataclass(frozen=True)
class LMConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 128
    max_context: int = 256
    vocab_size: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model, "n_layers": self.n_layers, "n_heads": self.n_heads,
            "ffn_dim": self.ffn_dim, "max_context": self.max_context,
            "vocab_size": self.vocab_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LMConfig":
        return cls(**d)


@dataclass
class PromptLayout:
    """Per-position source tags for an assembled sequence."""

    cls_slots: int
    visual_slots: int
    system_slots: int
    question_slots: int
    answer_slots: int
    token_ids: list[int] = field(default_factory=list)

    def lengths(self) -> list[int]:
        return [self.cls_slots, self.visual_slots, self.system_slots,
                self.question_slots, self.answer_slots]

    @property
    def total(self) -> int:
        return sum(self.lengths())

    @property
    def answer_start(self) -> int:
        return self.total - self.answer_slots

    def tags(self) -> list[str]:
        out = ["cls"] * self.cls_slots + ["vis"] * self.visual_slots
        out += ["system"] * self.system_slots + ["question"] * self.question_slots
        out += ["answer"] * self.answer_slots
        return out


def _linear_init(rng: np.random.Generator, shape, dtype, std: float = 0.02):
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def init_projector(feature_dim: int, d_model: int, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    """Single affine map from frame-feature space into the LM embedding space."""
    rng = np.random.default_rng(seed)
    std = np.sqrt(1.0 / feature_dim)
    return {
        "projector.weight": Tensor(
            rng.normal(0.0, std, size=(feature_dim, d_model)).astype(dtype), requires_grad=True),
        "projector.bias": Tensor(np.zeros(d_model, dtype=dtype), requires_grad=True),
    }


def init_lm(config: LMConfig, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    d, f, v = config.d_model, config.ffn_dim, config.vocab_size
    params: dict[str, Tensor] = {
        "lm.tok_embed.weight": _linear_init(rng, (v, d), dtype),
        "lm.pos_embed.weight": _linear_init(rng, (config.max_context, d), dtype),
    }
    for i in range(config.n_layers):
        p = f"lm.layer{i}"
        params[f"{p}.ln1.scale"] = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        params[f"{p}.ln1.shift"] = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        for name in ("wq", "wk", "wv", "wo"):
            params[f"{p}.attn.{name}.weight"] = _linear_init(rng, (d, d), dtype)
            params[f"{p}.attn.{name}.bias"] = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        params[f"{p}.ln2.scale"] = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        params[f"{p}.ln2.shift"] = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        params[f"{p}.ffn.fc1.weight"] = _linear_init(rng, (d, f), dtype)
        params[f"{p}.ffn.fc1.bias"] = Tensor(np.zeros(f, dtype=dtype), requires_grad=True)
        params[f"{p}.ffn.fc2.weight"] = _linear_init(rng, (f, d), dtype)
        params[f"{p}.ffn.fc2.bias"] = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
    params["lm.final_ln.scale"] = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
    params["lm.final_ln.shift"] = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
    params["lm.head.weight"] = _linear_init(rng, (d, v), dtype)
    params["lm.head.bias"] = Tensor(np.zeros(v, dtype=dtype), requires_grad=True)
    return params


def project_visual(feats: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Affine-map T x D_v frame features to T x d_model embeddings."""
    w = params["projector.weight"]
    if feats.ndim != 2 or feats.shape[1] != w.shape[0]:
        raise ShapeError(
            f"project_visual: features {feats.shape} do not match projector input {w.shape[0]}")
    return ad.add(ad.matmul(feats, w), params["projector.bias"])


def assemble_prompt(visual: Tensor, system_text: str, question: str,
                    answer: str | None, vocab: Vocabulary,
                    params: dict[str, Tensor], config: LMConfig):
    """Fuse CLS, visual rows and token embeddings into one sequence.

    Returns (embeddings L x d_model, targets length-L int array, layout).
    Targets hold the next token for positions that predict an answer slot
    and IGNORE_INDEX everywhere else; an empty/absent answer produces no
    answer slots and no targets.
    """
    t = visual.shape[0]
    system_ids = tokenize(system_text, vocab)
    question_ids = tokenize(question, vocab)
    answer_ids = tokenize(answer, vocab) + [EOS] if answer else []

    layout = PromptLayout(
        cls_slots=1, visual_slots=t, system_slots=len(system_ids),
        question_slots=len(question_ids), answer_slots=len(answer_ids))
    total = layout.total
    if total > config.max_context:
        raise ContextOverflowError(
            f"assembled prompt length {total} exceeds max_context {config.max_context}")

    token_ids = [CLS] + [VIS] * t + system_ids + question_ids + answer_ids
    layout.token_ids = token_ids

    table = params["lm.tok_embed.weight"]
    pieces = [ad.embedding_lookup(table, [CLS]), visual]
    text_ids = system_ids + question_ids + answer_ids
    if text_ids:
        pieces.append(ad.embedding_lookup(table, text_ids))
    embeddings = ad.concat(pieces, axis=0)

    targets = np.full(total, IGNORE_INDEX, dtype=np.int64)
    start = layout.answer_start
    for k, tok in enumerate(answer_ids):
        targets[start + k - 1] = tok
    return embeddings, targets, layout


def _linear(x: Tensor, params: dict, name: str) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{name}.weight"]), params[f"{name}.bias"])


def _attention(x: Tensor, params: dict, prefix: str, config: LMConfig,
               mask: Tensor) -> Tensor:
    length = x.shape[0]
    h, dh = config.n_heads, config.head_dim
    q = ad.transpose(ad.reshape(_linear(x, params, f"{prefix}.wq"), (length, h, dh)), (1, 0, 2))
    k = ad.transpose(ad.reshape(_linear(x, params, f"{prefix}.wk"), (length, h, dh)), (1, 0, 2))
    v = ad.transpose(ad.reshape(_linear(x, params, f"{prefix}.wv"), (length, h, dh)), (1, 0, 2))
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
    weights = ad.softmax(ad.add(scores, mask), axis=-1)
    ctx = ad.matmul(weights, v)
    merged = ad.reshape(ad.transpose(ctx, (1, 0, 2)), (length, config.d_model))
    return _linear(merged, params, f"{prefix}.wo")


def causal_mask(length: int, dtype=np.float32) -> Tensor:
    m = np.triu(np.full((length, length), -1e9, dtype=dtype), k=1)
    return Tensor(m)


def lm_forward(embeddings: Tensor, params: dict[str, Tensor], config: LMConfig) -> Tensor:
    """Pre-norm causal transformer; logits at every position."""
    length = embeddings.shape[0]
    if length > config.max_context:
        raise ContextOverflowError(f"sequence length {length} exceeds max_context {config.max_context}")
    pos = ad.narrow(params["lm.pos_embed.weight"], 0, 0, length)
    x = ad.add(embeddings, pos)
    mask = causal_mask(length, dtype=embeddings.dtype)
    for i in range(config.n_layers):
        p = f"lm.layer{i}"
        normed = ad.layer_norm(x, params[f"{p}.ln1.scale"], params[f"{p}.ln1.shift"])
        x = ad.add(x, _attention(normed, params, f"{p}.attn", config, mask))
        normed = ad.layer_norm(x, params[f"{p}.ln2.scale"], params[f"{p}.ln2.shift"])
        ffn = _linear(ad.relu(_linear(normed, params, f"{p}.ffn.fc1")), params, f"{p}.ffn.fc2")
        x = ad.add(x, ffn)
    x = ad.layer_norm(x, params["lm.final_ln.scale"], params["lm.final_ln.shift"])
    return _linear(x, params, "lm.head")
