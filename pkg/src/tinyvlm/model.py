"""The trainable artifact: encoder + projector + LM parameters in one bundle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncoderConfig, encode_frames, init_encoder
from .lm import (IGNORE_INDEX, LMConfig, assemble_prompt, init_lm,
                 init_projector, lm_forward, project_visual)
from .vocab import EOS, Vocabulary

COMPONENT_PREFIXES = ("encoder.", "projector.", "lm.")


@dataclass
class ModelBundle:
    encoder_config: EncoderConfig
    lm_config: LMConfig
    vocab: Vocabulary
    params: dict[str, Tensor]
    buffers: dict[str, np.ndarray]

    def named_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        """All trainable and stateful buffers under a name prefix."""
        out = {n: t.data for n, t in self.params.items() if n.startswith(prefix)}
        out.update({n: b for n, b in self.buffers.items() if n.startswith(prefix)})
        return out

    def trainable(self, prefixes) -> dict[str, Tensor]:
        return {n: t for n, t in self.params.items()
                if any(n.startswith(p) for p in prefixes)}


def init_bundle(encoder_config: EncoderConfig, lm_config: LMConfig,
                vocab: Vocabulary, seed: int, dtype=np.float32) -> ModelBundle:
    """Deterministically initialize all three components from one seed."""
    if lm_config.vocab_size != len(vocab):
        lm_config = LMConfig(**{**lm_config.to_dict(), "vocab_size": len(vocab)})
    enc_seed, proj_seed, lm_seed = np.random.SeedSequence(seed).generate_state(3)
    params, buffers = init_encoder(encoder_config, int(enc_seed), dtype=dtype)
    params.update(init_projector(encoder_config.feature_dim, lm_config.d_model,
                                 int(proj_seed), dtype=dtype))
    params.update(init_lm(lm_config, int(lm_seed), dtype=dtype))
    return ModelBundle(encoder_config, lm_config, vocab, params, buffers)


def video_logits(bundle: ModelBundle, frames, system_text: str, question: str,
                 answer: str | None, training: bool):
    """Full forward pass; returns (logits, targets, layout)."""
    feats = encode_frames(frames, bundle.params, bundle.buffers,
                          bundle.encoder_config, training=training)
    visual = project_visual(feats, bundle.params)
    embeddings, targets, layout = assemble_prompt(
        visual, system_text, question, answer, bundle.vocab, bundle.params, bundle.lm_config)
    logits = lm_forward(embeddings, bundle.params, bundle.lm_config)
    return logits, targets, layout


def sequence_loss(bundle: ModelBundle, frames, system_text: str, question: str,
                  answer: str, training: bool = True) -> Tensor:
    """Mean next-token cross-entropy over the answer span of one sequence."""
    logits, targets, _ = video_logits(bundle, frames, system_text, question,
                                      answer, training)
    return ad.cross_entropy(logits, targets, ignore_index=IGNORE_INDEX)


def batch_loss(bundle: ModelBundle, items, training: bool = True) -> Tensor:
    """Mean of per-sequence losses; items are (frames, system, question, answer).

    All clips go through the encoder as one frame batch (one set of batch
    statistics per step); the LM still sees one sequence at a time.
    """
    counts = [np.asarray(frames).shape[0] for frames, *_ in items]
    stacked = np.concatenate([np.asarray(frames) for frames, *_ in items], axis=0)
    feats_all = encode_frames(stacked, bundle.params, bundle.buffers,
                              bundle.encoder_config, training=training)
    total = None
    offset = 0
    for (frames, system_text, question, answer), t in zip(items, counts):
        feats = ad.narrow(feats_all, 0, offset, t)
        offset += t
        visual = project_visual(feats, bundle.params)
        embeddings, targets, _ = assemble_prompt(
            visual, system_text, question, answer, bundle.vocab, bundle.params,
            bundle.lm_config)
        logits = lm_forward(embeddings, bundle.params, bundle.lm_config)
        loss = ad.cross_entropy(logits, targets, ignore_index=IGNORE_INDEX)
        total = loss if total is None else ad.add(total, loss)
    return ad.scale(total, 1.0 / len(items))


@dataclass
class GenerationResult:
    text: str
    token_ids: list[int] = field(default_factory=list)
    stopped_on_eos: bool = False
    truncated: bool = False


def decode_from_features(bundle: ModelBundle, feats: np.ndarray, system_text: str,
                         question: str, max_new_tokens: int) -> GenerationResult:
    """Greedy argmax decoding from precomputed T x D_v frame features.

    Deterministic; argmax ties resolve to the lowest token id. Hitting the
    context limit before EOS flags the result as truncated.
    """
    if max_new_tokens < 1:
        raise ValueError("max_new_tokens must be >= 1")
    from .vocab import detokenize

    with ad.no_grad():
        visual = project_visual(Tensor(feats), bundle.params)
        embeddings, _, layout = assemble_prompt(
            visual, system_text, question, None, bundle.vocab, bundle.params, bundle.lm_config)
        table = bundle.params["lm.tok_embed.weight"]
        generated: list[int] = []
        stopped = truncated = False
        for _ in range(max_new_tokens):
            if embeddings.shape[0] >= bundle.lm_config.max_context:
                truncated = True
                break
            logits = lm_forward(embeddings, bundle.params, bundle.lm_config)
            next_id = int(np.argmax(logits.data[-1]))
            if next_id == EOS:
                stopped = True
                break
            generated.append(next_id)
            embeddings = ad.concat([embeddings, ad.embedding_lookup(table, [next_id])], axis=0)
    return GenerationResult(
        text=detokenize(generated, bundle.vocab), token_ids=generated,
        stopped_on_eos=stopped, truncated=truncated)


def generate(bundle: ModelBundle, frames, system_text: str, question: str = "",
             max_new_tokens: int = 16) -> GenerationResult:
    """Encode one clip (eval-mode statistics) and greedily decode."""
    with ad.no_grad():
        feats = encode_frames(frames, bundle.params, bundle.buffers,
                              bundle.encoder_config, training=False)
    return decode_from_features(bundle, feats.data, system_text, question, max_new_tokens)
