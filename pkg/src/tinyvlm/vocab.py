"""Closed-world tokenizer: whitespace/punctuation split over a fixed vocabulary."""

from __future__ import annotations

import json
import re
from pathlib import Path

SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<cls>", "<vis>", "<unk>")
PAD, BOS, EOS, CLS, VIS, UNK = range(6)

_WORD_RE = re.compile(r"[a-z0-9']+|[^\sa-z0-9']")


def split_words(text: str) -> list[str]:
    """Lowercase and split on whitespace; punctuation becomes its own token."""
    return _WORD_RE.findall(text.lower())


def normalize(text: str) -> str:
    """Canonical single-space form of a text (the tokenizer's round-trip target)."""
    return " ".join(split_words(text))


class Vocabulary:
    """Bijective token<->id map with the six special ids pinned to 0-5."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(SPECIAL_TOKENS) + list(dict.fromkeys(tokens))
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("vocabulary tokens must be unique")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def to_json(self) -> str:
        specials = {name.strip("<>"): i for i, name in enumerate(SPECIAL_TOKENS)}
        return json.dumps({"tokens": self.id_to_token, "specials": specials}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        payload = json.loads(text)
        tokens = payload["tokens"]
        if tokens[:6] != list(SPECIAL_TOKENS):
            raise ValueError("vocabulary JSON must start with the six special tokens")
        return cls(tokens[6:])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(Path(path).read_text())


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Map a text to token ids; unknown words map to UNK."""
    return [vocab.id_of(w) for w in split_words(text)]


def detokenize(ids, vocab: Vocabulary) -> str:
    """Join non-special tokens with single spaces."""
    words = [vocab.id_to_token[i] for i in ids if i >= len(SPECIAL_TOKENS)]
    return " ".join(words)


# word lists of the synthetic caption/question grammar (see data module)
GRAMMAR_SHAPES = ("square", "circle", "triangle")
GRAMMAR_COLORS = ("red", "green", "blue", "yellow")
GRAMMAR_MOTIONS = ("left", "right", "up", "down")
GRAMMAR_TEMPLATE_WORDS = (
    "the", "a", "an", "moves", "move", "moving", "what", "which", "color",
    "shape", "is", "in", "video", "does", "have", "show", "shown", "way",
    "direction", "of", "it", "describe", "this", ".", ",", "?",
)


def default_vocabulary() -> Vocabulary:
    """Vocabulary covering every word the synthetic grammar can emit."""
    return Vocabulary(
        list(GRAMMAR_TEMPLATE_WORDS)
        + list(GRAMMAR_SHAPES) + list(GRAMMAR_COLORS) + list(GRAMMAR_MOTIONS))
