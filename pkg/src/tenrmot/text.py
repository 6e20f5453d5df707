"""Referring-expression tokenizer and a small trainable text encoder."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ContractError, InputError
from .tensor import Linear, Module, Parameter, Tensor, mean

PAD, UNK = "<pad>", "<unk>"
_TOKEN = re.compile(r"[a-z0-9]+")
_FLIP_SWAP = {"left": "right", "right": "left", "leftward": "rightward", "rightward": "leftward"}


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = [PAD, UNK]
        self.stoi: dict[str, int] = {PAD: 0, UNK: 1}
        for tok in tokens:
            self.add(tok)

    pad_id = 0
    unk_id = 1

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> Vocabulary:
        vocab = cls()
        for text in texts:
            for tok in split_words(text):
                vocab.add(tok)
        # flipped expressions must stay in-vocabulary
        for a, b in _FLIP_SWAP.items():
            if a in vocab.stoi:
                vocab.add(b)
        return vocab

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, tokens: list[str]) -> Vocabulary:
        if tokens[:2] != [PAD, UNK]:
            raise InputError("vocabulary must start with the pad and unknown tokens")
        return cls(tokens[2:])


@dataclass
class Expression:
    text: str
    token_ids: list[int]


def split_words(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def tokenize(text: str, vocab: Vocabulary) -> Expression:
    words = split_words(text or "")
    if not words:
        raise InputError(f"expression {text!r} contains no tokens")
    return Expression(text, [vocab.lookup(w) for w in words])


def flip_expression(text: str) -> str:
    """Swap left/right words, for horizontally mirrored frames."""
    return " ".join(_FLIP_SWAP.get(w, w) for w in split_words(text))


class TextEncoder(Module):
    """Embedding lookup + projection to word features, mean pooling + projection
    to the sentence feature."""

    def __init__(self, rng: np.random.Generator, vocab_size: int, d: int, d_embed: int | None = None):
        d_embed = d_embed or d
        self.vocab_size = vocab_size
        self.embedding = Parameter(rng.normal(0.0, 1.0, size=(vocab_size, d_embed)))
        self.word_proj = Linear(rng, d_embed, d)
        self.sent_proj = Linear(rng, d, d)

    def words(self, token_ids) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size == 0 or ids.min() < 0 or ids.max() >= self.vocab_size:
            raise ContractError(f"token ids out of range for vocabulary of {self.vocab_size}")
        return self.word_proj(self.embedding[ids])

    @staticmethod
    def pool(word_features: Tensor) -> Tensor:
        return mean(word_features, axis=0)

    def encode(self, expr: Expression) -> tuple[Tensor, Tensor]:
        f_w = self.words(expr.token_ids)
        return f_w, self.sent_proj(self.pool(f_w))
