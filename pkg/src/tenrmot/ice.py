"""Interleaving cross-modality encoder.

Each layer refines the visual stream with self-attention, then exchanges
information between words and pixels through a single shared logit matrix:
words attend over pixels with ``softmax(S)`` and pixels attend over words
with ``softmax(S^T)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .positional import grid_encoding
from .tensor import (
    MLP,
    LayerNorm,
    Module,
    MultiHeadAttention,
    Parameter,
    Tensor,
    matmul,
    softmax,
    transpose,
    uniform_init,
)
from .visual import FeatureMap


@dataclass
class Memory:
    features: Tensor  # (h*w) x d
    h: int
    w: int

    def as_map(self) -> Tensor:
        return self.features.reshape(self.h, self.w, self.features.shape[1])


class CrossModalWeights(Module):
    def __init__(self, rng: np.random.Generator, d: int):
        def square():
            return Parameter(uniform_init(rng, (d, d), d))

        self.w_q_lang = square()
        self.w_q_img = square()
        self.w_v_lang = square()
        self.w_v_img = square()
        self.w_out_lang = square()
        self.w_out_img = square()


def cross_modality_attention(f_w, f_img, weights: CrossModalWeights, trace: dict | None = None):
    """Bidirectional word <-> pixel attention sharing one logit matrix.

    Returns ``(word_out, vision_out)`` of shapes N x d and (hw) x d. When
    ``trace`` is a dict it receives the logit matrix ``S`` and the
    transposed view ``S_T`` actually fed to the pixel-side softmax.
    """
    d = f_w.shape[-1]
    if f_img.shape[-1] != d or weights.w_q_lang.shape != (d, d):
        raise ShapeError(f"cross attention: words {f_w.shape}, pixels {f_img.shape}, "
                         f"weights {weights.w_q_lang.shape}")
    q_lang = matmul(f_w, weights.w_q_lang)
    q_img = matmul(f_img, weights.w_q_img)
    logits = matmul(q_lang, transpose(q_img)) * (1.0 / np.sqrt(d))
    logits_t = transpose(logits)
    if trace is not None:
        trace["S"] = logits
        trace["S_T"] = logits_t
    v_img = matmul(f_img, weights.w_v_img)
    v_lang = matmul(f_w, weights.w_v_lang)
    word_out = matmul(matmul(softmax(logits, axis=-1), v_img), weights.w_out_img)
    vision_out = matmul(matmul(softmax(logits_t, axis=-1), v_lang), weights.w_out_lang)
    return word_out, vision_out


class EncoderLayer(Module):
    def __init__(self, rng: np.random.Generator, d: int, heads: int):
        self.norm_self = LayerNorm(d)
        self.self_attn = MultiHeadAttention(rng, d, heads)
        self.norm_img = LayerNorm(d)
        self.norm_lang = LayerNorm(d)
        self.cross = CrossModalWeights(rng, d)
        self.norm_ffn_img = LayerNorm(d)
        self.ffn_img = MLP(rng, [d, 2 * d, d])
        self.norm_ffn_lang = LayerNorm(d)
        self.ffn_lang = MLP(rng, [d, 2 * d, d])

    def __call__(self, img: Tensor, words: Tensor, pos: np.ndarray, use_cross: bool = True,
                 trace: dict | None = None):
        h = self.norm_self(img)
        img = img + self.self_attn(h + pos, h + pos, h)
        if use_cross:
            word_out, vision_out = cross_modality_attention(
                self.norm_lang(words), self.norm_img(img), self.cross, trace)
            img = img + vision_out
            words = words + word_out
            words = words + self.ffn_lang(self.norm_ffn_lang(words))
        img = img + self.ffn_img(self.norm_ffn_img(img))
        return img, words


class InterleavingEncoder(Module):
    def __init__(self, rng: np.random.Generator, d: int, layers: int = 2, heads: int = 4):
        self.d = d
        self.layers = [EncoderLayer(rng, d, heads) for _ in range(layers)]
        # every pixel-side branch starts at zero, so the stack begins as the
        # identity and backbone detail (colour especially) reaches the decoder
        for layer in self.layers:
            for param in (layer.self_attn.w_o, layer.cross.w_out_lang,
                          layer.ffn_img.layers[-1].weight, layer.ffn_img.layers[-1].bias):
                param.data[...] = 0.0
        self.final_norm = LayerNorm(d)

    def encode(self, f_t: FeatureMap, f_w: Tensor, use_cross: bool = True) -> Memory:
        h, w = f_t.hw
        img = f_t.features.reshape(h * w, self.d)
        if not self.layers:
            return Memory(img, h, w)
        pos = grid_encoding(h, w, self.d)
        words = f_w
        for layer in self.layers:
            img, words = layer(img, words, pos, use_cross)
        return Memory(self.final_norm(img), h, w)

    __call__ = encode
