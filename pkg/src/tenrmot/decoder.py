"""Language-guided decoder, prediction heads and the mask branch."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .ice import Memory
from .positional import box_encoding, grid_encoding
from .tensor import (
    MLP,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    Tensor,
    _sigmoid,
    concat,
    inverse_sigmoid,
    matmul,
    sigmoid,
)
from .visual import FeatureMap

PRIOR_LOGIT = -float(np.log((1 - 0.01) / 0.01))


@dataclass
class QueryBatch:
    content: Tensor  # (N_d + P) x d
    anchors: Tensor  # (N_d + P) x 4, normalised cx, cy, w, h
    is_track: np.ndarray  # bool per row
    track_ids: np.ndarray  # tracker id per row, -1 for detect rows

    def __len__(self) -> int:
        return self.content.shape[0]

    @property
    def n_detect(self) -> int:
        return int((~self.is_track).sum())

    def track_rows(self) -> np.ndarray:
        return np.flatnonzero(self.is_track)

    def detect_rows(self) -> np.ndarray:
        return np.flatnonzero(~self.is_track)


@dataclass
class DecoderOutput:
    embeddings: Tensor
    boxes: Tensor
    conf_logits: Tensor
    ref_logits: Tensor
    mask_logits: Tensor | None = None
    mask_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def conf(self) -> np.ndarray:
        return _sigmoid(self.conf_logits.data)

    @property
    def ref(self) -> np.ndarray:
        return _sigmoid(self.ref_logits.data)


def build_queries(det_content, det_anchors, track_contents=(), track_anchors=(), track_ids=(),
                  f_s=None) -> QueryBatch:
    """Concatenate detect then track queries and add the sentence feature to
    every content row. ``f_s=None`` skips the injection."""
    det_content = det_content if isinstance(det_content, Tensor) else Tensor(det_content)
    det_anchors = det_anchors if isinstance(det_anchors, Tensor) else Tensor(det_anchors)
    d = det_content.shape[1]
    n_det, n_trk = det_content.shape[0], len(track_contents)
    contents = [det_content]
    anchors = [det_anchors]
    if n_trk:
        contents.extend(c.reshape(1, -1) if isinstance(c, Tensor) else Tensor(np.reshape(c, (1, -1)))
                        for c in track_contents)
        anchors.append(Tensor(np.asarray(track_anchors, dtype=np.float64).reshape(n_trk, 4)))
    for c in contents[1:]:
        if c.shape[1] != d:
            raise ContractError(f"track content width {c.shape[1]} != detect width {d}")
    content = concat(contents, axis=0)
    if f_s is not None:
        if f_s.shape[-1] != d:
            raise ContractError(f"sentence feature width {f_s.shape[-1]} != query width {d}")
        content = content + f_s.reshape(1, d)
    return QueryBatch(
        content=content,
        anchors=concat(anchors, axis=0),
        is_track=np.r_[np.zeros(n_det, bool), np.ones(n_trk, bool)],
        track_ids=np.r_[np.full(n_det, -1, np.int64), np.asarray(track_ids, np.int64)],
    )


class DecoderLayer(Module):
    def __init__(self, rng: np.random.Generator, d: int, heads: int):
        self.norm_self = LayerNorm(d)
        self.self_attn = MultiHeadAttention(rng, d, heads)
        self.norm_cross = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(rng, d, heads)
        self.norm_ffn = LayerNorm(d)
        self.ffn = MLP(rng, [d, 2 * d, d])

    def __call__(self, q: Tensor, q_pos: Tensor, mem: Tensor, mem_key: Tensor) -> Tensor:
        h = self.norm_self(q)
        q = q + self.self_attn(h + q_pos, h + q_pos, h)
        h = self.norm_cross(q)
        q = q + self.cross_attn(h + q_pos, mem_key, mem)
        return q + self.ffn(self.norm_ffn(q))


class LanguageGuidedDecoder(Module):
    def __init__(self, rng: np.random.Generator, d: int, layers: int = 2, heads: int = 4):
        self.d = d
        self.pos_ffn = MLP(rng, [d, d, d])
        self.layers = [DecoderLayer(rng, d, heads) for _ in range(layers)]
        self.final_norm = LayerNorm(d)

    def query_positions(self, anchors: Tensor) -> Tensor:
        return self.pos_ffn(box_encoding(anchors, self.d))

    def decode(self, memory: Memory, batch: QueryBatch) -> Tensor:
        if memory.features.shape[1] != self.d:
            raise ShapeError(f"memory width {memory.features.shape[1]} != decoder width {self.d}")
        if not self.layers:
            return batch.content
        q_pos = self.query_positions(batch.anchors)
        mem_key = memory.features + grid_encoding(memory.h, memory.w, self.d)
        q = batch.content
        for layer in self.layers:
            q = layer(q, q_pos, memory.features, mem_key)
        return self.final_norm(q)

    __call__ = decode


class PredictionHeads(Module):
    def __init__(self, rng: np.random.Generator, d: int):
        self.box = MLP(rng, [d, d, d, 4])
        last = self.box.layers[-1]
        last.weight.data[:] = 0.0
        last.bias.data[:] = 0.0
        self.conf = Linear(rng, d, 1)
        self.ref = Linear(rng, d, 1)
        self.conf.bias.data[:] = PRIOR_LOGIT
        self.ref.bias.data[:] = PRIOR_LOGIT

    def predict(self, embeddings: Tensor, anchors: Tensor) -> DecoderOutput:
        if embeddings.shape[0] != anchors.shape[0]:
            raise ContractError(f"{embeddings.shape[0]} embeddings but {anchors.shape[0]} anchors")
        boxes = sigmoid(inverse_sigmoid(anchors) + self.box(embeddings))
        return DecoderOutput(
            embeddings=embeddings,
            boxes=boxes,
            conf_logits=self.conf(embeddings).reshape(-1),
            ref_logits=self.ref(embeddings).reshape(-1),
        )

    __call__ = predict


def bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Row-stochastic 1-D bilinear resampling matrix (half-pixel centres)."""
    u = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        u[i, lo] += 1.0 - frac
        u[i, hi] += frac
    return u


class MaskHead(Module):
    """Per-query mask logits from a stride-4 pixel embedding map.

    The pixel map is a 1x1 projection of the backbone's stride-4 features
    plus the bilinearly upsampled encoder memory.
    """

    def __init__(self, rng: np.random.Generator, d: int, c4: int):
        self.d = d
        self.pixel_proj = Linear(rng, c4, d)
        self.seg = MLP(rng, [d, d, d, d])
        self._upsample_cache: dict[tuple[int, int, int, int], np.ndarray] = {}

    def _upsample(self, h: int, w: int, h4: int, w4: int) -> np.ndarray:
        key = (h, w, h4, w4)
        if key not in self._upsample_cache:
            self._upsample_cache[key] = np.kron(bilinear_matrix(h4, h), bilinear_matrix(w4, w))
        return self._upsample_cache[key]

    def pixel_embedding(self, f_i: FeatureMap, memory: Memory) -> Tensor:
        h4, w4 = f_i.hw
        if (h4, w4) != (2 * memory.h, 2 * memory.w):
            raise ContractError(f"stride-4 map {h4}x{w4} does not match memory {memory.h}x{memory.w}")
        if memory.features.shape[1] != self.d:
            raise ContractError("memory width does not match mask head width")
        flat = f_i.features.reshape(h4 * w4, f_i.features.shape[2])
        up = matmul(Tensor(self._upsample(memory.h, memory.w, h4, w4)), memory.features)
        return self.pixel_proj(flat) + up

    def masks_from_pixels(self, embeddings: Tensor, pixels: Tensor, hw: tuple[int, int]) -> Tensor:
        logits = matmul(self.seg(embeddings), pixels.T)
        return logits.reshape(embeddings.shape[0], hw[0], hw[1])

    def predict_masks(self, embeddings: Tensor, f_i: FeatureMap, memory: Memory) -> Tensor:
        return self.masks_from_pixels(embeddings, self.pixel_embedding(f_i, memory), f_i.hw)
