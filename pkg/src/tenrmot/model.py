"""The full referring tracker: text + visual encoders, ICE, LGD, heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .decoder import (
    DecoderOutput,
    LanguageGuidedDecoder,
    MaskHead,
    PredictionHeads,
    QueryBatch,
    build_queries,
)
from .errors import InputError
from .ice import InterleavingEncoder, Memory
from .tensor import Module, Parameter, Tensor, no_grad, sigmoid
from .text import TextEncoder, Vocabulary, tokenize
from .tracker import TrackSet
from .visual import FeatureMap, VisualEncoder


def grid_anchors(n: int, size: float = 0.25) -> np.ndarray:
    """``n`` anchors on a near-square grid of cell centres, all ``size`` wide."""
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    anchors = []
    for k in range(n):
        r, c = divmod(k, cols)
        anchors.append([(c + 0.5) / cols, (r + 0.5) / rows, size, size])
    return np.array(anchors)


@dataclass
class FrameResult:
    batch: QueryBatch
    outputs: DecoderOutput
    f4: FeatureMap
    memory: Memory
    pixels: Tensor  # (H/4 * W/4) x d pixel embedding map


class TenRMOT(Module):
    def __init__(self, config: ModelConfig, vocab: Vocabulary, seed: int = 0):
        self.config = config
        self.vocab = vocab
        rng = np.random.default_rng(seed)
        d = config.d
        self.text = TextEncoder(rng, len(vocab), d)
        self.visual = VisualEncoder(rng, d, config.stem_channels, config.c4, config.c8)
        self.encoder = InterleavingEncoder(rng, d, config.enc_layers, config.heads)
        self.det_content = Parameter(rng.normal(0.0, 1.0, size=(config.n_detect, d)))
        anchors = grid_anchors(config.n_detect)
        self.det_anchor_logits = Parameter(np.log(anchors) - np.log1p(-anchors))
        self.decoder = LanguageGuidedDecoder(rng, d, config.dec_layers, config.heads)
        self.heads = PredictionHeads(rng, d)
        self.mask_head = MaskHead(rng, d, config.c4)

    def encode_text(self, text: str) -> tuple[Tensor, Tensor]:
        return self.text.encode(tokenize(text, self.vocab))

    def step(self, image: np.ndarray, f_w: Tensor, f_s: Tensor, tracks: TrackSet) -> FrameResult:
        """Run one frame: backbone, ICE, query construction, decoding, heads."""
        cfg = self.config
        if image.shape[:2] != (cfg.height, cfg.width):
            raise InputError(f"frame is {image.shape[0]}x{image.shape[1]}, model expects "
                             f"{cfg.height}x{cfg.width}")
        f4, f8 = self.visual(image)
        memory = self.encoder(f8, f_w, use_cross=cfg.use_ice)
        batch = build_queries(
            self.det_content,
            sigmoid(self.det_anchor_logits),
            tracks.contents(),
            tracks.anchors(),
            tracks.ids,
            f_s if cfg.use_lgd else None,
        )
        embeddings = self.decoder(memory, batch)
        outputs = self.heads(embeddings, batch.anchors)
        pixels = self.mask_head.pixel_embedding(f4, memory)
        return FrameResult(batch, outputs, f4, memory, pixels)

    def mask_logits(self, result: FrameResult, rows) -> Tensor:
        rows = np.asarray(rows, dtype=np.int64)
        return self.mask_head.masks_from_pixels(result.outputs.embeddings[rows], result.pixels,
                                                result.f4.hw)

    def mask_logits_nograd(self, result: FrameResult, rows) -> np.ndarray:
        with no_grad():
            rows = np.asarray(rows, dtype=np.int64)
            emb = Tensor(result.outputs.embeddings.data[rows])
            return self.mask_head.masks_from_pixels(emb, Tensor(result.pixels.data), result.f4.hw).data
