"""Convolutional stand-in backbone producing stride-4 and stride-8 maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .tensor import Conv2d, Linear, Module, Tensor, concat, relu


@dataclass
class Frame:
    image: np.ndarray  # H x W x 3 in [0, 1]
    frame_index: int = 0


@dataclass
class FeatureMap:
    features: Tensor  # h x w x c
    stride: int

    @property
    def hw(self) -> tuple[int, int]:
        return self.features.shape[0], self.features.shape[1]


class VisualEncoder(Module):
    """Three stride-2 stages (strides 2, 4, 8) with one refining conv at
    stride 4. The stride-8 output, concatenated with the mean colour of each
    8x8 cell, is linearly projected to ``d`` channels."""

    def __init__(self, rng: np.random.Generator, d: int, stem: int = 16, c4: int = 32, c8: int = 64):
        self.stage1 = Conv2d(rng, 3, stem, 3, stride=2)
        self.stage2 = Conv2d(rng, stem, c4, 3, stride=2)
        self.refine4 = Conv2d(rng, c4, c4, 3, stride=1)
        self.stage3 = Conv2d(rng, c4, c8, 3, stride=2)
        self.proj = Linear(rng, c8 + 3, d)

    def encode_frame(self, frame: Frame | np.ndarray) -> tuple[FeatureMap, FeatureMap]:
        image = frame.image if isinstance(frame, Frame) else frame
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise InputError(f"expected an H x W x 3 image, got shape {image.shape}")
        if image.shape[0] % 8 or image.shape[1] % 8:
            raise InputError(f"frame size {image.shape[:2]} is not divisible by 8")
        x = relu(self.stage1(Tensor(image)))
        x = relu(self.stage2(x))
        f4 = relu(self.refine4(x)) + x
        f8 = relu(self.stage3(f4))
        # colour is irrelevant to detection, so the convs alone tend to discard it
        h, w = image.shape[0] // 8, image.shape[1] // 8
        cell_rgb = image.reshape(h, 8, w, 8, 3).mean(axis=(1, 3))
        f8 = concat([f8, Tensor(cell_rgb)], axis=-1)
        return FeatureMap(f4, 4), FeatureMap(self.proj(f8), 8)

    __call__ = encode_frame
