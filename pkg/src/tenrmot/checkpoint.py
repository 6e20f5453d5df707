"""Checkpoint container.

Layout (all text lines end in ``\\n``)::

    TENRMOT-CKPT 1
    meta <n>            followed by n bytes of sorted-key JSON and a newline
    tensor <name> <d0,d1,...> <n>
                        followed by n bytes of little-endian float64 and a newline
    ...
    end

The JSON holds the model config, vocabulary, optimizer step and RNG state.
Optimizer moments are stored as tensors named ``optim.m.<param>`` and
``optim.v.<param>``. Saving a loaded checkpoint reproduces the same bytes.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import InputError

MAGIC = b"TENRMOT-CKPT 1\n"


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: list[str]
    tensors: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)  # optimizer step, rng state, run info

    def to_bytes(self) -> bytes:
        meta = {"model": dataclasses.asdict(self.config), "vocab": self.vocab, "extra": self.extra}
        blob = json.dumps(meta, sort_keys=True).encode()
        out = [MAGIC, f"meta {len(blob)}\n".encode(), blob, b"\n"]
        for name in sorted(self.tensors):
            arr = np.ascontiguousarray(self.tensors[name], dtype="<f8")
            if any(c.isspace() for c in name):
                raise InputError(f"tensor name {name!r} contains whitespace")
            shape = ",".join(str(s) for s in arr.shape)
            raw = arr.tobytes()
            out += [f"tensor {name} {shape} {len(raw)}\n".encode(), raw, b"\n"]
        out.append(b"end\n")
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> Checkpoint:
        if not data.startswith(MAGIC):
            raise InputError("not a checkpoint (bad magic line)")
        pos = len(MAGIC)

        def line():
            nonlocal pos
            end = data.index(b"\n", pos)
            text = data[pos:end].decode()
            pos = end + 1
            return text

        def chunk(n):
            nonlocal pos
            raw = data[pos : pos + n]
            if len(raw) != n or data[pos + n : pos + n + 1] != b"\n":
                raise InputError("truncated checkpoint")
            pos += n + 1
            return raw

        kind, n = line().split()
        if kind != "meta":
            raise InputError("checkpoint is missing its meta block")
        meta = json.loads(chunk(int(n)))
        tensors = {}
        while True:
            head = line()
            if head == "end":
                break
            kind, name, shape, n = head.split(" ")
            if kind != "tensor":
                raise InputError(f"unexpected checkpoint entry {kind!r}")
            dims = tuple(int(s) for s in shape.split(",")) if shape else ()
            tensors[name] = np.frombuffer(chunk(int(n)), dtype="<f8").reshape(dims).astype(np.float64)
        return cls(ModelConfig(**meta["model"]), meta["vocab"], tensors, meta["extra"])

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> Checkpoint:
        return cls.from_bytes(Path(path).read_bytes())


def capture(model, optimizer=None, rng: np.random.Generator | None = None, extra: dict | None = None) -> Checkpoint:
    tensors = {name: p.data.copy() for name, p in model.named_parameters()}
    info = dict(extra or {})
    if optimizer is not None and optimizer.state:
        info["optim_step"] = optimizer.state["step"]
        for name, m, v in zip(optimizer.names, optimizer.state["m"], optimizer.state["v"]):
            tensors[f"optim.m.{name}"] = m.copy()
            tensors[f"optim.v.{name}"] = v.copy()
    if rng is not None:
        info["rng"] = rng.bit_generator.state
    return Checkpoint(model.config, model.vocab.to_list(), tensors, info)


def restore_model(ckpt: Checkpoint):
    from .model import TenRMOT
    from .text import Vocabulary

    model = TenRMOT(ckpt.config, Vocabulary.from_list(ckpt.vocab))
    for name, p in model.named_parameters():
        if name not in ckpt.tensors:
            raise InputError(f"checkpoint lacks parameter {name}")
        if ckpt.tensors[name].shape != p.data.shape:
            raise InputError(f"parameter {name}: shape {ckpt.tensors[name].shape} != {p.data.shape}")
        p.data[...] = ckpt.tensors[name]
    return model


def restore_optimizer(ckpt: Checkpoint, optimizer) -> None:
    if "optim_step" not in ckpt.extra:
        return
    optimizer.state = {
        "step": ckpt.extra["optim_step"],
        "m": [ckpt.tensors[f"optim.m.{n}"].copy() for n in optimizer.names],
        "v": [ckpt.tensors[f"optim.v.{n}"].copy() for n in optimizer.names],
    }
