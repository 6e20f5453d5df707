"""Track record files (ground truth and predictions) and mask run-lengths.

One comma-separated record per object per frame, preceded by ``#`` header
lines::

    # tenrmot-tracks v1
    # expression: red circles
    # frames: 8
    # frame_size: 64x64
    # mask_size: 16x16
    frame,id,x,y,w,h,conf,ref,mask
    0,1,10.00,12.00,14.00,14.00,1.0000,1.0000,37 3 13 3 200

Boxes are pixel x, y, w, h (top-left corner). ``mask`` is optional: space-
separated run lengths over the row-major mask, starting with a background
run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .metrics import Detection, TrajectorySet

MAGIC = "# tenrmot-tracks v1"
COLUMNS = "frame,id,x,y,w,h,conf,ref,mask"


def rle_encode(mask: np.ndarray) -> str:
    flat = np.asarray(mask, dtype=bool).ravel()
    runs = []
    current, length = False, 0
    for v in flat:
        if v == current:
            length += 1
        else:
            runs.append(length)
            current, length = v, 1
    runs.append(length)
    return " ".join(str(r) for r in runs)


def rle_decode(text: str, shape: tuple[int, int]) -> np.ndarray:
    runs = [int(tok) for tok in text.split()]
    if sum(runs) != shape[0] * shape[1] or any(r < 0 for r in runs):
        raise InputError(f"run lengths sum to {sum(runs)}, expected {shape[0] * shape[1]}")
    flat = np.zeros(shape[0] * shape[1], dtype=bool)
    pos, value = 0, False
    for r in runs:
        flat[pos : pos + r] = value
        pos += r
        value = not value
    return flat.reshape(shape)


@dataclass
class TrackRecord:
    frame: int
    id: int
    box: np.ndarray  # x, y, w, h pixels
    conf: float = 1.0
    ref: float = 1.0
    mask: np.ndarray | None = None


@dataclass
class TrackFile:
    expression: str = ""
    frames: int = 0
    frame_size: tuple[int, int] = (64, 64)
    mask_size: tuple[int, int] = (16, 16)
    records: list[TrackRecord] = field(default_factory=list)

    def to_trajectories(self) -> TrajectorySet:
        n = max([self.frames] + [r.frame + 1 for r in self.records])
        frames: list[list[Detection]] = [[] for _ in range(n)]
        for r in self.records:
            frames[r.frame].append(Detection(r.id, r.box, r.mask))
        return TrajectorySet(frames)

    def dumps(self) -> str:
        lines = [
            MAGIC,
            f"# expression: {self.expression}",
            f"# frames: {self.frames}",
            f"# frame_size: {self.frame_size[0]}x{self.frame_size[1]}",
            f"# mask_size: {self.mask_size[0]}x{self.mask_size[1]}",
            COLUMNS,
        ]
        for r in sorted(self.records, key=lambda r: (r.frame, r.id)):
            x, y, w, h = r.box
            mask = rle_encode(r.mask) if r.mask is not None else ""
            lines.append(f"{r.frame},{r.id},{x:.2f},{y:.2f},{w:.2f},{h:.2f},{r.conf:.4f},{r.ref:.4f},{mask}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())


def _size(value: str, lineno: int) -> tuple[int, int]:
    try:
        a, b = value.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise InputError(f"line {lineno}: bad size {value!r}") from None


def loads(text: str) -> TrackFile:
    tf = TrackFile()
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise InputError("line 1: missing '# tenrmot-tracks v1' header")
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            key, value = key.strip(), value.strip()
            if key == "expression":
                tf.expression = value
            elif key == "frames":
                try:
                    tf.frames = int(value)
                except ValueError:
                    raise InputError(f"line {lineno}: bad frame count {value!r}") from None
            elif key == "frame_size":
                tf.frame_size = _size(value, lineno)
            elif key == "mask_size":
                tf.mask_size = _size(value, lineno)
            continue
        if line == COLUMNS:
            continue
        parts = line.split(",")
        if len(parts) not in (8, 9):
            raise InputError(f"line {lineno}: expected 8 or 9 fields, got {len(parts)}")
        try:
            frame, ident = int(parts[0]), int(parts[1])
            box = np.array([float(v) for v in parts[2:6]])
            conf, ref = float(parts[6]), float(parts[7])
        except ValueError as exc:
            raise InputError(f"line {lineno}: {exc}") from None
        if frame < 0 or np.any(box[2:] < 0):
            raise InputError(f"line {lineno}: negative frame index or box size")
        mask = None
        if len(parts) == 9 and parts[8].strip():
            try:
                mask = rle_decode(parts[8], tf.mask_size)
            except (InputError, ValueError) as exc:
                raise InputError(f"line {lineno}: {exc}") from None
        tf.records.append(TrackRecord(frame, ident, box, conf, ref, mask))
    seen = set()
    for r in tf.records:
        if (r.frame, r.id) in seen:
            raise InputError(f"id {r.id} appears twice in frame {r.frame}")
        seen.add((r.frame, r.id))
    tf.frames = max([tf.frames] + [r.frame + 1 for r in tf.records])
    return tf


def load(path: str | Path) -> TrackFile:
    return loads(Path(path).read_text())
