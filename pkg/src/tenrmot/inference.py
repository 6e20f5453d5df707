"""Online, frame-by-frame tracking and benchmark evaluation."""

from __future__ import annotations

from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .checkpoint import Checkpoint, restore_model
from .data import Dataset, Sequence, load_sequence
from .formats import TrackFile, TrackRecord
from .formats import load as load_tracks
from .metrics import HotaResult, evaluate_many
from .model import TenRMOT
from .tensor import no_grad
from .tracker import TrackSet, propagate, spawn


def _pixel_box(box: np.ndarray, height: int, width: int) -> np.ndarray:
    cx, cy, w, h = box
    return np.array([(cx - w / 2) * width, (cy - h / 2) * height, w * width, h * height])


def track_frames(model: TenRMOT, frames: Iterable[np.ndarray], expression: str,
                 with_masks: bool = True) -> TrackFile:
    """Track the referent(s) of ``expression`` through ``frames`` (H x W x 3
    floats in [0, 1]). Only threshold-passing tracks are written per frame."""
    cfg = model.config
    out = TrackFile(expression, 0, (cfg.height, cfg.width), (cfg.height // 4, cfg.width // 4))
    with no_grad():
        f_w, f_s = model.encode_text(expression)
        tracks = TrackSet()
        for t, image in enumerate(frames):
            res = model.step(np.asarray(image, dtype=np.float64), f_w, f_s, tracks)
            o = res.outputs
            conf, ref, boxes = o.conf, o.ref, o.boxes.data
            trk, det = res.batch.track_rows(), res.batch.detect_rows()
            tracks = propagate(tracks, o.embeddings[trk], boxes[trk], conf[trk], ref[trk],
                               cfg.alpha, cfg.conf_threshold, cfg.ref_threshold, cfg.miss_tolerance)
            row_of = {int(res.batch.track_ids[r]): int(r) for r in trk}
            emitted = [(tr.id, row_of[tr.id]) for tr in tracks if tr.visible]
            born = spawn(tracks, o.embeddings[det], boxes[det], conf[det], ref[det],
                         cfg.conf_threshold, cfg.ref_threshold)
            passing = [int(r) for r in det
                       if conf[r] >= cfg.conf_threshold and ref[r] >= cfg.ref_threshold]
            emitted += [(b.id, r) for b, r in zip(born, passing)]
            masks = None
            if with_masks and emitted:
                masks = model.mask_logits_nograd(res, [r for _, r in emitted]) > 0
            for k, (tid, r) in enumerate(emitted):
                out.records.append(TrackRecord(
                    t, tid, _pixel_box(boxes[r], cfg.height, cfg.width), float(conf[r]),
                    float(ref[r]), None if masks is None else masks[k]))
            out.frames = t + 1
    return out


def track_sequence(model: TenRMOT, seq: Sequence, expression: str, with_masks: bool = True) -> TrackFile:
    return track_frames(model, (seq.image(t) for t in range(len(seq))), expression, with_masks)


def track(checkpoint: str | Path | Checkpoint, sequence_dir: str | Path, expression: str,
          out_path: str | Path | None = None) -> TrackFile:
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else Checkpoint.load(checkpoint)
    model = restore_model(ckpt)
    result = track_sequence(model, load_sequence(sequence_dir), expression)
    if out_path:
        result.save(out_path)
    return result


def benchmark(model: TenRMOT, dataset: Dataset, split: str = "test", mode: str = "box",
              select: Callable[[Sequence], bool] | None = None,
              out_dir: str | Path | None = None) -> HotaResult:
    """Track every (sequence, expression) pair of a split and pool HOTA."""
    pairs = []
    out = Path(out_dir) if out_dir else None
    for seq in dataset.sequences(split):
        if select and not select(seq):
            continue
        for k, expr in enumerate(seq.expressions):
            pred = track_sequence(model, seq, expr["text"], with_masks=(mode == "mask"))
            if out:
                out.mkdir(parents=True, exist_ok=True)
                pred.save(out / f"{seq.name}_{k}.txt")
            gt = load_tracks(seq.gt_path(k))
            pairs.append((pred.to_trajectories(), gt.to_trajectories()))
    return evaluate_many(pairs, mode)
