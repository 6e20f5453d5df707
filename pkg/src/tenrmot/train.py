"""Clip-based training with online track-query propagation."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, capture
from .config import RunConfig, dump_config
from .data import Dataset, Sequence, load_dataset
from .matching import LossWeights, assign_labels, total_loss
from .model import TenRMOT
from .tensor import AdamW, Tensor, clip_grad_norm
from .text import Vocabulary, flip_expression, tokenize
from .tracker import TrackSet, TrackState, update_track_query

log = logging.getLogger(__name__)
TERMS = ("cls", "ref", "l1", "giou", "mask", "dice")


class TrainingDiverged(RuntimeError):
    pass


def loss_weights(cfg: RunConfig) -> LossWeights:
    return LossWeights(cfg.w_cls, cfg.w_l1, cfg.w_giou, cfg.w_ref, cfg.w_mask, cfg.w_dice)


def clip_loss(model: TenRMOT, seq: Sequence, expr_index: int, start: int, length: int,
              weights: LossWeights, cues: str = "box+mask", flip: bool = False,
              targets: str = "referred"):
    """Summed loss over ``length`` frames starting at ``start``.

    Frame one sees detect queries only. Detect rows matched to a referred
    object become track queries bound to that object's identity and are
    carried forward with the momentum update.
    """
    cfg = model.config
    text = seq.expressions[expr_index]["text"]
    if flip:
        text = flip_expression(text)
    f_w, f_s = model.text.encode(tokenize(text, model.vocab))
    tracks = TrackSet()
    total: Tensor | None = None
    parts = dict.fromkeys(TERMS, 0.0)
    use_masks = weights.mask > 0 or weights.dice > 0 or cues != "box"
    for t in range(start, start + length):
        image = seq.image(t)
        if flip:
            image = image[:, ::-1]
        gt = seq.ground_truth(t, expr_index, flip)
        res = model.step(image, f_w, f_s, tracks)
        mask_np = model.mask_logits_nograd(res, np.arange(len(res.batch))) if cues != "box" else None
        bindings = {tr.id: tr.gt_id for tr in tracks}
        assignment = assign_labels(res.batch, res.outputs, gt, weights, bindings, mask_np, cues, targets)
        masks = model.mask_logits(res, assignment.rows) if use_masks and len(assignment) else None
        loss, terms = total_loss(res.outputs, assignment, gt, weights, masks)
        total = loss if total is None else total + loss
        for k, v in terms.items():
            parts[k] += v
        if t == start + length - 1:
            break

        emb = res.outputs.embeddings
        boxes = res.outputs.boxes.data
        new_tracks = []
        for i, tr in enumerate(tracks.tracks):
            row = int(res.batch.track_rows()[i])
            e = emb[row]
            prev = tr.content
            if cfg.detach_track_content:
                e, prev = e.detach(), prev.detach()
            new_tracks.append(TrackState(tr.id, update_track_query(e, prev, cfg.alpha),
                                         boxes[row].copy(), age=tr.age + 1, gt_id=tr.gt_id))
        tracks.tracks = new_tracks
        for r, c in zip(assignment.rows, assignment.cols):
            if res.batch.is_track[r]:
                continue
            tracks.tracks.append(TrackState(tracks.next_id, emb[int(r)], boxes[r].copy(),
                                            gt_id=int(gt.ids[c])))
            tracks.next_id += 1
    return total, parts


@dataclass
class TrainResult:
    model: TenRMOT
    checkpoint: Checkpoint
    log: list[dict] = field(default_factory=list)


def build_model(cfg: RunConfig, dataset: Dataset) -> TenRMOT:
    vocab = Vocabulary.from_texts(dataset.templates)
    return TenRMOT(cfg.model, vocab, seed=cfg.seed)


def make_optimizer(model: TenRMOT, cfg: RunConfig) -> AdamW:
    def scale(name: str) -> float:
        if name.startswith("visual."):
            return cfg.backbone_lr_scale
        return cfg.encoder_lr_scale if name.startswith("encoder.") else 1.0

    return AdamW(model.named_parameters(), cfg.lr, cfg.weight_decay, scale)


def train(cfg: RunConfig, dataset: Dataset | None = None, out_dir: str | Path | None = None,
          checkpoint_every: int = 0) -> TrainResult:
    """Train from scratch. Writes ``model.ckpt``, ``train_log.csv`` and
    ``config.ini`` into ``out_dir`` when given."""
    dataset = dataset or load_dataset(cfg.dataset)
    seqs = dataset.sequences("train")
    if cfg.max_train_sequences:
        seqs = seqs[: cfg.max_train_sequences]
    if not seqs:
        raise ValueError("dataset has no training sequences")
    model = build_model(cfg, dataset)
    opt = make_optimizer(model, cfg)
    weights = loss_weights(cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(dump_config(cfg))
    history: list[dict] = []

    for epoch in range(1, cfg.epochs + 1):
        if epoch == cfg.lr_drop_epoch + 1:
            opt.lr *= 0.1
        began = time.perf_counter()
        sums = dict.fromkeys(("loss",) + TERMS, 0.0)
        # one clip per (sequence, expression) pair per epoch
        pairs = [(si, k) for si, s in enumerate(seqs) for k in range(len(s.expressions))]
        for pi in rng.permutation(len(pairs)):
            si, k = pairs[pi]
            seq = seqs[si]
            clip = min(cfg.clip_len, len(seq))
            start = int(rng.integers(0, len(seq) - clip + 1))
            flip = bool(rng.random() < cfg.flip_prob)
            loss, parts = clip_loss(model, seq, k, start, clip, weights, cfg.matching_cues, flip,
                                    cfg.match_targets)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}: sequence {seq.name}, expression {k} "
                    f"({seq.expressions[k]['text']!r}), frames {start}..{start + clip - 1}, "
                    f"flip={flip}, terms={json.dumps(parts)}")
            opt.zero_grad()
            loss.backward()
            clip_grad_norm(opt.params, cfg.grad_clip)
            opt.step()
            sums["loss"] += value
            for name, v in parts.items():
                sums[name] += v
        row = {"epoch": epoch, **{k: v / len(pairs) for k, v in sums.items()}}
        history.append(row)
        log.info("epoch %d loss %.4f (%.1fs)", epoch, row["loss"], time.perf_counter() - began)
        if out and checkpoint_every and epoch % checkpoint_every == 0:
            capture(model, opt, rng, {"epoch": epoch}).save(out / f"epoch_{epoch:03d}.ckpt")

    ckpt = capture(model, opt, rng, {"epoch": cfg.epochs})
    if out:
        ckpt.save(out / "model.ckpt")
        write_log(history, out / "train_log.csv")
    return TrainResult(model, ckpt, history)


def write_log(history: list[dict], path: Path) -> None:
    if not history:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(history[0]))
        writer.writeheader()
        for row in history:
            writer.writerow({k: f"{v:.10g}" if isinstance(v, float) else v for k, v in row.items()})
