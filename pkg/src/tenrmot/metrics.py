"""HOTA evaluation over box or mask similarity.

Ground truth holds referred objects only, so any prediction without a
referred match (including one on a visible but unreferred object) is a
false positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .matching import hungarian, pairwise_iou_union

THRESHOLDS = np.round(np.arange(1, 20) * 0.05, 2)
METRIC_NAMES = ("HOTA", "DetA", "AssA", "DetRe", "DetPr", "AssRe", "AssPr", "LocA")
_EPS = np.finfo(float).eps


@dataclass
class Detection:
    id: int
    box: np.ndarray  # x, y, w, h in pixels
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.box = np.asarray(self.box, dtype=np.float64).reshape(4)


@dataclass
class TrajectorySet:
    frames: list[list[Detection]] = field(default_factory=list)

    def __post_init__(self):
        for t, dets in enumerate(self.frames):
            ids = [d.id for d in dets]
            if len(ids) != len(set(ids)):
                raise InputError(f"frame {t}: an id appears more than once")

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def num_dets(self) -> int:
        return sum(len(f) for f in self.frames)

    def padded(self, n: int) -> list[list[Detection]]:
        return self.frames + [[] for _ in range(n - len(self.frames))]


def _xywh_to_xyxy(box: np.ndarray) -> np.ndarray:
    box = np.asarray(box, dtype=np.float64).reshape(-1, 4)
    return np.c_[box[:, :2], box[:, :2] + box[:, 2:]]


def mask_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two stacks of binary masks; empty union -> 0."""
    a = np.asarray(a, dtype=np.float64).reshape(len(a), -1)
    b = np.asarray(b, dtype=np.float64).reshape(len(b), -1)
    inter = a @ b.T
    union = a.sum(1)[:, None] + b.sum(1)[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def similarity_matrix(gts: list[Detection], preds: list[Detection], mode: str = "box") -> np.ndarray:
    if not gts or not preds:
        return np.zeros((len(gts), len(preds)))
    if mode == "box":
        iou, _ = pairwise_iou_union(
            _xywh_to_xyxy(np.array([g.box for g in gts])),
            _xywh_to_xyxy(np.array([p.box for p in preds])),
        )
        return iou
    if mode == "mask":
        if any(d.mask is None for d in gts + preds):
            raise InputError("mask similarity requested but a detection has no mask")
        return mask_iou(np.array([g.mask for g in gts]), np.array([p.mask for p in preds]))
    raise InputError(f"unknown similarity mode {mode!r}")


def similarity(pred: Detection, gt: Detection, mode: str = "box") -> float:
    return float(similarity_matrix([gt], [pred], mode)[0, 0])


@dataclass
class HotaCounts:
    """Additive per-threshold sufficient statistics."""

    tp: np.ndarray
    fn: np.ndarray
    fp: np.ndarray
    ass: np.ndarray  # sum over TPs of A(c)
    ass_re: np.ndarray
    ass_pr: np.ndarray
    loc: np.ndarray  # sum of TP similarities

    @classmethod
    def zeros(cls) -> HotaCounts:
        return cls(*(np.zeros(len(THRESHOLDS)) for _ in range(7)))

    def __add__(self, other: HotaCounts) -> HotaCounts:
        return HotaCounts(*(getattr(self, f) + getattr(other, f)
                            for f in ("tp", "fn", "fp", "ass", "ass_re", "ass_pr", "loc")))


@dataclass
class HotaResult:
    HOTA: float
    DetA: float
    AssA: float
    DetRe: float
    DetPr: float
    AssRe: float
    AssPr: float
    LocA: float
    curves: dict[str, np.ndarray]
    counts: HotaCounts

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    @classmethod
    def from_counts(cls, c: HotaCounts) -> HotaResult:
        if c.tp.sum() + c.fn.sum() + c.fp.sum() == 0:
            ones = np.ones(len(THRESHOLDS))
            curves = {name: ones.copy() for name in METRIC_NAMES}
            return cls(*(1.0 for _ in METRIC_NAMES), curves=curves, counts=c)

        def ratio(num, den):
            return np.divide(num, den, out=np.zeros_like(num), where=den > 0)

        det_a = ratio(c.tp, c.tp + c.fn + c.fp)
        ass_a = ratio(c.ass, c.tp)
        curves = {
            "HOTA": np.sqrt(det_a * ass_a),
            "DetA": det_a,
            "AssA": ass_a,
            "DetRe": ratio(c.tp, c.tp + c.fn),
            "DetPr": ratio(c.tp, c.tp + c.fp),
            "AssRe": ratio(c.ass_re, c.tp),
            "AssPr": ratio(c.ass_pr, c.tp),
            "LocA": ratio(c.loc, c.tp),
        }
        total_tp = c.tp.sum()
        loc = float(c.loc.sum() / total_tp) if total_tp > 0 else 0.0
        means = {name: float(curves[name].mean()) for name in METRIC_NAMES if name != "LocA"}
        return cls(**means, LocA=loc, curves=curves, counts=c)


def sequence_counts(pred: TrajectorySet, gt: TrajectorySet, mode: str = "box") -> HotaCounts:
    n = max(pred.num_frames, gt.num_frames)
    pred_frames, gt_frames = pred.padded(n), gt.padded(n)
    gt_ids = sorted({d.id for f in gt_frames for d in f})
    pr_ids = sorted({d.id for f in pred_frames for d in f})
    g_index = {k: i for i, k in enumerate(gt_ids)}
    p_index = {k: i for i, k in enumerate(pr_ids)}
    g_count = np.zeros(len(gt_ids))
    p_count = np.zeros(len(pr_ids))
    matches = np.zeros((len(THRESHOLDS), len(gt_ids), len(pr_ids)))
    counts = HotaCounts.zeros()

    for gts, preds in zip(gt_frames, pred_frames):
        gi = np.array([g_index[d.id] for d in gts], dtype=np.int64)
        pi = np.array([p_index[d.id] for d in preds], dtype=np.int64)
        g_count[gi] += 1
        p_count[pi] += 1
        if not gts or not preds:
            counts.fn += len(gts)
            counts.fp += len(preds)
            continue
        sim = similarity_matrix(gts, preds, mode)
        for a, tau in enumerate(THRESHOLDS):
            allowed = sim >= tau - _EPS
            if not allowed.any():
                counts.fn[a] += len(gts)
                counts.fp[a] += len(preds)
                continue
            match = hungarian(-np.where(allowed, sim, 0.0))
            keep = allowed[match.rows, match.cols]
            rows, cols = match.rows[keep], match.cols[keep]
            counts.tp[a] += len(rows)
            counts.fn[a] += len(gts) - len(rows)
            counts.fp[a] += len(preds) - len(rows)
            counts.loc[a] += sim[rows, cols].sum()
            matches[a, gi[rows], pi[cols]] += 1

    for a in range(len(THRESHOLDS)):
        m = matches[a]
        if not m.any():
            continue
        denom = g_count[:, None] + p_count[None, :] - m
        score = np.divide(m, denom, out=np.zeros_like(m), where=denom > 0)
        counts.ass[a] = (m * score).sum()
        counts.ass_re[a] = (m * m / np.maximum(g_count[:, None], 1)).sum()
        counts.ass_pr[a] = (m * m / np.maximum(p_count[None, :], 1)).sum()
    return counts


def evaluate(pred: TrajectorySet, gt: TrajectorySet, mode: str = "box") -> HotaResult:
    return HotaResult.from_counts(sequence_counts(pred, gt, mode))


def evaluate_many(pairs, mode: str = "box") -> HotaResult:
    """Pool statistics across sequences (detection-count weighting)."""
    total = HotaCounts.zeros()
    for pred, gt in pairs:
        total = total + sequence_counts(pred, gt, mode)
    return HotaResult.from_counts(total)
