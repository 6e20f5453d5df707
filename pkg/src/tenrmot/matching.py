"""Label assignment and the set-prediction loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .tensor import (
    Tensor,
    _sigmoid,
    matmul,
    sigmoid,
    softplus,
    tabs,
    maximum,
    minimum,
)

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
_CXCYWH_TO_XYXY = np.array(
    [[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0], [-0.5, 0.0, 0.5, 0.0], [0.0, -0.5, 0.0, 0.5]]
)


@dataclass
class LossWeights:
    cls: float = 5.0
    l1: float = 2.0
    giou: float = 2.0
    ref: float = 2.0
    mask: float = 5.0
    dice: float = 5.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise InputError(f"loss weight {name} must be non-negative, got {value}")


@dataclass
class GroundTruthFrame:
    ids: np.ndarray  # k
    boxes: np.ndarray  # k x 4, normalised cx, cy, w, h
    referred: np.ndarray  # k bool
    masks: np.ndarray | None = None  # k x H/4 x W/4 bool

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.referred = np.asarray(self.referred, dtype=bool).reshape(-1)
        if len(set(self.ids.tolist())) != len(self.ids):
            raise InputError(f"duplicate ground-truth ids in frame: {self.ids.tolist()}")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class Assignment:
    rows: np.ndarray
    cols: np.ndarray
    unmatched_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    unmatched_cols: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist()))

    def __len__(self) -> int:
        return len(self.rows)

    def total(self, cost: np.ndarray) -> float:
        return float(cost[self.rows, self.cols].sum()) if len(self.rows) else 0.0


# -- geometry ---------------------------------------------------------------


def cxcywh_to_xyxy(boxes):
    if isinstance(boxes, Tensor):
        return matmul(boxes, Tensor(_CXCYWH_TO_XYXY))
    return np.asarray(boxes, dtype=np.float64) @ _CXCYWH_TO_XYXY


def giou(a, b) -> float:
    """Generalised IoU of two x0, y0, x1, y1 boxes."""
    return float(pairwise_giou(np.reshape(a, (1, 4)), np.reshape(b, (1, 4)))[0, 0])


def pairwise_iou_union(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    iou = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
    return iou, union


def pairwise_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iou, union = pairwise_iou_union(a, b)
    lt = np.minimum(a[:, None, :2], b[None, :, :2])
    rb = np.maximum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    hull = wh[..., 0] * wh[..., 1]
    penalty = np.divide(hull - union, hull, out=np.zeros_like(hull), where=hull > 0)
    return iou - penalty


def giou_tensor(pred_xyxy: Tensor, gt_xyxy: np.ndarray) -> Tensor:
    """Row-wise GIoU between predicted (differentiable) and target boxes."""
    gt = Tensor(gt_xyxy)
    p0, p1 = pred_xyxy[:, :2], pred_xyxy[:, 2:]
    g0, g1 = gt.data[:, :2], gt.data[:, 2:]
    pwh = p1 - p0
    area_p = pwh[:, 0] * pwh[:, 1]
    area_g = (g1[:, 0] - g0[:, 0]) * (g1[:, 1] - g0[:, 1])
    inter_wh = maximum(minimum(p1, g1) - maximum(p0, g0), 0.0)
    inter = inter_wh[:, 0] * inter_wh[:, 1]
    union = area_p + area_g - inter
    hull_wh = maximum(p1, g1) - minimum(p0, g0)
    hull = hull_wh[:, 0] * hull_wh[:, 1]
    return inter / union - (hull - union) / hull


# -- assignment -------------------------------------------------------------


def hungarian(cost) -> Assignment:
    """Minimum-cost assignment of min(m, n) pairs (shortest augmenting path
    with row/column potentials)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise InputError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise InputError("cost matrix contains NaN or infinite entries")
    m, n = cost.shape
    transposed = m > n
    c = cost.T if transposed else cost
    rows_n, cols_n = c.shape
    u = np.zeros(rows_n + 1)
    v = np.zeros(cols_n + 1)
    owner = np.zeros(cols_n + 1, dtype=np.int64)  # column -> 1-based row
    way = np.zeros(cols_n + 1, dtype=np.int64)
    for i in range(1, rows_n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(cols_n + 1, np.inf)
        used = np.zeros(cols_n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used
            free[0] = False
            reduced = c[i0 - 1] - u[i0] - v[1:]
            better = free[1:] & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.where(free, minv, np.inf)
            j1 = int(np.argmin(candidates))
            delta = candidates[j1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    cols = np.flatnonzero(owner[1:])
    rows = owner[1:][cols] - 1
    if transposed:
        rows, cols = cols, rows
    order = np.argsort(rows)
    rows, cols = rows[order].astype(np.int64), cols[order].astype(np.int64)
    return Assignment(
        rows,
        cols,
        np.setdiff1d(np.arange(m), rows),
        np.setdiff1d(np.arange(n), cols),
    )


# -- costs ------------------------------------------------------------------


def _focal_terms(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-element focal penalties for a positive and a negative target."""
    p = _sigmoid(logits)
    pos = FOCAL_ALPHA * (1 - p) ** FOCAL_GAMMA * np.logaddexp(0.0, -logits)
    neg = (1 - FOCAL_ALPHA) * p**FOCAL_GAMMA * np.logaddexp(0.0, logits)
    return pos, neg


def match_cost(boxes: np.ndarray, conf_logits: np.ndarray, gt_boxes: np.ndarray,
               weights: LossWeights, mask_logits: np.ndarray | None = None,
               gt_masks: np.ndarray | None = None, cues: str = "box+mask") -> np.ndarray:
    """Rows = predictions, columns = targets.

    cost = w_cls * focal(conf) + [w_l1 * L1 + w_giou * (1 - GIoU)]
           + [w_mask * mask focal + w_dice * dice]
    with the bracketed box / mask groups switched by ``cues``.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    k, m = len(boxes), len(gt_boxes)
    if m == 0 or k == 0:
        return np.zeros((k, m))
    pos, neg = _focal_terms(np.asarray(conf_logits, dtype=np.float64).reshape(-1))
    cost = weights.cls * np.repeat((pos - neg)[:, None], m, axis=1)
    if cues in ("box", "box+mask"):
        l1 = np.abs(boxes[:, None, :] - gt_boxes[None, :, :]).sum(-1)
        g = pairwise_giou(cxcywh_to_xyxy(boxes), cxcywh_to_xyxy(gt_boxes))
        cost = cost + weights.l1 * l1 + weights.giou * (1.0 - g)
    if cues in ("mask", "box+mask") and mask_logits is not None and gt_masks is not None:
        x = np.asarray(mask_logits, dtype=np.float64).reshape(k, -1)
        t = np.asarray(gt_masks, dtype=np.float64).reshape(m, -1)
        mpos, mneg = _focal_terms(x)
        focal = (mpos @ t.T + mneg @ (1.0 - t).T) / x.shape[1]
        p = _sigmoid(x)
        dice = 1.0 - (2.0 * p @ t.T + 1.0) / (p.sum(1)[:, None] + t.sum(1)[None, :] + 1.0)
        cost = cost + weights.mask * focal + weights.dice * dice
    return cost


def assign_labels(batch, outputs, gt: GroundTruthFrame, weights: LossWeights,
                  bindings: dict[int, int] | None = None, mask_logits: np.ndarray | None = None,
                  cues: str = "box+mask", targets: str = "referred") -> Assignment:
    """Pair decoder rows with ground-truth objects.

    Track rows keep the identity they are bound to (``bindings`` maps tracker
    id to ground-truth id) and are positive only while that object is a
    target this frame. Detect rows compete, via :func:`hungarian`, for the
    targets no track row claimed.

    With ``targets="referred"`` only referred objects are targets. With
    ``targets="visible"`` every visible object is, and the referred flag is
    left to the ref head (see :func:`total_loss`).
    """
    if targets not in ("referred", "visible"):
        raise InputError(f"targets must be 'referred' or 'visible', got {targets!r}")
    bindings = bindings or {}
    n_rows = len(batch)
    referred = np.flatnonzero(gt.referred) if targets == "referred" else np.arange(len(gt))
    col_of_id = {int(gt.ids[j]): int(j) for j in referred}
    rows, cols = [], []
    claimed = set()
    for r in batch.track_rows():
        gid = bindings.get(int(batch.track_ids[r]))
        j = col_of_id.get(gid) if gid is not None else None
        if j is not None and j not in claimed:
            rows.append(int(r))
            cols.append(j)
            claimed.add(j)
    open_cols = np.array([j for j in referred if j not in claimed], dtype=np.int64)
    det_rows = batch.detect_rows()
    if len(open_cols) and len(det_rows):
        cost = match_cost(
            outputs.boxes.data[det_rows],
            outputs.conf_logits.data[det_rows],
            gt.boxes[open_cols],
            weights,
            None if mask_logits is None else mask_logits[det_rows],
            None if gt.masks is None else gt.masks[open_cols],
            cues,
        )
        sub = hungarian(cost)
        rows.extend(det_rows[sub.rows].tolist())
        cols.extend(open_cols[sub.cols].tolist())
    rows_a = np.asarray(rows, dtype=np.int64)
    cols_a = np.asarray(cols, dtype=np.int64)
    order = np.argsort(rows_a)
    rows_a, cols_a = rows_a[order], cols_a[order]
    return Assignment(
        rows_a,
        cols_a,
        np.setdiff1d(np.arange(n_rows), rows_a),
        np.setdiff1d(np.arange(len(gt)), cols_a),
    )


# -- losses -----------------------------------------------------------------


def focal_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Element-wise sigmoid focal loss (not reduced)."""
    t = np.asarray(targets, dtype=np.float64)
    p = sigmoid(logits)
    ce = softplus(logits) - logits * t
    p_t = p * t + (1.0 - p) * (1.0 - t)
    alpha_t = FOCAL_ALPHA * t + (1.0 - FOCAL_ALPHA) * (1.0 - t)
    return ce * (1.0 - p_t) ** FOCAL_GAMMA * alpha_t


def dice_loss(probs, targets: np.ndarray):
    """1 - (2|P.T| + 1) / (|P| + |T| + 1) per row; rows are flattened masks."""
    if isinstance(probs, Tensor):
        p = probs.reshape(probs.shape[0], -1)
        t = np.asarray(targets, dtype=np.float64).reshape(p.shape)
        num = (p * t).sum(axis=1) * 2.0 + 1.0
        den = p.sum(axis=1) + t.sum(axis=1) + 1.0
        return 1.0 - num / den
    p = np.asarray(probs, dtype=np.float64).reshape(len(probs), -1)
    t = np.asarray(targets, dtype=np.float64).reshape(p.shape)
    return 1.0 - (2.0 * (p * t).sum(1) + 1.0) / (p.sum(1) + t.sum(1) + 1.0)


def total_loss(outputs, assignment: Assignment, gt: GroundTruthFrame, weights: LossWeights,
               mask_logits: Tensor | None = None) -> tuple[Tensor, dict[str, float]]:
    """Weighted loss for one frame, normalised by the number of positives.

    Assigned rows are conf positives; their ref target is the referred flag
    of the object they were assigned. ``mask_logits``, when given, holds one
    mask per assigned pair in ``assignment`` order.
    """
    n_rows = outputs.conf_logits.shape[0]
    targets = np.zeros(n_rows)
    targets[assignment.rows] = 1.0
    ref_targets = np.zeros(n_rows)
    ref_targets[assignment.rows] = gt.referred[assignment.cols]
    norm = 1.0 / max(len(assignment), 1)
    terms: dict[str, Tensor] = {
        "cls": focal_loss(outputs.conf_logits, targets).sum() * norm,
        "ref": focal_loss(outputs.ref_logits, ref_targets).sum() * norm,
    }
    if len(assignment):
        pred = outputs.boxes[assignment.rows]
        tgt = gt.boxes[assignment.cols]
        terms["l1"] = tabs(pred - tgt).sum() * norm
        g = giou_tensor(cxcywh_to_xyxy(pred), cxcywh_to_xyxy(tgt))
        terms["giou"] = (1.0 - g).sum() * norm
        if mask_logits is not None and gt.masks is not None:
            t = gt.masks[assignment.cols].reshape(len(assignment), -1).astype(np.float64)
            flat = mask_logits.reshape(len(assignment), -1)
            terms["mask"] = focal_loss(flat, t).mean(axis=1).sum() * norm
            terms["dice"] = dice_loss(sigmoid(flat), t).sum() * norm
    total = None
    for name, term in terms.items():
        w = getattr(weights, name)
        if w == 0:
            continue
        total = term * w if total is None else total + term * w
    if total is None:
        total = Tensor(0.0)
    return total, {name: float(term.data) for name, term in terms.items()}
