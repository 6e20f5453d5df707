"""Track-query lifecycle: momentum content updates, anchor carry-over,
births from detect rows and deaths after consecutive misses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import Tensor


def update_track_query(e_prev, q_prev, alpha: float):
    """Blend the latest output embedding into the running content query:
    ``alpha * e_prev + (1 - alpha) * q_prev``. Works on arrays or tensors."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    return e_prev * alpha + q_prev * (1.0 - alpha)


@dataclass
class TrackState:
    id: int
    content: Tensor | np.ndarray
    anchor: np.ndarray
    last_conf: float = 0.0
    last_ref: float = 0.0
    miss_count: int = 0
    age: int = 1
    gt_id: int | None = None  # training-time binding to a ground-truth identity

    @property
    def visible(self) -> bool:
        return self.miss_count == 0


@dataclass
class TrackSet:
    tracks: list[TrackState] = field(default_factory=list)
    next_id: int = 1

    def __len__(self) -> int:
        return len(self.tracks)

    def __iter__(self):
        return iter(self.tracks)

    @property
    def ids(self) -> list[int]:
        return [t.id for t in self.tracks]

    def contents(self) -> list:
        return [t.content for t in self.tracks]

    def anchors(self) -> np.ndarray:
        return np.array([t.anchor for t in self.tracks]).reshape(len(self.tracks), 4)


def _passes(conf: float, ref: float, conf_threshold: float, ref_threshold: float) -> bool:
    return conf >= conf_threshold and ref >= ref_threshold


def propagate(tracks: TrackSet, embeddings, boxes: np.ndarray, conf: np.ndarray, ref: np.ndarray,
              alpha: float, conf_threshold: float = 0.7, ref_threshold: float = 0.4,
              miss_tolerance: int = 5, detach: bool = False) -> TrackSet:
    """Advance every track by one frame using its decoder row.

    ``embeddings`` (P x d), ``boxes`` (P x 4), ``conf`` and ``ref`` (P) must
    follow the order of ``tracks``. Tracks reaching ``miss_tolerance``
    consecutive sub-threshold frames are dropped.
    """
    n = len(tracks)
    if not (len(boxes) == len(conf) == len(ref) == n) or (n and embeddings.shape[0] != n):
        raise ContractError(f"decoder rows do not align with {n} tracks")
    survivors = []
    for i, t in enumerate(tracks.tracks):
        row = embeddings[i]
        if detach and isinstance(row, Tensor):
            row = row.detach()
        prev = t.content.detach() if detach and isinstance(t.content, Tensor) else t.content
        hit = _passes(float(conf[i]), float(ref[i]), conf_threshold, ref_threshold)
        state = TrackState(
            id=t.id,
            content=update_track_query(row, prev, alpha),
            anchor=np.array(boxes[i], dtype=np.float64),
            last_conf=float(conf[i]),
            last_ref=float(ref[i]),
            miss_count=0 if hit else t.miss_count + 1,
            age=t.age + 1,
            gt_id=t.gt_id,
        )
        if state.miss_count < miss_tolerance:
            survivors.append(state)
    return TrackSet(survivors, tracks.next_id)


def spawn(tracks: TrackSet, embeddings, boxes: np.ndarray, conf: np.ndarray, ref: np.ndarray,
          conf_threshold: float = 0.7, ref_threshold: float = 0.4) -> list[TrackState]:
    """Turn every detect row passing both thresholds into a new track.

    Appends the births to ``tracks`` (consuming fresh ids) and returns them.
    """
    born = []
    for i in range(len(conf)):
        if not _passes(float(conf[i]), float(ref[i]), conf_threshold, ref_threshold):
            continue
        state = TrackState(
            id=tracks.next_id,
            content=embeddings[i],
            anchor=np.array(boxes[i], dtype=np.float64),
            last_conf=float(conf[i]),
            last_ref=float(ref[i]),
        )
        tracks.next_id += 1
        tracks.tracks.append(state)
        born.append(state)
    return born
