"""Synthetic referring-tracking benchmark: moving coloured shapes on a noisy
canvas, with attribute and motion expressions whose referent sets change
over time.

Dataset layout::

    <root>/manifest.json                 spec, template texts, sequence splits
    <root>/<seq>/frames/000000.png ...
    <root>/<seq>/objects.txt             every visible object (track format)
    <root>/<seq>/meta.json               attributes, motion states, expressions
    <root>/<seq>/gt_<k>.txt              referred objects of expression k
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, InputError
from .formats import TrackFile, TrackRecord
from .formats import load as load_tracks
from .matching import GroundTruthFrame

log = logging.getLogger(__name__)

COLORS = {
    "red": (0.90, 0.15, 0.15),
    "green": (0.15, 0.80, 0.20),
    "blue": (0.20, 0.30, 0.95),
    "yellow": (0.95, 0.90, 0.15),
}
PLURALS = {"circle": "circles", "square": "squares", "triangle": "triangles"}
MOTION_WORDS = {"left": "moving left", "right": "moving right"}
SUPERSAMPLE = 4
MIN_VISIBLE_PIXELS = 12


@dataclass
class SceneSpec:
    height: int = 64
    width: int = 64
    min_objects: int = 2
    max_objects: int = 4
    colors: tuple[str, ...] = ("red", "green", "blue", "yellow")
    shapes: tuple[str, ...] = ("circle", "square", "triangle")
    size_range: tuple[float, float] = (14.0, 22.0)
    speed_range: tuple[float, float] = (0.8, 2.5)
    static_prob: float = 0.2
    occlusion_prob: float = 0.3
    length: int = 8
    noise: float = 0.04
    n_train: int = 200
    n_test: int = 40
    expressions_per_sequence: int = 3
    motion_fraction: float = 0.2
    empty_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.height % 8 or self.width % 8:
            raise ConfigError("canvas height and width must be divisible by 8")
        if self.length < 2:
            raise ConfigError("sequence length must be at least 2")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ConfigError("object count range is empty")
        unknown = set(self.colors) - set(COLORS) or set(self.shapes) - set(PLURALS)
        if unknown:
            raise ConfigError(f"unknown attribute values: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class ExpressionTemplate:
    """Conjunction of optional attribute constraints, plus its surface text."""

    color: str | None = None
    shape: str | None = None
    motion: str | None = None  # "left" | "right"

    @property
    def text(self) -> str:
        noun = PLURALS[self.shape] if self.shape else "objects"
        words = ([self.color] if self.color else []) + [noun]
        if self.motion:
            words.append(MOTION_WORDS[self.motion])
        return " ".join(words)

    def matches(self, obj: dict, motion: str) -> bool:
        return ((self.color is None or obj["color"] == self.color)
                and (self.shape is None or obj["shape"] == self.shape)
                and (self.motion is None or motion == self.motion))

    def satisfiable(self, spec: SceneSpec) -> bool:
        return ((self.color is None or self.color in spec.colors)
                and (self.shape is None or self.shape in spec.shapes))


def default_templates(spec: SceneSpec) -> list[ExpressionTemplate]:
    out = [ExpressionTemplate(color=c) for c in spec.colors]
    out += [ExpressionTemplate(shape=s) for s in spec.shapes]
    out += [ExpressionTemplate(color=c, shape=s) for c in spec.colors for s in spec.shapes]
    out += [ExpressionTemplate(motion=m) for m in MOTION_WORDS]
    out += [ExpressionTemplate(color=c, motion=m) for c in spec.colors for m in MOTION_WORDS]
    out += [ExpressionTemplate(shape=s, motion=m) for s in spec.shapes for m in MOTION_WORDS]
    return out


# -- kinematics and rendering ---------------------------------------------------


def motion_state(vx: float) -> str:
    if vx < -0.25:
        return "left"
    if vx > 0.25:
        return "right"
    return "static"


def simulate(start: np.ndarray, velocity: np.ndarray, radius: float, length: int,
             width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions and per-frame velocities with elastic wall bounces.

    ``velocities[t]`` is the velocity carrying the object out of frame t; a
    bounce flips the component that would leave the canvas.
    """
    pos = np.array(start, dtype=np.float64)
    vel = np.array(velocity, dtype=np.float64)
    lo = np.array([radius, radius])
    hi = np.array([width - radius, height - radius])
    positions, velocities = [], []
    for _ in range(length):
        nxt = pos + vel
        for axis in range(2):
            if nxt[axis] < lo[axis] or nxt[axis] > hi[axis]:
                vel[axis] = -vel[axis]
        positions.append(pos.copy())
        velocities.append(vel.copy())
        pos = np.clip(pos + vel, lo, hi)
    return np.array(positions), np.array(velocities)


def _coverage(shape: str, cx: float, cy: float, size: float, height: int, width: int) -> np.ndarray:
    s = SUPERSAMPLE
    ys = (np.arange(height * s) + 0.5) / s
    xs = (np.arange(width * s) + 0.5) / s
    dx = xs[None, :] - cx
    dy = ys[:, None] - cy
    r = size / 2.0
    if shape == "circle":
        inside = dx**2 + dy**2 <= r**2
    elif shape == "square":
        half = 0.85 * r
        inside = (np.abs(dx) <= half) & (np.abs(dy) <= half)
    else:  # upward triangle: apex at top, base at bottom
        inside = (dy <= r) & (dy >= -r) & (np.abs(dx) <= (dy + r) / 2.0)
    return inside.reshape(height, s, width, s).mean(axis=(1, 3))


def render_frame(objects: list[dict], rng: np.random.Generator, spec: SceneSpec):
    """Composite objects back to front; returns (uint8 image, visible masks)."""
    h, w = spec.height, spec.width
    img = 0.3 + spec.noise * rng.standard_normal((h, w, 3))
    masks = []
    for obj in objects:
        alpha = _coverage(obj["shape"], obj["cx"], obj["cy"], obj["size"], h, w)
        color = np.array(COLORS[obj["color"]])
        img = img * (1.0 - alpha[..., None]) + color * alpha[..., None]
        masks.append(alpha >= 0.5)
    visible = []
    for i, m in enumerate(masks):
        above = np.zeros_like(m)
        for later in masks[i + 1 :]:
            above |= later
        visible.append(m & ~above)
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8), visible


def downsample_mask(mask: np.ndarray, stride: int = 4) -> np.ndarray:
    h, w = mask.shape
    return mask.reshape(h // stride, stride, w // stride, stride).mean(axis=(1, 3)) >= 0.5


def mask_box(mask: np.ndarray) -> np.ndarray:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return np.array([cols[0], rows[0], cols[-1] + 1 - cols[0], rows[-1] + 1 - rows[0]], dtype=np.float64)


# -- generation ---------------------------------------------------------------


def _sample_objects(rng: np.random.Generator, spec: SceneSpec) -> list[dict]:
    n = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    objects: list[dict] = []
    attempts = 0
    while len(objects) < n and attempts < 200:
        attempts += 1
        size = float(rng.uniform(*spec.size_range))
        r = size / 2.0
        cx = float(rng.uniform(r, spec.width - r))
        cy = float(rng.uniform(r, spec.height - r))
        if any(np.hypot(cx - o["start"][0], cy - o["start"][1]) < (r + o["size"] / 2) * 0.9
               for o in objects):
            continue
        if rng.random() < spec.static_prob:
            vel = np.zeros(2)
        else:
            speed = rng.uniform(*spec.speed_range)
            angle = rng.uniform(-np.pi / 3, np.pi / 3) + (np.pi if rng.random() < 0.5 else 0.0)
            vel = speed * np.array([np.cos(angle), np.sin(angle)])
        hidden: set[int] = set()
        if spec.length >= 4 and rng.random() < spec.occlusion_prob:
            start = int(rng.integers(1, spec.length - 2))
            hidden = set(range(start, start + int(rng.integers(1, 3))))
        objects.append({
            "id": len(objects) + 1,
            "color": str(rng.choice(list(spec.colors))),
            "shape": str(rng.choice(list(spec.shapes))),
            "size": size,
            "start": (cx, cy),
            "velocity": vel,
            "hidden": sorted(hidden),
        })
    return objects


def _choose_expressions(rng, templates, referred_by_template, spec) -> list[int]:
    def any_ref(k):
        return any(len(f) for f in referred_by_template[k])

    attribute = [k for k, t in enumerate(templates) if t.motion is None and any_ref(k)]
    motion = [k for k, t in enumerate(templates) if t.motion is not None and any_ref(k)]
    empty = [k for k in range(len(templates)) if not any_ref(k)]
    chosen: list[int] = []
    for _ in range(spec.expressions_per_sequence):
        u = rng.random()
        if u < spec.empty_fraction and empty:
            pool = empty
        elif u < spec.empty_fraction + spec.motion_fraction and motion:
            pool = motion
        else:
            pool = attribute or motion or empty
        remaining = [k for k in pool if k not in chosen] or pool
        chosen.append(int(rng.choice(remaining)))
    return chosen


def generate_sequence(rng: np.random.Generator, spec: SceneSpec, templates, root: Path, name: str,
                      objects: list[dict] | None = None) -> dict:
    """Render one sequence into ``root/name`` and return its metadata."""
    objects = objects if objects is not None else _sample_objects(rng, spec)
    seq_dir = root / name
    (seq_dir / "frames").mkdir(parents=True, exist_ok=True)
    tracks = {}
    for obj in objects:
        pos, vel = simulate(obj["start"], obj["velocity"], obj["size"] / 2, spec.length,
                            spec.width, spec.height)
        tracks[obj["id"]] = (pos, vel)

    all_records: list[TrackRecord] = []
    visible_ids: list[list[int]] = []
    motions: dict[int, list[str]] = {o["id"]: [] for o in objects}
    records_by_frame: list[dict[int, TrackRecord]] = []
    for t in range(spec.length):
        drawn = []
        for obj in objects:
            motions[obj["id"]].append(motion_state(tracks[obj["id"]][1][t][0]))
            if t in obj["hidden"]:
                continue
            cx, cy = tracks[obj["id"]][0][t]
            drawn.append({**obj, "cx": cx, "cy": cy})
        image, masks = render_frame(drawn, rng, spec)
        Image.fromarray(image).save(seq_dir / "frames" / f"{t:06d}.png")
        frame_records = {}
        for obj, m in zip(drawn, masks):
            if m.sum() < MIN_VISIBLE_PIXELS:
                continue
            rec = TrackRecord(t, obj["id"], mask_box(m), 1.0, 1.0, downsample_mask(m))
            frame_records[obj["id"]] = rec
            all_records.append(rec)
        records_by_frame.append(frame_records)
        visible_ids.append(sorted(frame_records))

    by_id = {o["id"]: o for o in objects}
    referred_by_template = [
        [[i for i in visible_ids[t] if tpl.matches(by_id[i], motions[i][t])] for t in range(spec.length)]
        for tpl in templates
    ]
    chosen = _choose_expressions(rng, templates, referred_by_template, spec)
    expressions = []
    mask_size = (spec.height // 4, spec.width // 4)
    frame_size = (spec.height, spec.width)
    for k, tk in enumerate(chosen):
        referred = referred_by_template[tk]
        gt = TrackFile(templates[tk].text, spec.length, frame_size, mask_size,
                       [records_by_frame[t][i] for t in range(spec.length) for i in referred[t]])
        gt.save(seq_dir / f"gt_{k}.txt")
        expressions.append({"text": templates[tk].text, "referred": referred})
    TrackFile("", spec.length, frame_size, mask_size, all_records).save(seq_dir / "objects.txt")
    meta = {
        "name": name,
        "length": spec.length,
        "objects": [{"id": o["id"], "color": o["color"], "shape": o["shape"],
                     "size": round(o["size"], 4), "hidden": o["hidden"]} for o in objects],
        "motion": {str(k): v for k, v in motions.items()},
        "has_occlusion": any(o["hidden"] for o in objects),
        "expressions": expressions,
    }
    (seq_dir / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return meta


def generate(spec: SceneSpec, root: str | Path, templates: list[ExpressionTemplate] | None = None) -> Path:
    """Render the train and test splits of a benchmark into ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    templates = templates if templates is not None else default_templates(spec)
    for tpl in templates:
        if not tpl.satisfiable(spec):
            log.warning("template %r can never match any object under this scene spec", tpl.text)
    rng = np.random.default_rng(spec.seed)
    sequences = []
    for split, count in (("train", spec.n_train), ("test", spec.n_test)):
        for i in range(count):
            name = f"{split}_{i:04d}"
            generate_sequence(rng, spec, templates, root, name)
            sequences.append({"name": name, "split": split})
    manifest = {
        "format": "tenrmot-dataset v1",
        "spec": spec.to_dict(),
        "templates": [t.text for t in templates],
        "sequences": sequences,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return root


# -- loading ------------------------------------------------------------------


@dataclass
class Sequence:
    name: str
    path: Path
    frames: np.ndarray  # T x H x W x 3 uint8
    objects: list[dict[int, TrackRecord]]  # per frame, id -> record
    expressions: list[dict]
    has_occlusion: bool
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    def image(self, t: int) -> np.ndarray:
        return self.frames[t].astype(np.float64) / 255.0

    def ground_truth(self, t: int, expr_index: int, flip: bool = False) -> GroundTruthFrame:
        h, w = self.frames.shape[1:3]
        recs = self.objects[t]
        ids = sorted(recs)
        referred = set(self.expressions[expr_index]["referred"][t])
        boxes = np.array([[(recs[i].box[0] + recs[i].box[2] / 2) / w,
                           (recs[i].box[1] + recs[i].box[3] / 2) / h,
                           recs[i].box[2] / w, recs[i].box[3] / h] for i in ids]).reshape(-1, 4)
        masks = np.array([recs[i].mask for i in ids]).reshape(len(ids), h // 4, w // 4)
        if flip:
            boxes[:, 0] = 1.0 - boxes[:, 0]
            masks = masks[:, :, ::-1]
        return GroundTruthFrame(np.array(ids), boxes, np.array([i in referred for i in ids]), masks)

    def gt_path(self, expr_index: int) -> Path:
        return self.path / f"gt_{expr_index}.txt"


def load_sequence(path: str | Path) -> Sequence:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise InputError(f"{path} is not a sequence directory (no meta.json)")
    meta = json.loads(meta_path.read_text())
    frame_files = sorted((path / "frames").glob("*.png"))
    frames = np.stack([np.asarray(Image.open(f).convert("RGB")) for f in frame_files])
    per_frame: list[dict[int, TrackRecord]] = [{} for _ in frame_files]
    for rec in load_tracks(path / "objects.txt").records:
        per_frame[rec.frame][rec.id] = rec
    return Sequence(meta["name"], path, frames, per_frame, meta["expressions"],
                    bool(meta["has_occlusion"]), meta)


@dataclass
class Dataset:
    root: Path
    spec: SceneSpec
    templates: list[str]
    splits: dict[str, list[str]]
    _cache: dict[str, Sequence] = field(default_factory=dict)

    def sequences(self, split: str) -> list[Sequence]:
        out = []
        for name in self.splits.get(split, []):
            if name not in self._cache:
                self._cache[name] = load_sequence(self.root / name)
            out.append(self._cache[name])
        return out


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise InputError(f"no manifest.json in {root}")
    manifest = json.loads(manifest_path.read_text())
    splits: dict[str, list[str]] = {}
    for entry in manifest["sequences"]:
        splits.setdefault(entry["split"], []).append(entry["name"])
    return Dataset(root, SceneSpec.from_dict(manifest["spec"]), manifest["templates"], splits)
