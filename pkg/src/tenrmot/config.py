"""Model and run configuration, plus the key = value config file format."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class ModelConfig:
    d: int = 32
    n_detect: int = 20
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    alpha: float = 0.8
    conf_threshold: float = 0.7
    ref_threshold: float = 0.4
    miss_tolerance: int = 5
    height: int = 64
    width: int = 64
    stem_channels: int = 16
    c4: int = 32
    c8: int = 64
    use_ice: bool = True
    use_lgd: bool = True
    detach_track_content: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("d", "n_detect", "heads", "miss_tolerance", "height", "width",
                     "stem_channels", "c4", "c8"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("enc_layers", "dec_layers"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        for name in ("conf_threshold", "ref_threshold"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.d % 8:
            raise ConfigError("d must be a multiple of 8 for the sinusoidal encodings")
        if self.height % 8 or self.width % 8:
            raise ConfigError("frame height and width must be divisible by 8")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    dataset: str = "data/bench"
    out: str = "runs/default"
    seed: int = 0
    epochs: int = 20
    clip_len: int = 3
    lr: float = 1e-3
    backbone_lr_scale: float = 0.1
    encoder_lr_scale: float = 0.1
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    lr_drop_epoch: int = 16
    flip_prob: float = 0.5
    matching_cues: str = "box+mask"
    match_targets: str = "visible"
    w_cls: float = 5.0
    w_l1: float = 2.0
    w_giou: float = 2.0
    w_ref: float = 2.0
    w_mask: float = 5.0
    w_dice: float = 5.0
    max_train_sequences: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.matching_cues not in ("box", "mask", "box+mask"):
            raise ConfigError(f"matching_cues must be box, mask or box+mask, got {self.matching_cues!r}")
        if self.match_targets not in ("referred", "visible"):
            raise ConfigError(f"match_targets must be referred or visible, got {self.match_targets!r}")
        if self.clip_len < 1 or self.epochs < 0:
            raise ConfigError("clip_len must be >= 1 and epochs >= 0")

    def to_flat(self) -> dict:
        flat = {f"model.{k}": v for k, v in dataclasses.asdict(self.model).items()}
        for f in fields(self):
            if f.name != "model":
                flat[f.name] = getattr(self, f.name)
        return flat

    @classmethod
    def from_flat(cls, flat: dict) -> RunConfig:
        model_kw = {k[6:]: v for k, v in flat.items() if k.startswith("model.")}
        run_kw = {k: v for k, v in flat.items() if not k.startswith("model.")}
        return cls(model=ModelConfig(**model_kw), **run_kw)

    def replace(self, **overrides) -> RunConfig:
        flat = self.to_flat()
        for key, value in overrides.items():
            key = key.replace("__", ".")
            if key not in flat:
                raise ConfigError(f"unknown config key {key!r}")
            flat[key] = value
        return RunConfig.from_flat(flat)


def _coerce(raw: str, like):
    if isinstance(like, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw.strip()


def parse_overrides(pairs: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    """Apply string-valued ``key -> value`` overrides onto ``base``."""
    base = base or RunConfig()
    flat = base.to_flat()
    typed = {}
    for key, raw in pairs.items():
        key = key.strip().replace("__", ".")
        if key not in flat:
            raise ConfigError(f"unknown config key {key!r}")
        typed[key] = _coerce(raw, flat[key])
    return base.replace(**typed)


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    """Read a ``[run]`` / ``[model]`` key = value file."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    parser.read_string(text)
    pairs = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            pairs[f"model.{key}" if section == "model" else key] = value
    return parse_overrides(pairs, base)


def dump_config(cfg: RunConfig) -> str:
    lines = ["[run]"]
    flat = cfg.to_flat()
    lines += [f"{k} = {v}" for k, v in flat.items() if not k.startswith("model.")]
    lines += ["", "[model]"]
    lines += [f"{k[6:]} = {v}" for k, v in flat.items() if k.startswith("model.")]
    return "\n".join(lines) + "\n"
