"""Training configuration and its line-oriented ``key=value`` file format.

Precedence, lowest to highest: dataclass defaults, config file, explicit
overrides (command-line flags).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields

from .tokenizer import BACKBONES


@dataclass
class TrainConfig:
    lr_max: float = 2e-4
    weight_decay: float = 1e-4
    total_steps: int = 2000
    batch_size: int = 2
    n_points: int = 256
    k: int = 8
    d: int = 64
    gct_layers: int = 4
    heads: int = 1
    backbone: str = "edgeconv"
    local_transformer: bool = True
    edge_widths: tuple = (32, 64)
    dynamic_graph: bool = True
    seed: int = 0
    augment: bool = True
    loss_mean: bool = False
    loss_valid_only: bool = False
    warmup_frac: float = 0.3
    div_start: float = 25.0
    div_final: float = 1e4
    eval_every: int = 0
    ckpt_every: int = 0

    def __post_init__(self):
        self.edge_widths = tuple(int(w) for w in self.edge_widths)
        for name in ("total_steps", "gct_layers", "eval_every", "ckpt_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("batch_size", "n_points", "k", "d", "heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}")
        if not 0.0 < self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must lie in (0, 1)")
        if not (math.isfinite(self.lr_max) and math.isfinite(self.weight_decay)):
            raise ValueError("lr_max and weight_decay must be finite")
        if self.lr_max < 0 or self.weight_decay < 0:
            raise ValueError("lr_max and weight_decay must be >= 0")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["edge_widths"] = list(self.edge_widths)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_json().encode()).digest()

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))


_BOOL = {"1": True, "true": True, "on": True, "yes": True,
         "0": False, "false": False, "off": False, "no": False}


def parse_value(cls, key: str, text: str):
    """Convert ``text`` to the type of dataclass field ``key`` of ``cls``."""
    types = {f.name: f.default for f in fields(cls)}
    if key not in types:
        raise ValueError(f"unknown config key {key!r}")
    default = types[key]
    text = text.strip()
    if isinstance(default, bool):
        if text.lower() not in _BOOL:
            raise ValueError(f"{key}: expected a boolean, got {text!r}")
        return _BOOL[text.lower()]
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(int(v) for v in text.split(",") if v.strip())
    return text


def read_kv(path) -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments skipped."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def format_kv(values: dict) -> str:
    lines = []
    for key, value in values.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def load_config(cls, path=None, overrides: dict | None = None):
    raw = {}
    if path is not None:
        raw.update({k: parse_value(cls, k, v) for k, v in read_kv(path).items()})
    raw.update(overrides or {})
    return cls(**raw)
