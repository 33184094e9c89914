"""Model and run configuration."""

import json
from dataclasses import asdict, dataclass, fields

from ..errors import SpecError


@dataclass
class ModelConfig:
    image_size: int = 64
    c_h: int = 32
    c_k: int = 16
    c_v: int = 32
    c_d: int = 32
    c_eps: int = 32
    num_queries: int = 8
    num_layers: int = 3
    heads: int = 2
    points: int = 4
    num_classes: int = 3
    capacity: int = 16
    interval: int = 5
    topk: int = 20
    bootstrap_ratio: float = 0.25
    bootstrap_warmup: int = 50
    seed: int = 0
    use_qe: bool = True
    use_mpf: bool = True
    # training
    lr: float = 0.05
    momentum: float = 0.9
    clip_norm: float = 5.0
    is_weight: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("image_size", "c_h", "c_k", "c_v", "c_d", "c_eps", "num_queries", "num_layers",
                     "heads", "points", "num_classes", "capacity", "interval", "topk"):
            if getattr(self, name) <= 0:
                raise SpecError(f"{name} must be positive, got {getattr(self, name)}")
        if self.image_size % 32:
            raise SpecError(f"image_size must be divisible by 32, got {self.image_size}")
        if self.c_h != self.c_d:
            raise SpecError("the key hidden width c_h must equal the query width c_d")
        if self.c_d % self.heads or self.c_h % self.heads:
            raise SpecError("channel widths must be divisible by the head count")
        if not 0.0 < self.bootstrap_ratio <= 1.0:
            raise SpecError("bootstrap_ratio must lie in (0, 1]")

    def to_json(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **kw):
        return ModelConfig(**{**asdict(self), **kw})
