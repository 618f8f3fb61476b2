"""Self-contained JSON checkpoints.

Documents are written canonically (sorted keys, two-space indent, shortest
round-trip float repr), so ``save -> load -> save`` is byte-identical.
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Standardizer
from .model import ModelParams, config_from_dict

FORMAT_VERSION = 1


def dumps(obj):
    """Canonical JSON text used for every file this package writes."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


@dataclass
class Checkpoint:
    config: object
    params: ModelParams
    x_scaler: Optional[Standardizer] = None
    y_scaler: Optional[Standardizer] = None
    split: dict = field(default_factory=dict)

    @property
    def kind(self):
        return self.config.kind

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.config.kind,
            "config": self.config.to_dict(),
            "param_layout": [[name, list(shape)] for name, shape, _ in self.params.layout],
            "params": self.params.flat.tolist(),
            "seed": self.config.seed,
            "standardizer": {
                "x": self.x_scaler.to_dict() if self.x_scaler is not None else None,
                "y": self.y_scaler.to_dict() if self.y_scaler is not None else None,
            },
            "split": dict(self.split),
        }

    @classmethod
    def from_dict(cls, data):
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format_version {version!r}")
        config = config_from_dict(data["config"])
        layout = config.layout()
        stored = [(name, tuple(shape)) for name, shape in data["param_layout"]]
        if stored != [(name, shape) for name, shape, _ in layout]:
            raise ValueError("checkpoint parameter layout does not match its config")
        params = ModelParams(layout, np.array(data["params"], dtype=np.float64))
        std = data.get("standardizer") or {}
        xs = Standardizer.from_dict(std["x"]) if std.get("x") else None
        ys = Standardizer.from_dict(std["y"]) if std.get("y") else None
        return cls(config, params, xs, ys, dict(data.get("split") or {}))

    def dumps(self):
        return dumps(self.to_dict())

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
