"""Pipeline configuration: every tunable in one validated JSON document."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .tracking import KFNoise

MODES = ("fused", "lidar_only")
DEPTH_METHODS = ("mean", "median")


@dataclass
class PipelineConfig:
    mode: str = "fused"
    seed: int = 0
    # lidar velocity
    voxel_size: float = 0.5
    weight_local: float = 1.0
    weight_global: float = 1.0
    # object extraction: gt boxes scaled by this factor
    box_dilation: float = 1.2
    # camera
    ransac_threshold: float = 1.0
    ransac_iters: int = 100
    depth_method: str = "mean"
    # evaluation
    crispness_sigma: float = 0.2
    crispness_window: int = 3
    # tracking
    iou_min: float = 0.25
    min_hits: int = 2
    max_misses: int = 2
    kf: KFNoise = field(default_factory=KFNoise)
    # noise added to gt boxes to emulate a detector
    det_pos_sigma: float = 0.1
    det_yaw_sigma: float = 0.02
    det_dim_sigma: float = 0.05

    def validate(self) -> "PipelineConfig":
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode: must be one of {', '.join(MODES)}")
        if self.depth_method not in DEPTH_METHODS:
            problems.append(f"depth_method: must be one of {', '.join(DEPTH_METHODS)}")
        positive = ["voxel_size", "box_dilation", "ransac_threshold", "ransac_iters", "crispness_sigma", "crispness_window", "min_hits"]
        for name in positive:
            if not _is_number(getattr(self, name)) or not getattr(self, name) > 0:
                problems.append(f"{name}: must be positive")
        for name in ["weight_local", "weight_global", "max_misses", "det_pos_sigma", "det_yaw_sigma", "det_dim_sigma"]:
            if not _is_number(getattr(self, name)) or getattr(self, name) < 0:
                problems.append(f"{name}: must be non-negative")
        if _is_number(self.weight_local) and _is_number(self.weight_global) and self.weight_local + self.weight_global <= 0:
            problems.append("weight_local + weight_global: must be positive")
        if not _is_number(self.iou_min) or not 0 < self.iou_min <= 1:
            problems.append("iou_min: must lie in (0, 1]")
        for name in ["ransac_iters", "crispness_window", "min_hits", "max_misses", "seed"]:
            if not isinstance(getattr(self, name), int) or isinstance(getattr(self, name), bool):
                problems.append(f"{name}: must be an integer")
        for f in fields(KFNoise):
            val = getattr(self.kf, f.name)
            if not _is_number(val) or not val > 0:
                problems.append(f"kf.{f.name}: must be positive")
        if problems:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def config_from_dict(data: dict) -> PipelineConfig:
    """Strict parse: every unknown key is reported at once."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    top = {f.name for f in fields(PipelineConfig)}
    kf_keys = {f.name for f in fields(KFNoise)}
    unknown = [k for k in data if k not in top]
    kf_data = data.get("kf", {})
    if not isinstance(kf_data, dict):
        raise ConfigError("kf: must be an object")
    unknown += [f"kf.{k}" for k in kf_data if k not in kf_keys]
    if unknown:
        raise ConfigError("unknown configuration keys: " + ", ".join(sorted(unknown)))
    kw = {k: v for k, v in data.items() if k != "kf"}
    cfg = PipelineConfig(**kw, kf=KFNoise(**kf_data))
    return cfg.validate()


def load_config(path) -> PipelineConfig:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
    return config_from_dict(data)


def defaults_json() -> str:
    return json.dumps(PipelineConfig().to_dict(), indent=2, sort_keys=True)
