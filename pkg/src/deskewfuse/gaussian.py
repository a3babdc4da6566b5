"""Velocity Gaussians exchanged between the camera, lidar, fusion and tracking stages."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FRAME_TAGS = ("camera", "lidar", "fused")


@dataclass
class VelocityGaussian:
    mean: np.ndarray
    cov: np.ndarray
    frame_tag: str = "lidar"

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(3)
        self.cov = np.asarray(self.cov, dtype=float).reshape(3, 3)
        if self.frame_tag not in FRAME_TAGS:
            raise ValueError(f"unknown frame tag {self.frame_tag!r}")

    def is_valid(self, tol: float = 1e-12) -> bool:
        sym = np.allclose(self.cov, self.cov.T, atol=1e-12, rtol=1e-9)
        return bool(sym and np.linalg.eigvalsh((self.cov + self.cov.T) / 2).min() >= -tol)
