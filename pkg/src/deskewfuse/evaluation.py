"""Object-level undistortion and the quality metrics used to score a run."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput, InvalidArgument, MisalignedInput


@dataclass
class CrispnessConfig:
    sigma: float = 0.2
    max_neighbor_dist: float | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidArgument("sigma must be positive")
        if self.max_neighbor_dist is None:
            self.max_neighbor_dist = 5.0 * self.sigma


def undistort_object(positions, stamps, v, t0: float) -> np.ndarray:
    """Move every point back to where it was at the frame start: ``P - (t_i - t0) v``."""
    positions = np.asarray(positions, float).reshape(-1, 3)
    dt = np.asarray(stamps, float).reshape(-1) - t0
    return positions - dt[:, None] * np.asarray(v, float)


class NeighborIndex:
    """Exact nearest-neighbour queries over one point set (k-d tree)."""

    def __init__(self, points):
        self.points = np.asarray(points, float).reshape(-1, 3)
        if len(self.points) == 0:
            raise EmptyInput("cannot index an empty point set")
        self._tree = cKDTree(self.points)

    def query(self, queries, max_dist: float = np.inf):
        """Distances and indices of the nearest points; misses beyond max_dist give inf / len."""
        return self._tree.query(np.asarray(queries, float), k=1, distance_upper_bound=max_dist)


def crispness(clouds: Sequence, cfg: CrispnessConfig = CrispnessConfig()) -> float:
    """Mean nearest-neighbour Gaussian affinity between every ordered pair of clouds.

    Self pairs are included and score 1 per point, so a single cloud scores
    exactly 1 and the score lies in (0, 1].
    """
    clouds = [np.asarray(c, float).reshape(-1, 3) for c in clouds]
    if not clouds:
        raise EmptyInput("need at least one cloud")
    if any(len(c) == 0 for c in clouds):
        raise EmptyInput("every cloud must be non-empty")
    t = len(clouds)
    indices = [NeighborIndex(c) for c in clouds]
    total = 0.0
    for i, ci in enumerate(clouds):
        for j in range(t):
            if i == j:
                total += 1.0
                continue
            d, _ = indices[j].query(ci, cfg.max_neighbor_dist)
            g = np.exp(-0.5 * (d / cfg.sigma) ** 2)
            total += float(np.mean(np.where(np.isfinite(d), g, 0.0)))
    return total / (t * t)


def windowed_crispness(clouds: Sequence, cfg: CrispnessConfig = CrispnessConfig(), window: int = 3) -> float:
    """Average crispness over sliding windows of consecutive clouds."""
    clouds = [c for c in clouds if len(c)]
    if not clouds:
        raise EmptyInput("no non-empty clouds")
    if len(clouds) <= window:
        return crispness(clouds, cfg)
    return float(np.mean([crispness(clouds[k:k + window], cfg) for k in range(len(clouds) - window + 1)]))


def velocity_error(estimated, truth) -> tuple[float, np.ndarray]:
    """RMSE of the velocity vector error and the per-axis mean signed error."""
    est = np.asarray(estimated, float).reshape(-1, 3)
    gt = np.asarray(truth, float).reshape(-1, 3)
    if est.shape != gt.shape:
        raise MisalignedInput(f"{len(est)} estimates vs {len(gt)} ground-truth velocities")
    if len(est) == 0:
        return 0.0, np.zeros(3)
    err = est - gt
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1)))), err.mean(axis=0)


def integrated_distance(velocities, dt) -> float:
    """Path length obtained by integrating speed over the frames."""
    v = np.asarray(velocities, float).reshape(-1, 3)
    dt = np.broadcast_to(np.asarray(dt, float), (len(v),))
    return float(np.sum(np.linalg.norm(v, axis=1) * dt))


def trace_length(centers) -> float:
    """Length of the polyline through successive box centres."""
    c = np.asarray(centers, float).reshape(-1, 3)
    if len(c) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(c, axis=0), axis=1)))
