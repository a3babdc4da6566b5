"""Full 3D object velocity from one frame of timestamped lidar points.

The velocity ``v`` is the one that makes the corrected points ``P_i - dt_i v``
as compact as possible, both inside small voxels (local term) and over the
whole object (global term).  Because object rotation is ignored the cost is an
exact quadratic in ``v``: for every point set the centred quantities
``x_i = dt_i - mean(dt)`` and ``y_i = P_i - mean(P)`` give

    E(v) = sum_i || y_i - x_i v ||^2

so the minimiser solves a 3x3 linear system in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import IllConditioned, InvalidArgument, UnobservableVelocity
from .gaussian import VelocityGaussian

MIN_POINTS = 4


class CostWeights(NamedTuple):
    local: float = 1.0
    glob: float = 1.0


@dataclass
class ObjectObservation:
    """Ego-corrected points of one object in one frame."""

    positions: np.ndarray
    stamps: np.ndarray
    frame_start: float

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.stamps = np.asarray(self.stamps, dtype=float).reshape(-1)
        if len(self.positions) != len(self.stamps):
            raise InvalidArgument("positions and stamps differ in length")

    @property
    def delta_t(self) -> np.ndarray:
        return self.stamps - self.frame_start

    def __len__(self):
        return len(self.stamps)


@dataclass
class VoxelGrid:
    voxel_size: float
    cells: dict = field(default_factory=dict)
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_cells(self) -> int:
        return len(self.cells)


def build_voxels(obs: ObjectObservation, voxel_size: float) -> VoxelGrid:
    """Partition point indices by ``floor(position / voxel_size)``."""
    if not voxel_size > 0:
        raise InvalidArgument("voxel_size must be positive")
    if len(obs) == 0:
        return VoxelGrid(voxel_size)
    if np.isinf(voxel_size):
        keys = np.zeros((len(obs), 3), dtype=np.int64)
    else:
        keys = np.floor(obs.positions / voxel_size).astype(np.int64)
    uniq, labels = np.unique(keys, axis=0, return_inverse=True)
    labels = labels.reshape(-1)
    order = np.argsort(labels, kind="stable")
    splits = np.cumsum(np.bincount(labels, minlength=len(uniq)))[:-1]
    cells = {tuple(int(c) for c in key): idx for key, idx in zip(uniq, np.split(order, splits))}
    return VoxelGrid(voxel_size, cells, labels)


def _set_stats(labels, x, p, n_sets):
    counts = np.bincount(labels, minlength=n_sets).astype(float)
    mx = np.bincount(labels, weights=x, minlength=n_sets) / counts
    mp = np.stack([np.bincount(labels, weights=p[:, k], minlength=n_sets) for k in range(3)], axis=1) / counts[:, None]
    return counts, x - mx[labels], p - mp[labels]


def _centred(obs: ObjectObservation, grid: VoxelGrid):
    """Centred time offsets and positions for the local (per voxel) and global sets."""
    dt = obs.delta_t
    p = obs.positions
    _, xl, yl = _set_stats(grid.labels, dt, p, grid.n_cells)
    zeros = np.zeros(len(dt), dtype=np.int64)
    _, xg, yg = _set_stats(zeros, dt, p, 1)
    return xl, yl, xg, yg


def normal_equations(obs: ObjectObservation, grid: VoxelGrid, weights=CostWeights()):
    """Return (N, rhs, const) with cost(v) = v'Nv - 2 rhs'v + const."""
    w = CostWeights(*weights)
    xl, yl, xg, yg = _centred(obs, grid)
    a = w.local * (xl @ xl) + w.glob * (xg @ xg)
    rhs = w.local * (xl @ yl) + w.glob * (xg @ yg)
    const = w.local * float(np.sum(yl * yl)) + w.glob * float(np.sum(yg * yg))
    return a * np.eye(3), rhs, const


def cost_value(obs: ObjectObservation, grid: VoxelGrid, v, weights=CostWeights()) -> float:
    """Evaluate the local + global spread of the corrected points directly."""
    w = CostWeights(*weights)
    v = np.asarray(v, dtype=float)
    corrected = obs.positions - obs.delta_t[:, None] * v
    total = 0.0
    for idx in grid.cells.values():
        c = corrected[idx]
        total += w.local * float(np.sum((c - c.mean(axis=0)) ** 2))
    if len(corrected):
        total += w.glob * float(np.sum((corrected - corrected.mean(axis=0)) ** 2))
    return total


def cost_gradient(obs: ObjectObservation, grid: VoxelGrid, v, weights=CostWeights()) -> np.ndarray:
    n, rhs, _ = normal_equations(obs, grid, weights)
    return 2.0 * (n @ np.asarray(v, dtype=float) - rhs)


def estimate_velocity(obs: ObjectObservation, grid: VoxelGrid, weights=CostWeights()) -> VelocityGaussian:
    """Closed-form minimiser of the local + global cost, with its covariance.

    The covariance is the least-squares sandwich ``(sum_i c_i^2) S`` where
    ``c_i`` is each point's weight in the estimator and ``S`` is the 3x3
    residual covariance of the corrected points (per degree of freedom).  For a
    single point set this reduces to ``S / sum_i x_i^2``; with isotropic ``S``
    it is the familiar ``sigma^2 N^-1``.
    """
    w = CostWeights(*weights)
    if len(obs) < MIN_POINTS:
        raise InvalidArgument(f"need at least {MIN_POINTS} points, got {len(obs)}")
    dt = obs.delta_t
    if np.ptp(dt) <= 1e-6:
        raise UnobservableVelocity("all points share one timestamp; velocity is unobservable")
    xl, yl, xg, yg = _centred(obs, grid)
    n_mat, rhs, _ = normal_equations(obs, grid, w)
    cond = np.linalg.cond(n_mat) if n_mat[0, 0] > 0 else np.inf
    if not np.isfinite(cond) or cond > 1e10:
        evals, evecs = np.linalg.eigh(n_mat)
        raise IllConditioned(f"normal matrix condition number {cond:.3g}", null_direction=evecs[:, 0])
    v = np.linalg.solve(n_mat, rhs)

    rl = yl - xl[:, None] * v
    rg = yg - xg[:, None] * v
    scatter = w.local * (rl.T @ rl) + w.glob * (rg.T @ rg)
    n_pts = len(dt)
    dof = w.local * (n_pts - grid.n_cells) + w.glob * (n_pts - 1) - 1.0
    s_mat = scatter / dof if dof > 0 else scatter
    a = n_mat[0, 0]
    c = (w.local * xl + w.glob * xg) / a
    cov = float(c @ c) * s_mat
    cov = (cov + cov.T) / 2.0
    return VelocityGaussian(v, cov, "lidar")
