"""Ego-motion removal: every timed point goes to the global frame at its own stamp."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfRange
from .geom import interpolate_poses
from .sim import RawFrame


@dataclass
class GlobalCloud:
    """Global-frame points with absolute stamps and gt labels (-1 = none)."""

    positions: np.ndarray
    stamps: np.ndarray
    object_ids: np.ndarray

    def __len__(self):
        return len(self.stamps)

    def select(self, mask) -> "GlobalCloud":
        return GlobalCloud(self.positions[mask], self.stamps[mask], self.object_ids[mask])


def undistort_ego(frame: RawFrame) -> GlobalCloud:
    p0, p1 = frame.ego_pose_start, frame.ego_pose_end
    stamps = np.asarray(frame.stamps, dtype=float)
    if stamps.size and (stamps.min() < p0.stamp or stamps.max() > p1.stamp):
        raise OutOfRange(f"point stamps outside frame [{p0.stamp}, {p1.stamp}]")
    if not stamps.size:
        return GlobalCloud(np.zeros((0, 3)), stamps, np.asarray(frame.object_ids, dtype=np.int64))
    rots, trans = interpolate_poses(p0, p1, stamps)
    positions = np.einsum("nij,nj->ni", rots, frame.positions) + trans
    return GlobalCloud(positions, stamps.copy(), np.asarray(frame.object_ids).copy())
