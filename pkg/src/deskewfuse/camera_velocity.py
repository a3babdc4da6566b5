"""Tangential object velocity from 2D feature tracks.

Per object, the tracks give one image-plane flow Gaussian (RANSAC on a
constant-flow model, then the inlier sample mean / covariance).  The flow is
scaled by the object depth into a camera-relative 3D velocity whose third axis
(along the line of sight) carries no information, then rotated to the global
frame and compensated for the sensor's own motion.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInput, InsufficientInliers, InvalidArgument
from .gaussian import VelocityGaussian
from .geom import Pose, radial_basis
from .sim import CameraModel, FeatureTrack


@dataclass
class FlowGaussian2D:
    mean: np.ndarray
    cov: np.ndarray
    inlier_count: int
    inliers: Optional[np.ndarray] = None


def flow_stats(
    tracks: Sequence[FeatureTrack],
    dt: float,
    ransac_threshold: float = 1.0,
    ransac_iters: int = 100,
    rng_seed: int = 0,
) -> FlowGaussian2D:
    """Flow mean (px/s) and covariance over the RANSAC consensus set.

    A hypothesis is a single track's displacement; a track is an inlier when
    its displacement lies within ``ransac_threshold`` pixels of it.  When there
    are no more tracks than iterations every track is tried, so the result does
    not depend on the seed.
    """
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    if len(tracks) < 2:
        raise InsufficientInliers(f"need at least 2 tracks, got {len(tracks)}")
    disp = np.array([np.asarray(t.pixel_t1, float) - np.asarray(t.pixel_t0, float) for t in tracks])
    n = len(disp)
    if n <= ransac_iters:
        candidates = np.arange(n)
    else:
        candidates = np.random.default_rng(rng_seed).choice(n, size=ransac_iters, replace=False)

    best = None
    best_count = -1
    for i in candidates:
        mask = np.linalg.norm(disp - disp[i], axis=1) <= ransac_threshold
        count = int(mask.sum())
        if count > best_count:
            best, best_count = mask, count
    # one refinement pass around the consensus mean
    refined = np.linalg.norm(disp - disp[best].mean(axis=0), axis=1) <= ransac_threshold
    if refined.sum() >= best_count:
        best = refined
    if best.sum() < 2:
        raise InsufficientInliers(f"RANSAC kept {int(best.sum())} inlier(s); need at least 2")
    flows = disp[best] / dt
    mean = flows.mean(axis=0)
    cov = np.cov(flows, rowvar=False, ddof=1)
    return FlowGaussian2D(mean, np.atleast_2d(cov), int(best.sum()), best)


def flow_jacobian(depth: float, cam: CameraModel) -> np.ndarray:
    """The constant 3x2 map from image flow to camera-relative velocity."""
    return depth * np.array([[1.0 / cam.f_theta, 0.0], [0.0, 1.0 / cam.f_phi], [0.0, 0.0]])


def flow_to_camera_velocity(flow: FlowGaussian2D, depth: float, cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    if not depth > 0:
        raise InvalidArgument(f"depth must be positive, got {depth}")
    a = flow_jacobian(depth, cam)
    return a @ np.asarray(flow.mean, float), a @ np.asarray(flow.cov, float) @ a.T


def camera_axes(cam: CameraModel, sensor_pose: Pose, object_center_global) -> np.ndarray:
    """Columns: the (azimuthal, polar, line-of-sight) axes of an object, in the sensor frame.

    These are the camera-relative axes the flow is expressed in: image u runs
    along the azimuthal direction and image v along the polar direction.
    """
    cam_pose = cam.global_pose(sensor_pose)
    c_cam = cam_pose.inverse().apply(np.asarray(object_center_global, float))
    b = radial_basis(c_cam, np.zeros(3))
    return cam.pose_in_sensor.rotation @ np.column_stack([b.tangential_1, b.tangential_2, b.radial])


def camera_velocity_to_global(
    v_rel: tuple[np.ndarray, np.ndarray],
    sensor_pose: Pose,
    ego_linear_vel,
    ego_angular_vel,
    object_center_global,
    axes: Optional[np.ndarray] = None,
) -> VelocityGaussian:
    """Rotate a camera-relative velocity to global and add the sensor's own motion.

    The ego term ``v + w x (c - o)`` does not depend on the object, so it only
    shifts the mean.
    """
    mean_rel, cov_rel = v_rel
    rot = sensor_pose.rotation if axes is None else sensor_pose.rotation @ axes
    lever = np.asarray(object_center_global, float) - sensor_pose.translation
    v_ego = np.asarray(ego_linear_vel, float) + np.cross(np.asarray(ego_angular_vel, float), lever)
    mean = rot @ np.asarray(mean_rel, float) + v_ego
    cov = rot @ np.asarray(cov_rel, float) @ rot.T
    return VelocityGaussian(mean, (cov + cov.T) / 2.0, "camera")


def object_depth(points, sensor_origin, method: str = "mean") -> float:
    """Average distance from the sensor origin to an object's points."""
    points = np.asarray(points, float).reshape(-1, 3)
    if len(points) == 0:
        raise EmptyInput("object has no points")
    r = np.linalg.norm(points - np.asarray(sensor_origin, float), axis=1)
    if method == "mean":
        return float(r.mean())
    if method == "median":
        return float(np.median(r))
    raise InvalidArgument(f"unknown depth method {method!r}")
