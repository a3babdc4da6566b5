"""Synthetic oscillating / rotating lidar + camera scenes with exact ground truth.

Every lidar return carries its own acquisition stamp; objects move at constant
velocity while the frame is being scanned, which is exactly what produces the
intra-frame distortion the rest of the package removes.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgument, MissingPose, OutOfRange
from .geom import EgoTrajectory, Pose, interpolate_poses, radial_basis, yaw_rotation


@dataclass
class ScanPatternConfig:
    mode: str = "oscillating"
    frame_duration: float = 0.1
    points_per_frame: int = 10_000
    fov_h: float = math.radians(81.7)
    fov_v: float = math.radians(25.1)
    osc_freq_az: float = 97.0
    osc_freq_el: float = 331.0
    osc_phase_az: float = 0.0
    osc_phase_el: float = 0.0
    rot_rate: float = 10.0
    rings: int = 16
    range_noise_sigma: float = 0.0
    max_range: float = 200.0

    def __post_init__(self):
        if self.mode not in ("oscillating", "rotating"):
            raise InvalidArgument(f"unknown scan mode {self.mode!r}")
        if not self.frame_duration > 0:
            raise InvalidArgument("frame_duration must be positive")
        if self.points_per_frame < 1:
            raise InvalidArgument("points_per_frame must be >= 1")
        if self.range_noise_sigma < 0:
            raise InvalidArgument("range_noise_sigma must be non-negative")
        if self.rings < 1:
            raise InvalidArgument("rings must be >= 1")
        if self.mode == "oscillating" and _near_small_fraction(self.osc_freq_az, self.osc_freq_el):
            raise InvalidArgument("osc_freq_az / osc_freq_el must not be a small-integer ratio p/q with q <= 4")

    @property
    def point_period(self) -> float:
        return self.frame_duration / self.points_per_frame


def _near_small_fraction(a: float, b: float, tol: float = 1e-9) -> bool:
    if b == 0:
        return True
    ratio = a / b
    for q in range(1, 5):
        if abs(ratio * q - round(ratio * q)) < tol:
            return True
    return False


@dataclass
class SimObject:
    id: int
    half_extents: np.ndarray
    center0: np.ndarray
    yaw: float = 0.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(3)
        self.center0 = np.asarray(self.center0, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        if np.any(self.half_extents <= 0):
            raise InvalidArgument("half_extents must be positive")

    def center_at(self, t):
        t = np.asarray(t, dtype=float)
        return self.center0 + t[..., None] * self.velocity if t.ndim else self.center0 + float(t) * self.velocity

    @property
    def rotation(self) -> np.ndarray:
        return yaw_rotation(self.yaw)

    @property
    def dims(self) -> np.ndarray:
        """(l, w, h) full extents."""
        return 2.0 * self.half_extents

    def distance_to_surface(self, points, t: float) -> np.ndarray:
        """Unsigned distance from points to the box surface at time t."""
        q = (np.atleast_2d(points) - self.center_at(t)) @ self.rotation
        d = np.abs(q) - self.half_extents
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
        inside = np.minimum(d.max(axis=1), 0.0)
        return np.where(outside > 0, outside, -inside)


@dataclass
class CameraModel:
    """Equiangular camera: pixel offsets are proportional to azimuth / elevation.

    Camera frame axes follow the sensor convention (x forward, y left, z up);
    image u grows to the right and v grows downward.
    """

    f_theta: float = 1000.0
    f_phi: float = 1000.0
    cx: float = 760.0
    cy: float = 284.0
    width: int = 1520
    height: int = 568
    pose_in_sensor: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        if not (self.f_theta > 0 and self.f_phi > 0):
            raise InvalidArgument("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise InvalidArgument("principal point must lie inside the image")

    def project(self, points_cam) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points_cam, dtype=float))
        az = np.arctan2(-p[:, 1], p[:, 0])
        el = np.arctan2(-p[:, 2], np.hypot(p[:, 0], p[:, 1]))
        return np.column_stack([self.cx + self.f_theta * az, self.cy + self.f_phi * el])

    def in_image(self, pixels) -> np.ndarray:
        px = np.atleast_2d(pixels)
        return (px[:, 0] >= 0) & (px[:, 0] <= self.width) & (px[:, 1] >= 0) & (px[:, 1] <= self.height)

    def global_pose(self, sensor_pose: Pose) -> Pose:
        return sensor_pose.compose(self.pose_in_sensor)


@dataclass
class RawFrame:
    """One lidar frame: sensor-frame points with absolute stamps and gt labels (-1 = none)."""

    index: int
    start_stamp: float
    positions: np.ndarray
    stamps: np.ndarray
    object_ids: np.ndarray
    ego_pose_start: Pose
    ego_pose_end: Pose

    def __len__(self):
        return len(self.stamps)

    @property
    def end_stamp(self) -> float:
        return self.ego_pose_end.stamp


@dataclass
class FeatureTrack:
    object_id: int
    pixel_t0: np.ndarray
    pixel_t1: np.ndarray
    is_outlier: bool = False


# ---------------------------------------------------------------- scanning


def _scan_angles(cfg: ScanPatternConfig, t: np.ndarray):
    if cfg.mode == "oscillating":
        az = 0.5 * cfg.fov_h * np.sin(2 * np.pi * cfg.osc_freq_az * t + cfg.osc_phase_az)
        el = 0.5 * cfg.fov_v * np.sin(2 * np.pi * cfg.osc_freq_el * t + cfg.osc_phase_el)
    else:
        az = np.mod(2 * np.pi * cfg.rot_rate * t + cfg.osc_phase_az + np.pi, 2 * np.pi) - np.pi
        k = np.floor(t / cfg.point_period + 0.5).astype(np.int64)
        ring_el = np.linspace(-0.5 * cfg.fov_v, 0.5 * cfg.fov_v, cfg.rings) if cfg.rings > 1 else np.zeros(1)
        el = ring_el[np.mod(k, cfg.rings)]
    return az, el


def scan_directions(cfg: ScanPatternConfig, t_in_frame) -> np.ndarray:
    """Unit rays in the sensor frame for an array of in-frame times."""
    t = np.asarray(t_in_frame, dtype=float)
    if np.any(t < 0) or np.any(t > cfg.frame_duration):
        raise OutOfRange("scan time outside the frame")
    az, el = _scan_angles(cfg, t)
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=-1)


def scan_direction(cfg: ScanPatternConfig, t_in_frame: float) -> np.ndarray:
    return scan_directions(cfg, np.array([t_in_frame]))[0]


def scan_azimuth(cfg: ScanPatternConfig, t_in_frame) -> np.ndarray:
    return _scan_angles(cfg, np.asarray(t_in_frame, dtype=float))[0]


# ---------------------------------------------------------------- ray casting


def raycast_boxes(origins, dirs, obj: SimObject, times) -> np.ndarray:
    """Vectorised slab test; returns ranges (inf where the ray misses)."""
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    times = np.broadcast_to(np.asarray(times, dtype=float), (max(len(origins), len(dirs)),))
    rot = obj.rotation
    centers = obj.center0 + times[:, None] * obj.velocity
    o = (origins - centers) @ rot
    d = dirs @ rot
    d = np.where(d == 0.0, 1e-300, d)
    h = obj.half_extents
    with np.errstate(over="ignore"):
        t1 = (-h - o) / d
        t2 = (h - o) / d
    t_near = np.minimum(t1, t2).max(axis=1)
    t_far = np.maximum(t1, t2).min(axis=1)
    hit = (t_far >= t_near) & (t_far > 0)
    rng = np.where(t_near > 0, t_near, t_far)
    return np.where(hit, rng, np.inf)


def raycast_box(origin, direction, obj: SimObject, t: float) -> Optional[tuple[np.ndarray, float]]:
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-6:
        raise InvalidArgument("ray direction must be unit length")
    r = raycast_boxes(origin, direction, obj, t)[0]
    if not np.isfinite(r):
        return None
    return np.asarray(origin, dtype=float) + r * direction, float(r)


def raycast_ground(origins, dirs, ground_z: float) -> np.ndarray:
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (ground_z - origins[:, 2]) / dirs[:, 2]
    return np.where((dirs[:, 2] < 0) & (r > 0), r, np.inf)


# ---------------------------------------------------------------- frames


def frame_pattern(cfg: ScanPatternConfig, t0: float) -> ScanPatternConfig:
    """The pattern of a frame starting at t0: the scanner never stops between frames.

    Both mirror phases keep running, so consecutive frames of an oscillating
    lidar trace different rosettes.  A spinning lidar with an integer number of
    turns per frame is unaffected.
    """
    return replace(
        cfg,
        osc_phase_az=float(np.mod(cfg.osc_phase_az + 2 * np.pi * (cfg.osc_freq_az if cfg.mode == "oscillating" else cfg.rot_rate) * t0, 2 * np.pi)),
        osc_phase_el=float(np.mod(cfg.osc_phase_el + 2 * np.pi * cfg.osc_freq_el * t0, 2 * np.pi)) if cfg.mode == "oscillating" else cfg.osc_phase_el,
    )


def frame_seed(rng_seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(rng_seed), int(index), int(stream)]))


def _boundary_poses(ego: EgoTrajectory, t0: float, t1: float) -> tuple[Pose, Pose]:
    """Frame start / end poses, snapping to stored ego poses that sit on the boundaries."""
    def at(t):
        i = int(np.argmin(np.abs(np.asarray(ego.stamps) - t)))
        if abs(ego.stamps[i] - t) <= 1e-9:
            return ego.poses[i]
        p = ego.pose_at(min(max(t, ego.start), ego.end))
        return Pose(p.rotation, p.translation, t)

    p0, p1 = at(t0), at(t1)
    if p0.stamp != t0:
        p0 = Pose(p0.rotation, p0.translation, t0)
    return p0, p1


def generate_frame(
    scene: Sequence[SimObject],
    ego: EgoTrajectory,
    cfg: ScanPatternConfig,
    index: int,
    rng_seed: int,
    ground_z: Optional[float] = None,
    start_stamp: Optional[float] = None,
) -> RawFrame:
    t0 = index * cfg.frame_duration if start_stamp is None else start_stamp
    t1 = t0 + cfg.frame_duration
    if t0 < ego.start - 1e-12 or t1 > ego.end + 1e-9:
        raise MissingPose(f"ego trajectory does not cover frame {index} [{t0}, {t1}]")
    pose_start, pose_end = _boundary_poses(ego, t0, t1)
    rel_t = np.arange(cfg.points_per_frame) * cfg.point_period
    stamps = t0 + rel_t
    dirs_s = scan_directions(frame_pattern(cfg, t0), rel_t)
    rots, trans = interpolate_poses(pose_start, pose_end, stamps)
    dirs_g = np.einsum("nij,nj->ni", rots, dirs_s)

    best = np.full(len(stamps), np.inf)
    label = np.full(len(stamps), -1, dtype=np.int64)
    for obj in scene:
        r = raycast_boxes(trans, dirs_g, obj, stamps)
        closer = r < best
        best = np.where(closer, r, best)
        label = np.where(closer, obj.id, label)
    if ground_z is not None:
        r = raycast_ground(trans, dirs_g, ground_z)
        closer = r < best
        best = np.where(closer, r, best)
        label = np.where(closer, -1, label)

    keep = np.isfinite(best) & (best <= cfg.max_range)
    rng = frame_seed(rng_seed, index)
    noise = rng.normal(0.0, cfg.range_noise_sigma, len(stamps)) if cfg.range_noise_sigma > 0 else 0.0
    ranges = (best + noise)[keep]
    positions = dirs_s[keep] * ranges[:, None]
    return RawFrame(
        index=index,
        start_stamp=t0,
        positions=positions,
        stamps=stamps[keep],
        object_ids=label[keep],
        ego_pose_start=pose_start,
        ego_pose_end=pose_end,
    )


# ---------------------------------------------------------------- camera


_FACE_NORMALS = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)


def _sample_visible_surface(obj: SimObject, t: float, viewpoint, n: int, rng) -> np.ndarray:
    rot = obj.rotation
    c = obj.center_at(t)
    h = obj.half_extents
    v_local = rot.T @ (np.asarray(viewpoint, dtype=float) - c)
    faces, areas = [], []
    for nrm in _FACE_NORMALS:
        ax = int(np.argmax(np.abs(nrm)))
        if nrm[ax] * v_local[ax] > h[ax]:
            others = [i for i in range(3) if i != ax]
            faces.append((ax, nrm[ax], others))
            areas.append(4 * h[others[0]] * h[others[1]])
    if not faces:
        return np.zeros((0, 3))
    areas = np.asarray(areas)
    pick = rng.choice(len(faces), size=n, p=areas / areas.sum())
    local = rng.uniform(-1, 1, size=(n, 3)) * h
    for i, (ax, sign, _) in enumerate(faces):
        local[pick == i, ax] = sign * h[ax]
    return local @ rot.T + c


def generate_feature_tracks(
    obj: SimObject,
    cam: CameraModel,
    ego: EgoTrajectory,
    t0: float,
    t1: float,
    n_tracks: int,
    outlier_fraction: float,
    pixel_noise_sigma: float,
    rng_seed: int,
    depth: Optional[float] = None,
    projection: str = "small_motion",
) -> list[FeatureTrack]:
    """Emit the tracks a KLT tracker would produce for one object between t0 and t1.

    ``small_motion`` applies one rigid image translation per object,
    ``f * v_tangential * dt / depth``, with the tangential axes taken from the
    object's radial basis in the camera frame.  ``perspective`` re-projects
    every anchor after the object and camera moved.
    """
    if n_tracks < 1:
        raise InvalidArgument("n_tracks must be >= 1")
    if not 0 <= outlier_fraction < 0.5:
        raise InvalidArgument("outlier_fraction must be in [0, 0.5)")
    if projection not in ("small_motion", "perspective"):
        raise InvalidArgument(f"unknown projection {projection!r}")
    rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), int(obj.id), 7]))
    dt = t1 - t0
    cam0 = cam.global_pose(ego.pose_at(t0))
    cam1 = cam.global_pose(ego.pose_at(t1))
    inv0, inv1 = cam0.inverse(), cam1.inverse()

    if projection == "small_motion":
        lin, ang = ego.velocity_at(t0)
        sensor0 = ego.pose_at(t0)
        c0 = obj.center_at(t0)
        v_ego = lin + np.cross(ang, c0 - sensor0.translation)
        v_rel = cam0.rotation.T @ (obj.velocity - v_ego)
        c_cam = inv0.apply(c0)
        basis = radial_basis(c_cam, np.zeros(3))
        d = float(np.linalg.norm(c_cam)) if depth is None else float(depth)
        shift = dt * np.array([cam.f_theta * (v_rel @ basis.tangential_1), cam.f_phi * (v_rel @ basis.tangential_2)]) / d

    anchors_px0 = np.zeros((0, 2))
    anchors_px1 = np.zeros((0, 2))
    for _ in range(8):
        cand = _sample_visible_surface(obj, t0, cam0.translation, 4 * n_tracks, rng)
        if len(cand) == 0:
            break
        px0 = cam.project(inv0.apply(cand))
        if projection == "small_motion":
            px1 = px0 + shift
        else:
            moved = cand + dt * obj.velocity
            px1 = cam.project(inv1.apply(moved))
        ok = cam.in_image(px0) & cam.in_image(px1) & (inv0.apply(cand)[:, 0] > 0)
        anchors_px0 = np.vstack([anchors_px0, px0[ok]])
        anchors_px1 = np.vstack([anchors_px1, px1[ok]])
        if len(anchors_px0) >= n_tracks:
            break
    if len(anchors_px0) == 0:
        warnings.warn(f"object {obj.id} not visible in the camera between {t0} and {t1}", stacklevel=2)
        return []
    anchors_px0 = anchors_px0[:n_tracks]
    anchors_px1 = anchors_px1[:n_tracks]
    n = len(anchors_px0)
    if pixel_noise_sigma > 0:
        anchors_px1 = anchors_px1 + rng.normal(0.0, pixel_noise_sigma, size=(n, 2))
        anchors_px1[:, 0] = np.clip(anchors_px1[:, 0], 0, cam.width)
        anchors_px1[:, 1] = np.clip(anchors_px1[:, 1], 0, cam.height)
    n_out = int(round(outlier_fraction * n))
    outlier = np.zeros(n, dtype=bool)
    if n_out:
        idx = rng.choice(n, size=n_out, replace=False)
        outlier[idx] = True
        anchors_px1[idx] = rng.uniform([0, 0], [cam.width, cam.height], size=(n_out, 2))
    return [FeatureTrack(obj.id, anchors_px0[i].copy(), anchors_px1[i].copy(), bool(outlier[i])) for i in range(n)]
