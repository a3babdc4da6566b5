"""Built-in and file-defined simulation scenarios, and dataset generation.

All built-in scenes put box centres at sensor height, so the lidar sees the
vertical faces of every target.  There is no ground plane unless a scenario
asks for one.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .camera_velocity import object_depth
from .dataset import Dataset, GroundTruth
from .egomotion import undistort_ego
from .errors import ConfigError, DataError
from .geom import EgoTrajectory, Pose, yaw_rotation
from .sim import CameraModel, ScanPatternConfig, SimObject, generate_feature_tracks, generate_frame

CAR_HALF_EXTENTS = (2.25, 0.9, 0.75)

# Rosette frequencies: a slow azimuth sweep with a fast elevation sweep covers
# each vertical face of a car at 15-25 m with a few hundred returns per frame.
DEFAULT_SCAN = dict(
    mode="oscillating",
    frame_duration=0.1,
    points_per_frame=20_000,
    osc_freq_az=31.3,
    osc_freq_el=4100.3,
    range_noise_sigma=0.02,
)


@dataclass
class Scenario:
    name: str
    objects: list
    scan: ScanPatternConfig = field(default_factory=lambda: ScanPatternConfig(**DEFAULT_SCAN))
    camera: CameraModel = field(default_factory=CameraModel)
    n_frames: int = 20
    ego_speed: float = 0.0
    ego_yaw_rate: float = 0.0
    ground_z: Optional[float] = None
    n_tracks: int = 60
    outlier_fraction: float = 0.1
    pixel_noise_sigma: float = 0.5
    projection: str = "small_motion"
    # (frame index, object id) pairs whose detections the pipeline must drop
    masked_detections: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ConfigError("object ids must be unique")
        if any(i < 0 for i in ids):
            raise ConfigError("object ids must be non-negative")

    def noiseless(self) -> "Scenario":
        """Same scene with every noise source switched off."""
        return replace(
            self,
            scan=replace(self.scan, range_noise_sigma=0.0),
            pixel_noise_sigma=0.0,
            outlier_fraction=0.0,
        )

    @property
    def duration(self) -> float:
        return self.n_frames * self.scan.frame_duration


def _car(obj_id, center, yaw, velocity) -> SimObject:
    return SimObject(obj_id, CAR_HALF_EXTENTS, center, yaw, velocity)


def radial() -> Scenario:
    """A car driving straight at a static sensor along the boresight."""
    return Scenario("radial", [_car(1, (22.0, 0.0, 0.0), 0.0, (-5.0, 0.0, 0.0))])


def tangential() -> Scenario:
    """A car crossing in front of a static sensor."""
    return Scenario("tangential", [_car(1, (15.0, 5.0, 0.0), -math.pi / 2, (0.0, -5.0, 0.0))])


def turning() -> Scenario:
    """The sensor vehicle turns at 0.3 rad/s while a car drives ahead of it."""
    return Scenario(
        "turning",
        [_car(1, (18.0, 3.0, 0.0), math.atan2(2.0, 5.0), (5.0, 2.0, 0.0))],
        ego_speed=5.0,
        ego_yaw_rate=0.3,
    )


def rotating_lidar() -> Scenario:
    """The crossing-car scene scanned by a 16-ring spinning lidar."""
    scan = ScanPatternConfig(
        mode="rotating",
        frame_duration=0.1,
        points_per_frame=24_000,
        fov_v=math.radians(26.8),
        rot_rate=10.0,
        rings=16,
        # the azimuth seam sits behind the sensor, as on a roof-mounted spinning lidar
        osc_phase_az=math.pi,
        range_noise_sigma=0.02,
    )
    return Scenario(
        "rotating_lidar",
        [_car(1, (15.0, 5.0, 0.0), -math.pi / 2, (0.0, -5.0, 0.0))],
        scan=scan,
    )


def two_objects() -> Scenario:
    """An approaching car and a crossing car, well apart in azimuth."""
    return Scenario(
        "two_objects",
        [
            _car(1, (22.0, -6.0, 0.0), 0.0, (-5.0, 0.0, 0.0)),
            _car(2, (15.0, 3.0, 0.0), math.pi / 2, (0.0, 3.0, 0.0)),
        ],
    )


BUILTIN = {
    "radial": radial,
    "tangential": tangential,
    "turning": turning,
    "rotating_lidar": rotating_lidar,
    "two_objects": two_objects,
}


def _object_from_dict(d: dict, default_id: int) -> SimObject:
    allowed = {"id", "half_extents", "center0", "yaw", "velocity"}
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown object keys: {', '.join(unknown)}")
    try:
        return SimObject(
            int(d.get("id", default_id)),
            d.get("half_extents", CAR_HALF_EXTENTS),
            d["center0"],
            float(d.get("yaw", 0.0)),
            d.get("velocity", (0.0, 0.0, 0.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"object {default_id} is missing {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"object {default_id}: {exc}") from exc


def scenario_from_dict(d: dict, name: str = "custom") -> Scenario:
    """Build a scenario from a plain mapping (the custom scenario file format)."""
    known = {f.name for f in fields(Scenario)} - {"name"}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown scenario keys: {', '.join(unknown)}")
    kw = dict(d)
    if "objects" not in kw or not isinstance(kw["objects"], list):
        raise ConfigError("scenario needs an 'objects' list")
    kw["objects"] = [_object_from_dict(o, i + 1) for i, o in enumerate(kw["objects"])]
    try:
        if "scan" in kw:
            kw["scan"] = ScanPatternConfig(**{**DEFAULT_SCAN, **kw["scan"]})
        if "camera" in kw:
            from .dataset import camera_from_dict

            kw["camera"] = camera_from_dict(kw["camera"])
        kw["masked_detections"] = [tuple(int(v) for v in m) for m in kw.get("masked_detections", [])]
        return Scenario(name, **kw)
    except TypeError as exc:
        raise ConfigError(f"bad scenario: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad scenario: {exc}") from exc


def load_scenario(source: str) -> Scenario:
    """Resolve a built-in name or ``custom:<path to JSON file>``."""
    if source.startswith("custom:"):
        path = Path(source[len("custom:"):])
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read scenario file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return scenario_from_dict(data, name=path.stem)
    if source not in BUILTIN:
        raise ConfigError(f"unknown scenario {source!r}; choose from {', '.join(sorted(BUILTIN))} or custom:<file>")
    return BUILTIN[source]()


def ego_trajectory(sc: Scenario) -> EgoTrajectory:
    """Sensor poses at every frame boundary for a constant speed / yaw-rate drive."""
    poses = []
    for k in range(sc.n_frames + 1):
        t = k * sc.scan.frame_duration
        yaw = sc.ego_yaw_rate * t
        if abs(sc.ego_yaw_rate) > 1e-12:
            r = sc.ego_speed / sc.ego_yaw_rate
            pos = (r * math.sin(yaw), r * (1.0 - math.cos(yaw)), 0.0)
        else:
            pos = (sc.ego_speed * t, 0.0, 0.0)
        poses.append(Pose(yaw_rotation(yaw), pos, t))
    return EgoTrajectory(poses)


def generate_dataset(sc: Scenario, seed: int = 0) -> Dataset:
    """Simulate every frame, the camera tracks between frame boundaries and the ground truth.

    The depth passed to the track generator is the mean range of the object's
    ego-corrected returns in that frame, i.e. the same quantity the pipeline
    recovers, so the small-motion flow model is exact on zero-noise data.
    """
    ego = ego_trajectory(sc)
    frames, tracks = [], {}
    gt_rows = []
    for k in range(sc.n_frames):
        frame = generate_frame(sc.objects, ego, sc.scan, k, seed, ground_z=sc.ground_z)
        frames.append(frame)
        cloud = undistort_ego(frame)
        t0, t1 = frame.start_stamp, frame.end_stamp
        frame_tracks = []
        for obj in sc.objects:
            mask = cloud.object_ids == obj.id
            depth = object_depth(cloud.positions[mask], frame.ego_pose_start.translation) if mask.any() else None
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                frame_tracks += generate_feature_tracks(
                    obj,
                    sc.camera,
                    ego,
                    t0,
                    t1,
                    sc.n_tracks,
                    sc.outlier_fraction,
                    sc.pixel_noise_sigma,
                    rng_seed=seed * 100_003 + k,
                    depth=depth,
                    projection=sc.projection,
                )
            gt_rows.append((t0, obj.id, obj.center_at(t0), obj.yaw, obj.dims, obj.velocity))
        tracks[k] = frame_tracks
    gt = GroundTruth(
        np.array([r[0] for r in gt_rows]),
        np.array([r[1] for r in gt_rows], dtype=np.int64),
        np.array([r[2] for r in gt_rows]).reshape(-1, 3),
        np.array([r[3] for r in gt_rows]),
        np.array([r[4] for r in gt_rows]).reshape(-1, 3),
        np.array([r[5] for r in gt_rows]).reshape(-1, 3),
    )
    meta = {
        "scenario": sc.name,
        "masked_detections": [list(m) for m in sc.masked_detections],
        "pixel_noise_sigma": sc.pixel_noise_sigma,
        "outlier_fraction": sc.outlier_fraction,
        "projection": sc.projection,
    }
    return Dataset(sc.scan, sc.camera, frames, ego, tracks, gt, seed, meta)
