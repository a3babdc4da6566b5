"""Per-frame estimation pipeline and its on-disk outputs.

For every frame: ego undistortion, object extraction with dilated boxes, lidar
velocity, camera velocity (fused mode only), radial / tangential fusion, one
tracker step, and finally object-motion correction of the frame with the track
velocities.  Frames are processed strictly in order because the tracker is
stateful.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .camera_velocity import (
    camera_axes,
    camera_velocity_to_global,
    flow_stats,
    flow_to_camera_velocity,
    object_depth,
)
from .config import PipelineConfig
from .dataset import Dataset, write_csv, frame_name, manifest_hash, write_cloud_csv
from .egomotion import GlobalCloud, undistort_ego
from .errors import DataError, DeskewError, InsufficientInliers
from .evaluation import undistort_object
from .fusion import fuse, lidar_only, project_gaussian
from .gaussian import VelocityGaussian
from .geom import RadialBasis, radial_basis, yaw_rotation
from .lidar_velocity import CostWeights, ObjectObservation, build_voxels, estimate_velocity
from .tracking import Box, Detection, Tracker, TrackerConfig

TRACKS_HEADER = [
    "frame", "stamp", "track_id", "cx", "cy", "cz", "yaw", "l", "w", "h", "score",
    "vx", "vy", "vz", "var_vx", "var_vy", "var_vz",
]
MEASUREMENTS_HEADER = [
    "frame", "stamp", "object_id", "n_points",
    "lidar_vx", "lidar_vy", "lidar_vz",
    "camera_vx", "camera_vy", "camera_vz",
    "meas_vx", "meas_vy", "meas_vz",
]
TIMING_KEYS = ("camera_optical_flow", "point_cloud_optimization", "kf_tracking")


@dataclass
class ObjectMeasurement:
    frame: int
    stamp: float
    object_id: int
    n_points: int
    lidar: Optional[VelocityGaussian]
    camera: Optional[VelocityGaussian]
    measurement: Optional[VelocityGaussian]
    # radial / tangential axes the measurement was split along
    basis: Optional[RadialBasis] = None


@dataclass
class RunResult:
    track_rows: list = field(default_factory=list)
    corrected: dict = field(default_factory=dict)
    measurements: list = field(default_factory=list)
    timings_ms: dict = field(default_factory=lambda: {k: [] for k in TIMING_KEYS})
    notes: list = field(default_factory=list)


def extract_object(cloud: GlobalCloud, center, yaw, dims, velocity, t0: float, dilation: float) -> np.ndarray:
    """Mask of the points inside the dilated box swept along ``velocity`` since t0."""
    if len(cloud) == 0:
        return np.zeros(0, dtype=bool)
    rot = yaw_rotation(yaw)
    shift = (cloud.stamps - t0)[:, None] * np.asarray(velocity, float)
    local = (cloud.positions - np.asarray(center, float) - shift) @ rot
    half = 0.5 * dilation * np.asarray(dims, float)
    return np.all(np.abs(local) <= half, axis=1)


def _detection_box(center, yaw, dims, rng, cfg: PipelineConfig) -> Box:
    c = np.asarray(center, float) + rng.normal(0.0, cfg.det_pos_sigma, 3) if cfg.det_pos_sigma > 0 else np.asarray(center, float)
    y = yaw + (rng.normal(0.0, cfg.det_yaw_sigma) if cfg.det_yaw_sigma > 0 else 0.0)
    d = np.asarray(dims, float) + (rng.normal(0.0, cfg.det_dim_sigma, 3) if cfg.det_dim_sigma > 0 else 0.0)
    return Box(c, float(y), *np.maximum(d, 1e-3).tolist())


def _camera_measurement(ds: Dataset, k: int, obj_id: int, points, center, cfg: PipelineConfig) -> VelocityGaussian:
    frame = ds.frames[k]
    dt = frame.end_stamp - frame.start_stamp
    tracks = [t for t in ds.tracks.get(k, []) if t.object_id == obj_id]
    flow = flow_stats(tracks, dt, cfg.ransac_threshold, cfg.ransac_iters, rng_seed=cfg.seed * 1_000_003 + k)
    pose = frame.ego_pose_start
    depth = object_depth(points, pose.translation, cfg.depth_method)
    v_rel = flow_to_camera_velocity(flow, depth, ds.camera)
    axes = camera_axes(ds.camera, pose, center)
    lin, ang = ds.ego.velocity_at(frame.start_stamp)
    return camera_velocity_to_global(v_rel, pose, lin, ang, center, axes)


def run_pipeline(ds: Dataset, cfg: PipelineConfig) -> RunResult:
    cfg.validate()
    result = RunResult()
    tracker = Tracker(TrackerConfig(cfg.min_hits, cfg.max_misses, cfg.iou_min, cfg.kf))
    weights = CostWeights(cfg.weight_local, cfg.weight_global)
    masked = {tuple(int(v) for v in m) for m in ds.meta.get("masked_detections", [])}
    prev_stamp = None
    for k, frame in enumerate(ds.frames):
        if frame.index != k:
            raise DataError(f"frame {frame.index} found at position {k}")
        t0 = frame.start_stamp
        cloud = undistort_ego(frame)
        gt = ds.gt.at(t0)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, k, 11]))
        t_cam = t_lidar = 0.0
        detections, extracted = [], {}
        for i in range(len(gt)):
            obj_id = int(gt.object_ids[i])
            center, yaw, dims, vel = gt.centers[i], float(gt.yaws[i]), gt.dims[i], gt.velocities[i]
            box = _detection_box(center, yaw, dims, rng, cfg)
            mask = extract_object(cloud, center, yaw, dims, vel, t0, cfg.box_dilation)
            n_pts = int(mask.sum())
            extracted[obj_id] = mask
            lidar_g = camera_g = meas = basis = None
            if n_pts >= 4:
                pts, stamps = cloud.positions[mask], cloud.stamps[mask]
                tic = time.perf_counter()
                try:
                    obs = ObjectObservation(pts, stamps, t0)
                    lidar_g = estimate_velocity(obs, build_voxels(obs, cfg.voxel_size), weights)
                except DeskewError as exc:
                    result.notes.append(f"frame {k} object {obj_id}: lidar velocity unavailable ({exc})")
                t_lidar += time.perf_counter() - tic
                if lidar_g is not None:
                    basis = radial_basis(box.center, frame.ego_pose_start.translation)
                    lidar_dir = project_gaussian(lidar_g, basis)
                    meas = lidar_only(lidar_dir)
                    if cfg.mode == "fused":
                        tic = time.perf_counter()
                        try:
                            camera_g = _camera_measurement(ds, k, obj_id, pts, box.center, cfg)
                            meas = fuse(lidar_dir, project_gaussian(camera_g, basis))
                        except (InsufficientInliers, DeskewError) as exc:
                            result.notes.append(f"frame {k} object {obj_id}: camera velocity unavailable ({exc})")
                        t_cam += time.perf_counter() - tic
            result.measurements.append(ObjectMeasurement(k, t0, obj_id, n_pts, lidar_g, camera_g, meas, basis))
            if n_pts >= 4 and (k, obj_id) not in masked:
                detections.append(Detection(box, 1.0, meas, obj_id))

        tic = time.perf_counter()
        dt = None if prev_stamp is None else t0 - prev_stamp
        confirmed = tracker.step(detections, dt)
        t_track = time.perf_counter() - tic
        prev_stamp = t0
        for trk in sorted(confirmed, key=lambda t: t.id):
            b = trk.box
            var = np.diag(trk.cov)[8:11]
            result.track_rows.append((k, t0, trk.id, *b.center, b.yaw, b.l, b.w, b.h, float(trk.state[7]), *trk.velocity, *var))

        # object-motion correction with the freshest velocity available per object
        velocity_of = {det.object_id: trk.velocity for trk, det in tracker.last_matches}
        positions = cloud.positions.copy()
        for m in result.measurements:
            if m.frame != k:
                continue
            v = velocity_of.get(m.object_id)
            if v is None and m.measurement is not None:
                v = m.measurement.mean
            mask = extracted[m.object_id]
            if v is not None and mask.any():
                positions[mask] = undistort_object(cloud.positions[mask], cloud.stamps[mask], v, t0)
        result.corrected[k] = GlobalCloud(positions, cloud.stamps, cloud.object_ids)
        result.timings_ms["camera_optical_flow"].append(1e3 * t_cam)
        result.timings_ms["point_cloud_optimization"].append(1e3 * t_lidar)
        result.timings_ms["kf_tracking"].append(1e3 * t_track)
    return result


def _opt(v: Optional[VelocityGaussian]):
    return (None, None, None) if v is None else tuple(float(x) for x in v.mean)


def write_run(result: RunResult, ds_path, out_dir, cfg: PipelineConfig) -> None:
    out = Path(out_dir)
    try:
        (out / "frames_corrected").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    write_csv(out / "tracks_out.csv", TRACKS_HEADER, result.track_rows)
    rows = []
    for m in result.measurements:
        rows.append((m.frame, m.stamp, m.object_id, m.n_points, *_opt(m.lidar), *_opt(m.camera), *_opt(m.measurement)))
    write_csv(out / "measurements.csv", MEASUREMENTS_HEADER, rows)
    for k, cloud in result.corrected.items():
        write_cloud_csv(out / "frames_corrected" / frame_name(k), cloud.positions, cloud.stamps, cloud.object_ids)
    timings = {key: {"mean_ms": float(np.mean(v)) if v else 0.0, "max_ms": float(np.max(v)) if v else 0.0} for key, v in result.timings_ms.items()}
    manifest = {
        "dataset_manifest_sha256": manifest_hash(ds_path),
        "mode": cfg.mode,
        "config": cfg.to_dict(),
        "frame_count": len(result.corrected),
        "version": __version__,
        "notes": result.notes,
    }
    try:
        (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write run outputs in {out}: {exc}") from exc
