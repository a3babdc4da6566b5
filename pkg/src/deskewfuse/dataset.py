"""On-disk dataset bundle.

Layout (UTF-8, LF newlines)::

    manifest.json            sensor / camera configs, frame count, duration, seed
    frames/000000.csv        x,y,z,stamp,object_id   (sensor frame, absolute stamps)
    ego.csv                  stamp,qw,qx,qy,qz,tx,ty,tz   (one row per frame boundary)
    tracks/000000.csv        object_id,u0,v0,u1,v1,is_outlier
    gt.csv                   stamp,object_id,cx,cy,cz,yaw,l,w,h,vx,vy,vz

Reals are written with ``repr`` precision so a reload is exact.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, SchemaError
from .geom import EgoTrajectory, Pose, matrix_to_quaternion, quaternion_to_matrix
from .sim import CameraModel, FeatureTrack, RawFrame, ScanPatternConfig

SCHEMA_VERSION = 1

FRAME_HEADER = ["x", "y", "z", "stamp", "object_id"]
EGO_HEADER = ["stamp", "qw", "qx", "qy", "qz", "tx", "ty", "tz"]
TRACK_HEADER = ["object_id", "u0", "v0", "u1", "v1", "is_outlier"]
GT_HEADER = ["stamp", "object_id", "cx", "cy", "cz", "yaw", "l", "w", "h", "vx", "vy", "vz"]


@dataclass
class GroundTruth:
    """Per-frame object states; one row per (frame, object)."""

    stamps: np.ndarray
    object_ids: np.ndarray
    centers: np.ndarray
    yaws: np.ndarray
    dims: np.ndarray
    velocities: np.ndarray

    def __len__(self):
        return len(self.stamps)

    def at(self, stamp: float, tol: float = 1e-9) -> "GroundTruth":
        m = np.abs(self.stamps - stamp) <= tol
        return GroundTruth(self.stamps[m], self.object_ids[m], self.centers[m], self.yaws[m], self.dims[m], self.velocities[m])

    def for_object(self, object_id: int) -> "GroundTruth":
        m = self.object_ids == object_id
        return GroundTruth(self.stamps[m], self.object_ids[m], self.centers[m], self.yaws[m], self.dims[m], self.velocities[m])

    @classmethod
    def empty(cls) -> "GroundTruth":
        return cls(np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))


@dataclass
class Dataset:
    scan: ScanPatternConfig
    camera: CameraModel
    frames: list
    ego: EgoTrajectory
    tracks: dict
    gt: GroundTruth
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def frame_duration(self) -> float:
        return self.scan.frame_duration


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    try:
        path.write_text(buf.getvalue(), encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def read_csv(path: Path, header) -> list[list[str]]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0] != list(header):
        raise SchemaError(f"{path}: expected header {','.join(header)}")
    return rows[1:]


def _pose_to_dict(p: Pose) -> dict:
    return {"quaternion": [float(v) for v in matrix_to_quaternion(p.rotation)], "translation": [float(v) for v in p.translation]}


def _pose_from_dict(d: dict) -> Pose:
    return Pose(quaternion_to_matrix(d["quaternion"]), d["translation"], 0.0)


def camera_to_dict(cam: CameraModel) -> dict:
    d = {k: v for k, v in asdict(cam).items() if k != "pose_in_sensor"}
    d["pose_in_sensor"] = _pose_to_dict(cam.pose_in_sensor)
    return d


def camera_from_dict(d: dict) -> CameraModel:
    d = dict(d)
    pose = _pose_from_dict(d.pop("pose_in_sensor")) if "pose_in_sensor" in d else Pose.identity()
    return CameraModel(pose_in_sensor=pose, **d)


def frame_name(index: int) -> str:
    return f"{index:06d}.csv"


def export_dataset(ds: Dataset, path) -> None:
    root = Path(path)
    try:
        (root / "frames").mkdir(parents=True, exist_ok=True)
        (root / "tracks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory {root}: {exc}") from exc
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "frame_count": len(ds.frames),
        "frame_duration": ds.scan.frame_duration,
        "seed": int(ds.seed),
        "scan": asdict(ds.scan),
        "camera": camera_to_dict(ds.camera),
        "meta": ds.meta,
    }
    try:
        (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {root / 'manifest.json'}: {exc}") from exc
    for fr in ds.frames:
        rows = (
            (p[0], p[1], p[2], s, int(o)) for p, s, o in zip(fr.positions, fr.stamps, fr.object_ids)
        )
        write_csv(root / "frames" / frame_name(fr.index), FRAME_HEADER, rows)
    ego_rows = []
    for p in ds.ego:
        q = matrix_to_quaternion(p.rotation)
        ego_rows.append((p.stamp, *q, *p.translation))
    write_csv(root / "ego.csv", EGO_HEADER, ego_rows)
    for fr in ds.frames:
        trk = ds.tracks.get(fr.index, [])
        rows = ((t.object_id, *t.pixel_t0, *t.pixel_t1, bool(t.is_outlier)) for t in trk)
        write_csv(root / "tracks" / frame_name(fr.index), TRACK_HEADER, rows)
    g = ds.gt
    gt_rows = (
        (g.stamps[i], int(g.object_ids[i]), *g.centers[i], g.yaws[i], *g.dims[i], *g.velocities[i]) for i in range(len(g))
    )
    write_csv(root / "gt.csv", GT_HEADER, gt_rows)


def manifest_hash(path) -> str:
    try:
        data = (Path(path) / "manifest.json").read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read manifest in {path}: {exc}") from exc
    return hashlib.sha256(data).hexdigest()


def read_manifest(path) -> dict:
    p = Path(path) / "manifest.json"
    try:
        manifest = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {p}: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"{p}: unsupported schema version {manifest.get('schema_version')!r}")
    return manifest


def read_cloud_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = read_csv(Path(path), FRAME_HEADER)
    if not rows:
        return np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int64)
    arr = np.array([[float(v) for v in r[:4]] for r in rows])
    ids = np.array([int(r[4]) for r in rows], dtype=np.int64)
    return arr[:, :3], arr[:, 3], ids


def write_cloud_csv(path, positions, stamps, object_ids) -> None:
    rows = ((p[0], p[1], p[2], s, int(o)) for p, s, o in zip(positions, stamps, object_ids))
    write_csv(Path(path), FRAME_HEADER, rows)


def load_dataset(path) -> Dataset:
    root = Path(path)
    manifest = read_manifest(root)
    scan = ScanPatternConfig(**manifest["scan"])
    camera = camera_from_dict(manifest["camera"])
    ego_rows = read_csv(root / "ego.csv", EGO_HEADER)
    poses = []
    for r in ego_rows:
        v = [float(x) for x in r]
        poses.append(Pose(quaternion_to_matrix(v[1:5]), v[5:8], v[0]))
    ego = EgoTrajectory(poses)
    n = int(manifest["frame_count"])
    if len(poses) < n + 1:
        raise DataError(f"{root / 'ego.csv'}: {len(poses)} poses for {n} frames")
    frames, tracks = [], {}
    for k in range(n):
        pos, stamps, ids = read_cloud_csv(root / "frames" / frame_name(k))
        p0, p1 = poses[k], poses[k + 1]
        frames.append(RawFrame(k, p0.stamp, pos, stamps, ids, p0, p1))
        trk_rows = read_csv(root / "tracks" / frame_name(k), TRACK_HEADER)
        tracks[k] = [
            FeatureTrack(int(r[0]), np.array([float(r[1]), float(r[2])]), np.array([float(r[3]), float(r[4])]), r[5] == "1")
            for r in trk_rows
        ]
    gt_rows = read_csv(root / "gt.csv", GT_HEADER)
    if gt_rows:
        a = np.array([[float(x) for x in r] for r in gt_rows])
        gt = GroundTruth(a[:, 0], a[:, 1].astype(np.int64), a[:, 2:5], a[:, 5], a[:, 6:9], a[:, 9:12])
    else:
        gt = GroundTruth.empty()
    return Dataset(scan, camera, frames, ego, tracks, gt, int(manifest.get("seed", 0)), manifest.get("meta", {}))
