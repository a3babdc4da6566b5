"""Scoring a pipeline run against the simulator ground truth (the ``eval`` command)."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import Dataset, frame_name, manifest_hash, read_cloud_csv, read_csv
from .egomotion import undistort_ego
from .errors import DataError, PairingError, SchemaError
from .evaluation import CrispnessConfig, integrated_distance, trace_length, velocity_error, windowed_crispness
from .geom import radial_basis
from .pipeline import MEASUREMENTS_HEADER, TIMING_KEYS, TRACKS_HEADER
from .tracking import Box, associate, iou3d

METRICS_SCHEMA_VERSION = 1


@dataclass
class RunOutputs:
    tracks: np.ndarray  # rows of TRACKS_HEADER
    measurements: list  # dicts keyed by MEASUREMENTS_HEADER, None for absent cells
    corrected: dict  # frame index -> (positions, stamps, object_ids)
    manifest: dict
    timings: dict


def load_run(run_dir) -> RunOutputs:
    root = Path(run_dir)
    try:
        manifest = json.loads((root / "run_manifest.json").read_text(encoding="utf-8"))
        timings = json.loads((root / "timings.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read run outputs in {root}: {exc}") from exc
    rows = read_csv(root / "tracks_out.csv", TRACKS_HEADER)
    tracks = np.array([[float(v) for v in r] for r in rows]).reshape(-1, len(TRACKS_HEADER))
    meas = []
    for r in read_csv(root / "measurements.csv", MEASUREMENTS_HEADER):
        meas.append({k: (None if v == "" else float(v)) for k, v in zip(MEASUREMENTS_HEADER, r)})
    corrected = {}
    for k in range(int(manifest.get("frame_count", 0))):
        corrected[k] = read_cloud_csv(root / "frames_corrected" / frame_name(k))
    return RunOutputs(tracks, meas, corrected, manifest, timings)


def outputs_from_result(result, cfg) -> RunOutputs:
    """In-memory equivalent of writing a run with ``write_run`` and reading it back."""
    tracks = np.array(result.track_rows, dtype=float).reshape(-1, len(TRACKS_HEADER))
    meas = []
    for m in result.measurements:
        row = {"frame": m.frame, "stamp": m.stamp, "object_id": m.object_id, "n_points": m.n_points}
        for prefix, g in (("lidar", m.lidar), ("camera", m.camera), ("meas", m.measurement)):
            for axis, val in zip("xyz", (None, None, None) if g is None else g.mean):
                row[f"{prefix}_v{axis}"] = None if val is None else float(val)
        meas.append(row)
    corrected = {k: (c.positions, c.stamps, c.object_ids) for k, c in result.corrected.items()}
    timings = {k: {"mean_ms": float(np.mean(v)) if v else 0.0, "max_ms": float(np.max(v)) if v else 0.0} for k, v in result.timings_ms.items()}
    manifest = {"mode": cfg.mode, "config": cfg.to_dict(), "frame_count": len(corrected)}
    return RunOutputs(tracks, meas, corrected, manifest, timings)


def _split_error(err: np.ndarray, bases: list) -> tuple[float, float]:
    """RMSE of the radial component and of the tangential part of velocity errors."""
    if len(err) == 0:
        return 0.0, 0.0
    rad = np.array([b.radial @ e for b, e in zip(bases, err)])
    tan = np.array([np.hypot(b.tangential_1 @ e, b.tangential_2 @ e) for b, e in zip(bases, err)])
    return float(np.sqrt(np.mean(rad**2))), float(np.sqrt(np.mean(tan**2)))


def _match_tracks(ds: Dataset, tracks: np.ndarray, iou_min: float) -> dict:
    """Per object: list of (frame, track row index, iou) for every frame it is tracked."""
    out = {int(o): [] for o in np.unique(ds.gt.object_ids)}
    for k, frame in enumerate(ds.frames):
        gt = ds.gt.at(frame.start_stamp)
        rows = np.flatnonzero(tracks[:, 0] == k) if len(tracks) else np.zeros(0, dtype=int)
        t_boxes = [Box(tracks[r, 3:6], tracks[r, 6], *tracks[r, 7:10]) for r in rows]
        g_boxes = [Box(gt.centers[i], gt.yaws[i], *gt.dims[i]) for i in range(len(gt))]
        matches, _, _ = associate(t_boxes, g_boxes, iou_min)
        for ti, gi in matches:
            out[int(gt.object_ids[gi])].append((k, int(rows[ti]), iou3d(t_boxes[ti], g_boxes[gi])))
    return out


def _object_clouds(ds: Dataset, obj_id: int, corrected: Optional[dict]) -> list:
    """Per-frame clouds of one object, shifted so the gt box centre at frame start is the origin."""
    clouds = []
    for k, frame in enumerate(ds.frames):
        gt = ds.gt.at(frame.start_stamp).for_object(obj_id)
        if len(gt) == 0:
            continue
        if corrected is None:
            cloud = undistort_ego(frame)
            pos, ids = cloud.positions, cloud.object_ids
        else:
            pos, _, ids = corrected[k]
        pts = pos[ids == obj_id] - gt.centers[0]
        if len(pts):
            clouds.append(pts)
    return clouds


def evaluate(ds: Dataset, run: RunOutputs, sigma: float = 0.2, window: int = 3, iou_min: float = 0.25) -> dict:
    ccfg = CrispnessConfig(sigma)
    d = ds.frame_duration
    matched = _match_tracks(ds, run.tracks, iou_min)
    objects = {}
    for obj_id, pairs in matched.items():
        gt_obj = ds.gt.for_object(obj_id)
        entry: dict = {}
        clouds_u = _object_clouds(ds, obj_id, None)
        clouds_c = _object_clouds(ds, obj_id, run.corrected)
        entry["crispness_uncorrected"] = windowed_crispness(clouds_u, ccfg, window) if clouds_u else None
        entry["crispness_corrected"] = windowed_crispness(clouds_c, ccfg, window) if clouds_c else None

        # measurement velocities (per frame, before tracking)
        est, truth, bases = [], [], []
        for m in run.measurements:
            if int(m["object_id"]) != obj_id or m["meas_vx"] is None:
                continue
            k = int(m["frame"])
            g = ds.gt.at(ds.frames[k].start_stamp).for_object(obj_id)
            est.append([m["meas_vx"], m["meas_vy"], m["meas_vz"]])
            truth.append(g.velocities[0])
            bases.append(radial_basis(g.centers[0], ds.frames[k].ego_pose_start.translation))
        est, truth = np.array(est).reshape(-1, 3), np.array(truth).reshape(-1, 3)
        rmse, bias = velocity_error(est, truth)
        rad, tan = _split_error(est - truth, bases)
        entry["measurement_velocity"] = {"frames": len(est), "rmse": rmse, "rmse_radial": rad, "rmse_tangential": tan, "bias": bias.tolist()}

        # track velocities on the frames the object is tracked
        frames = [k for k, _, _ in pairs]
        t_est = np.array([run.tracks[r, 11:14] for _, r, _ in pairs]).reshape(-1, 3)
        t_truth, t_bases, centers = [], [], []
        for k in frames:
            g = ds.gt.at(ds.frames[k].start_stamp).for_object(obj_id)
            t_truth.append(g.velocities[0])
            centers.append(g.centers[0])
            t_bases.append(radial_basis(g.centers[0], ds.frames[k].ego_pose_start.translation))
        t_truth = np.array(t_truth).reshape(-1, 3)
        rmse, bias = velocity_error(t_est, t_truth)
        rad, tan = _split_error(t_est - t_truth, t_bases)
        entry["track_velocity"] = {"frames": len(t_est), "rmse": rmse, "rmse_radial": rad, "rmse_tangential": tan, "bias": bias.tolist()}

        ids = [int(run.tracks[r, 2]) for _, r, _ in pairs]
        counts = Counter(ids)
        entry["tracked_frames"] = len(pairs)
        entry["gt_frames"] = len(gt_obj)
        entry["track_ids"] = sorted(counts)
        entry["id_switches"] = sum(1 for a, b in zip(ids, ids[1:]) if a != b)
        entry["id_consistency"] = (max(counts.values()) / len(ids)) if ids else None
        entry["mean_iou"] = float(np.mean([p[2] for p in pairs])) if pairs else None

        if len(frames) >= 2:
            gaps = np.diff(frames) * d
            entry["integrated_distance"] = integrated_distance(t_est[:-1], gaps)
            entry["gt_trace_length"] = trace_length(np.array(centers))
            gt_len = entry["gt_trace_length"]
            entry["distance_relative_error"] = abs(entry["integrated_distance"] - gt_len) / gt_len if gt_len > 0 else None
        else:
            entry["integrated_distance"] = entry["gt_trace_length"] = entry["distance_relative_error"] = None
        objects[str(obj_id)] = entry

    timings = {k: run.timings.get(k, {}) for k in TIMING_KEYS}
    return {
        "schema_version": METRICS_SCHEMA_VERSION,
        "scenario": ds.meta.get("scenario"),
        "mode": run.manifest.get("mode"),
        "crispness_sigma": sigma,
        "crispness_window": window,
        "frame_count": len(ds.frames),
        "objects": objects,
        "timings_ms": timings,
    }


def evaluate_dirs(dataset_dir, run_dir, sigma: Optional[float] = None, window: Optional[int] = None) -> dict:
    from .dataset import load_dataset

    run = load_run(run_dir)
    expected = run.manifest.get("dataset_manifest_sha256")
    actual = manifest_hash(dataset_dir)
    if expected != actual:
        raise PairingError(f"run {run_dir} was produced from a different dataset (manifest hash {expected} != {actual})")
    cfg = run.manifest.get("config", {})
    return evaluate(
        load_dataset(dataset_dir),
        run,
        sigma if sigma is not None else cfg.get("crispness_sigma", 0.2),
        window if window is not None else cfg.get("crispness_window", 3),
        cfg.get("iou_min", 0.25),
    )


# ---------------------------------------------------------------- report


def _flatten(metrics: dict) -> dict:
    flat = {}

    def walk(prefix, node):
        if isinstance(node, dict):
            for k, v in node.items():
                walk(f"{prefix}.{k}" if prefix else k, v)
        elif isinstance(node, list):
            flat[prefix] = " ".join(f"{x:.6g}" if isinstance(x, float) else str(x) for x in node)
        else:
            flat[prefix] = node

    walk("", metrics)
    return flat


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def load_metrics(path) -> dict:
    p = Path(path)
    try:
        m = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read metrics file {p}: {exc}") from exc
    if m.get("schema_version") != METRICS_SCHEMA_VERSION:
        raise SchemaError(f"{p}: metrics schema version {m.get('schema_version')!r}, expected {METRICS_SCHEMA_VERSION}")
    return m


def comparison_table(metrics: list, labels: list) -> list[list[str]]:
    """Rows of [metric, value per input]; absent values are rendered as '-'."""
    flats = [_flatten(m) for m in metrics]
    keys = []
    for f in flats:
        for k in f:
            if k not in keys and k != "schema_version":
                keys.append(k)
    table = [["metric", *labels]]
    for k in keys:
        table.append([k, *(_cell(f.get(k)) for f in flats)])
    return table


def format_text(table: list[list[str]]) -> str:
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
