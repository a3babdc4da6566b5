"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Criteria that the implementation cannot meet are run at their stated tolerance
and allowed to fail; the reasons are recorded in the project's decision notes.
"""
import time
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest

from deskewfuse.config import PipelineConfig
from deskewfuse.egomotion import undistort_ego
from deskewfuse.evaluation import undistort_object
from deskewfuse.fusion import fuse, project_gaussian
from deskewfuse.geom import radial_basis
from deskewfuse.lidar_velocity import ObjectObservation, build_voxels, estimate_velocity
from deskewfuse.pipeline import _camera_measurement, run_pipeline
from deskewfuse.scenarios import BUILTIN, generate_dataset
from deskewfuse.scoring import evaluate, outputs_from_result

pytestmark = pytest.mark.acceptance

MOVING = ("radial", "tangential", "turning", "rotating_lidar", "two_objects")


def scenario(name, noiseless=False, **changes):
    sc = BUILTIN[name]()
    if noiseless:
        sc = sc.noiseless()
    return replace(sc, **changes) if changes else sc


@lru_cache(maxsize=None)
def dataset(name, seed=0, noiseless=False, masked=()):
    return generate_dataset(scenario(name, noiseless, masked_detections=list(masked)), seed)


@lru_cache(maxsize=None)
def metrics(name, seed=0, mode="fused", noiseless=False, masked=()):
    ds = dataset(name, seed, noiseless, masked)
    cfg = PipelineConfig(mode=mode, seed=seed)
    return evaluate(ds, outputs_from_result(run_pipeline(ds, cfg), cfg), cfg.crispness_sigma, cfg.crispness_window, cfg.iou_min)


def object_frames(ds, obj):
    """Ego-corrected labelled returns of one object, per frame."""
    for k, f in enumerate(ds.frames):
        c = undistort_ego(f)
        m = c.object_ids == obj.id
        if m.sum() >= 4:
            yield k, f, c.positions[m], c.stamps[m]


# ---------------------------------------------------------------- 1


def test_criterion_1_exact_recovery_zero_noise(record):
    worst_v, worst_closure = {}, 0.0
    for name in MOVING:
        sc = scenario(name, noiseless=True)
        ds = dataset(name, 0, True)
        errs = []
        for obj in sc.objects:
            for _, f, pts, stamps in object_frames(ds, obj):
                obs = ObjectObservation(pts, stamps, f.start_stamp)
                errs.append(np.linalg.norm(estimate_velocity(obs, build_voxels(obs, 0.5)).mean - obj.velocity))
                fixed = undistort_object(pts, stamps, obj.velocity, f.start_stamp)
                worst_closure = max(worst_closure, float(np.max(obj.distance_to_surface(fixed, f.start_stamp))))
        worst_v[name] = max(errs)

    sc = scenario("radial", noiseless=True)
    _, f, pts, stamps = next(object_frames(dataset("radial", 0, True), sc.objects[0]))
    idx = np.random.default_rng(0).choice(len(pts), min(200, len(pts)), replace=True)
    obs = ObjectObservation(pts[idx], stamps[idx], f.start_stamp)
    samples = []
    for _ in range(50):
        tic = time.perf_counter()
        estimate_velocity(obs, build_voxels(obs, 0.5))
        samples.append(time.perf_counter() - tic)
    runtime_ms = 1e3 * float(np.median(samples))

    v_ok = all(e <= 1e-6 for e in worst_v.values())
    ok = v_ok and worst_closure <= 1e-9 and runtime_ms <= 10.0
    detail = ", ".join(f"{k} {v:.3g}" for k, v in worst_v.items())
    record("1", ok, f"max |v-v_gt| m/s [{detail}] (<= 1e-6: {v_ok}); closure {worst_closure:.2e} m (<= 1e-9); "
                    f"200-point estimate {runtime_ms:.2f} ms (<= 10)")


# ---------------------------------------------------------------- 2


def test_criterion_2_noisy_recovery(record):
    cfg = PipelineConfig()
    results = {}
    for name in MOVING:
        errs, split = [], []
        min_pts = np.inf
        for seed in range(5):
            sc = scenario(name)
            sc = replace(sc, scan=replace(sc.scan, points_per_frame=3 * sc.scan.points_per_frame))
            ds = generate_dataset(sc, 100 + seed)
            rng = np.random.default_rng(seed)
            for obj in sc.objects:
                for k, f, pts, stamps in object_frames(ds, obj):
                    idx = rng.choice(len(pts), min(200, len(pts)), replace=False)
                    min_pts = min(min_pts, len(idx))
                    obs = ObjectObservation(pts[idx], stamps[idx], f.start_stamp)
                    center = obj.center_at(f.start_stamp)
                    basis = radial_basis(center, f.ego_pose_start.translation)
                    lidar = project_gaussian(estimate_velocity(obs, build_voxels(obs, cfg.voxel_size)), basis)
                    camera = _camera_measurement(ds, k, obj.id, pts[idx], center, cfg)
                    err = fuse(lidar, project_gaussian(camera, basis)).mean - obj.velocity
                    errs.append(err)
                    e = basis.matrix() @ err
                    split.append((e[0], np.hypot(e[1], e[2])))
        rmse = float(np.sqrt(np.mean(np.sum(np.square(errs), axis=1))))
        rad, tan = np.sqrt(np.mean(np.square(split), axis=0))
        results[name] = (rmse, len(errs), int(min_pts), rad, tan)
    ok = all(r[0] <= 0.2 for r in results.values())
    detail = ", ".join(f"{k} {r[0]:.3f} (radial {r[3]:.3f}, tangential {r[4]:.3f}; {r[1]} obj-frames of {r[2]} pts)"
                       for k, r in results.items())
    record("2", ok, f"fused per-frame velocity RMSE m/s (<= 0.2): {detail}")


# ---------------------------------------------------------------- 3


def test_criterion_3_fusion_ordering(record):
    wins = 0
    fused_rmse, lidar_rmse = [], []
    for seed in range(100):
        sc = scenario("tangential")
        ds = generate_dataset(sc, seed)
        per_mode = {}
        for mode in ("fused", "lidar_only"):
            cfg = PipelineConfig(mode=mode, seed=seed)
            out = outputs_from_result(run_pipeline(ds, cfg), cfg)
            per_mode[mode] = _track_tangential_rmse(ds, out)
        wins += per_mode["fused"] <= per_mode["lidar_only"]
        fused_rmse.append(per_mode["fused"])
        lidar_rmse.append(per_mode["lidar_only"])
    tangential_ok = wins >= 90

    crisp = {}
    for mode in ("fused", "lidar_only"):
        crisp[mode] = float(np.mean([metrics("radial", s, mode)["objects"]["1"]["crispness_corrected"] for s in range(5)]))
    rel = abs(crisp["fused"] - crisp["lidar_only"]) / crisp["lidar_only"]
    radial_ok = rel <= 0.10
    record("3", tangential_ok and radial_ok,
           f"tangential: fused <= lidar_only tangential RMSE in {wins}/100 seeds (>= 90; median {np.median(fused_rmse):.3f} vs "
           f"{np.median(lidar_rmse):.3f} m/s); radial crispness fused {crisp['fused']:.3f} vs lidar_only "
           f"{crisp['lidar_only']:.3f}, relative difference {100 * rel:.1f}% (<= 10%)")


def _track_tangential_rmse(ds, out):
    from deskewfuse.scoring import _match_tracks, _split_error

    pairs = _match_tracks(ds, out.tracks, 0.25)[1]
    err, bases = [], []
    for k, r, _ in pairs:
        g = ds.gt.at(ds.frames[k].start_stamp).for_object(1)
        err.append(out.tracks[r, 11:14] - g.velocities[0])
        bases.append(radial_basis(g.centers[0], ds.frames[k].ego_pose_start.translation))
    return _split_error(np.array(err), bases)[1] if err else np.inf


# ---------------------------------------------------------------- 4


def test_criterion_4_crispness_improvement(record):
    margins, clean = {}, {}
    for name in MOVING:
        noisy = metrics(name)
        ideal = metrics(name, noiseless=True)
        for oid, e in noisy["objects"].items():
            margins[f"{name}/{oid}"] = e["crispness_corrected"] - e["crispness_uncorrected"]
            clean[f"{name}/{oid}"] = ideal["objects"][oid]["crispness_corrected"]
    margin_ok = all(m >= 0.05 for m in margins.values())
    clean_ok = all(abs(c - 1.0) <= 1e-6 for c in clean.values())
    record("4", margin_ok and clean_ok,
           "corrected - uncorrected (>= 0.05): " + ", ".join(f"{k} {v:+.3f}" for k, v in margins.items())
           + f" [{margin_ok}]; zero-noise corrected (= 1 +- 1e-6): "
           + ", ".join(f"{k} {v:.3f}" for k, v in clean.items()) + f" [{clean_ok}]")


# ---------------------------------------------------------------- 5


def test_criterion_5_tracking(record):
    notes, ok = [], True
    ious = []
    for name in ("radial", "two_objects"):
        m = metrics(name)
        for oid, e in m["objects"].items():
            consistent = e["id_consistency"] == 1.0 and e["id_switches"] == 0 and len(e["track_ids"]) == 1
            ok &= consistent
            ious.append(e["mean_iou"])
            notes.append(f"{name}/{oid} ids {e['track_ids']} over {e['tracked_frames']}/{e['gt_frames']} frames")
    dropped = metrics("radial", masked=((10, 1),))["objects"]["1"]
    pairs_ok = len(dropped["track_ids"]) == 1 and dropped["id_switches"] == 0
    ok &= pairs_ok
    mean_iou = float(np.mean(ious))
    ok &= mean_iou >= 0.70
    record("5", ok, "; ".join(notes) + f"; frame-10 dropout keeps ids {dropped['track_ids']} [{pairs_ok}]; "
                    f"mean 3D IOU {mean_iou:.3f} (>= 0.70)")


# ---------------------------------------------------------------- 6


def test_criterion_6_integrated_distance(record):
    errs = {}
    for name in MOVING:
        for oid, e in metrics(name)["objects"].items():
            errs[f"{name}/{oid}"] = e["distance_relative_error"]
    ok = all(v is not None and v <= 0.02 for v in errs.values())
    record("6", ok, "relative distance error (<= 2%): " + ", ".join(f"{k} {100 * v:.2f}%" for k, v in errs.items()))


# ---------------------------------------------------------------- 7


def test_criterion_7_rotating_lidar(record):
    fused = metrics("rotating_lidar", mode="fused")["objects"]["1"]["crispness_corrected"]
    lidar = metrics("rotating_lidar", mode="lidar_only")["objects"]["1"]["crispness_corrected"]
    record("7", abs(fused - lidar) <= 0.02, f"crispness fused {fused:.3f} vs lidar_only {lidar:.3f} (|diff| <= 0.02)")


# ---------------------------------------------------------------- 8


def test_criterion_8_oracles(record):
    import itertools
    import math

    from scipy.spatial.transform import Rotation

    from deskewfuse.evaluation import CrispnessConfig, NeighborIndex, crispness
    from deskewfuse.fusion import fuse_gaussians
    from deskewfuse.geom import rodrigues_exp, rodrigues_log
    from deskewfuse.lidar_velocity import cost_gradient, cost_value
    from deskewfuse.sim import raycast_boxes
    from deskewfuse.tracking import hungarian
    from tests.test_lidar_velocity import batched_cost
    from tests.test_sim import box_triangles, mesh_ranges

    rng = np.random.default_rng(8)
    checks = {}

    t = rng.uniform(0, 0.1, 300)
    obs = ObjectObservation(rng.uniform(-1, 1, (300, 3)) + [12, 2, 0] + t[:, None] * [3, -1, 0.5], t, 0.0)
    grid = build_voxels(obs, 0.5)
    ok = True
    for v in rng.normal(0, 5, (20, 3)):
        g = cost_gradient(obs, grid, v)
        fd = np.array([(cost_value(obs, grid, v + 1e-4 * e) - cost_value(obs, grid, v - 1e-4 * e)) / 2e-4 for e in np.eye(3)])
        ok &= bool(np.allclose(g, fd, rtol=1e-6, atol=1e-6 * np.abs(g).max()))
    checks["gradient vs finite differences"] = ok

    v_hat = estimate_velocity(obs, grid).mean
    center = np.zeros(3)
    half, step = 10.0, 1.0
    while step >= 0.01 - 1e-12:
        ax = np.arange(-half, half + 1e-9, step)
        cand = center + np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
        center = cand[int(np.argmin(batched_cost(obs, grid, cand)))]
        half, step = 2 * step, step / 10
    checks["grid-search minimiser"] = bool(np.all(np.abs(center - v_hat) <= 0.01))

    ok = True
    for n in range(1, 7):
        cost = rng.uniform(size=(n, n))
        got = sum(cost[i, j] for i, j in hungarian(cost))
        best = min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
        ok &= abs(got - best) <= 1e-12
    checks["Hungarian vs permutations"] = ok

    from deskewfuse.sim import SimObject

    boxes = [SimObject(1, [2.25, 0.9, 0.75], [15, 2, 0], 0.4), SimObject(2, [1, 1, 1], [8, -3, 0.5], -0.7)]
    dirs = rng.normal(size=(2000, 3)) * [1, 0.4, 0.2] + [1, 0, 0]
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.zeros((2000, 3))
    ranges = np.min([raycast_boxes(origins, dirs, b, np.zeros(2000)) for b in boxes], axis=0)
    oracle = np.min([mesh_ranges(origins, dirs, box_triangles(b, 0.0)) for b in boxes], axis=0)
    hit = np.isfinite(oracle)
    checks["raycast vs triangle mesh"] = bool(np.array_equal(np.isfinite(ranges), hit) and np.allclose(ranges[hit], oracle[hit], atol=1e-9))

    pts, q = rng.normal(size=(500, 3)), rng.normal(size=(1000, 3))
    d, i = NeighborIndex(pts).query(q)
    checks["k-d tree vs linear scan"] = bool(np.array_equal(i, np.linalg.norm(q[:, None] - pts[None], axis=2).argmin(axis=1)))

    ok = True
    for r in Rotation.random(1000, random_state=8).as_matrix():
        ok &= bool(np.allclose(rodrigues_exp(rodrigues_log(r)), r, atol=1e-9))
    checks["Rodrigues round trip"] = ok

    ok = True
    for _ in range(200):
        a, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        s1, s2 = a @ a.T + 0.1 * np.eye(2), b @ b.T + 0.1 * np.eye(2)
        _, cov, _, _ = fuse_gaussians(np.zeros(2), s1, np.ones(2), s2)
        ok &= np.linalg.eigvalsh(s1 - cov).min() >= -1e-10 and np.linalg.eigvalsh(s2 - cov).min() >= -1e-10
    checks["fusion Loewner order"] = bool(ok)

    c = np.arange(20)[:, None] * np.array([[10.0, 0, 0]])
    checks["crispness closed form"] = abs(crispness([c, c + [0, 0.2, 0]], CrispnessConfig(0.2)) - (1 + math.exp(-0.5)) / 2) <= 1e-12

    record("8", all(checks.values()), ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items()))
