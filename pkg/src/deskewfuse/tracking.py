"""11-state constant-velocity Kalman tracker with 3D-IOU Hungarian association.

State layout: ``(x, y, z, yaw, l, w, h, score, vx, vy, vz)``.  Every component
is observed directly; the velocity block of the measurement noise is the fused
lidar / camera covariance of that detection.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidMeasurement
from .gaussian import VelocityGaussian
from .geom import wrap_angle

STATE_DIM = 11
POS = slice(0, 3)
YAW = 3
DIMS = slice(4, 7)
SCORE = 7
VEL = slice(8, 11)


class Box(NamedTuple):
    center: np.ndarray
    yaw: float
    l: float
    w: float
    h: float

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    def footprint(self) -> np.ndarray:
        """Counter-clockwise corners (4, 2) of the ground-plane rectangle."""
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        hl, hw = self.l / 2, self.w / 2
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        return local @ np.array([[c, s], [-s, c]]) + np.asarray(self.center)[:2]

    def dilated(self, factor: float) -> "Box":
        return Box(np.asarray(self.center), self.yaw, self.l * factor, self.w * factor, self.h * factor)


# ---------------------------------------------------------------- IOU


def _clip(subject: list, a: np.ndarray, b: np.ndarray) -> list:
    """Keep the part of a polygon left of the directed edge a->b."""
    def inside(p):
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -1e-12

    def cross_point(p, q):
        d1 = q - p
        d2 = b - a
        denom = d1[0] * d2[1] - d1[1] * d2[0]
        t = ((a[0] - p[0]) * d2[1] - (a[1] - p[1]) * d2[0]) / denom
        return p + t * d1

    out = []
    for i, cur in enumerate(subject):
        prev = subject[i - 1]
        if inside(cur):
            if not inside(prev):
                out.append(cross_point(prev, cur))
            out.append(cur)
        elif inside(prev):
            out.append(cross_point(prev, cur))
    return out


def convex_intersection(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of convex CCW polygon p by convex CCW polygon q."""
    poly = [np.asarray(v, float) for v in p]
    for i in range(len(q)):
        if not poly:
            break
        poly = _clip(poly, np.asarray(q[i - 1], float), np.asarray(q[i], float))
    return np.array(poly).reshape(-1, 2)


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def iou3d(a: Box, b: Box) -> float:
    inter_area = polygon_area(convex_intersection(a.footprint(), b.footprint()))
    za0, za1 = a.center[2] - a.h / 2, a.center[2] + a.h / 2
    zb0, zb1 = b.center[2] - b.h / 2, b.center[2] + b.h / 2
    overlap = max(0.0, min(za1, zb1) - max(za0, zb0))
    inter = inter_area * overlap
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


# ---------------------------------------------------------------- association


def hungarian(cost: np.ndarray) -> list[tuple[int, int]]:
    cost = np.asarray(cost, float)
    if cost.size == 0:
        return []
    rows, cols = linear_sum_assignment(cost)
    return list(zip(rows.tolist(), cols.tolist()))


def associate(tracks_boxes: Sequence[Box], det_boxes: Sequence[Box], iou_min: float = 0.25):
    """Return (matches, unmatched_tracks, unmatched_detections) as index lists."""
    n_t, n_d = len(tracks_boxes), len(det_boxes)
    if n_t == 0 or n_d == 0:
        return [], list(range(n_t)), list(range(n_d))
    iou = np.array([[iou3d(t, d) for d in det_boxes] for t in tracks_boxes])
    matches = [(i, j) for i, j in hungarian(1.0 - iou) if iou[i, j] >= iou_min]
    mt = {i for i, _ in matches}
    md = {j for _, j in matches}
    return matches, [i for i in range(n_t) if i not in mt], [j for j in range(n_d) if j not in md]


# ---------------------------------------------------------------- Kalman filter


@dataclass
class KFNoise:
    accel_sigma: float = 1.0
    yaw_sigma: float = 0.01
    dim_sigma: float = 0.01
    score_sigma: float = 0.01
    meas_pos_sigma: float = 0.1
    meas_yaw_sigma: float = 0.05
    meas_dim_sigma: float = 0.05
    meas_score_sigma: float = 0.1
    # velocity variance used when a detection carries no velocity measurement
    no_velocity_var: float = 1e6
    # prior on the velocity of a new track (zero mean)
    init_velocity_sigma: float = 10.0
    # chi-square (3 dof, 99.9%) gate on the velocity innovation; larger ones are ignored
    velocity_gate: float = 16.27


@dataclass
class Detection:
    box: Box
    score: float = 1.0
    velocity: Optional[VelocityGaussian] = None
    object_id: int = -1

    def __post_init__(self):
        if min(self.box.l, self.box.w, self.box.h) <= 0:
            raise InvalidMeasurement("detection box dimensions must be positive")


@dataclass
class Track:
    id: int
    state: np.ndarray
    cov: np.ndarray
    age: int = 1
    hits: int = 1
    misses: int = 0
    object_ids: list = field(default_factory=list)

    @property
    def box(self) -> Box:
        s = self.state
        return Box(s[POS].copy(), float(s[YAW]), float(s[4]), float(s[5]), float(s[6]))

    @property
    def velocity(self) -> np.ndarray:
        return self.state[VEL].copy()


def process_noise(dt: float, noise: KFNoise) -> np.ndarray:
    q = np.zeros(STATE_DIM)
    a2 = noise.accel_sigma**2
    q[POS] = a2 * dt**4 / 4.0
    q[VEL] = a2 * dt**2
    q[YAW] = noise.yaw_sigma**2 * dt
    q[DIMS] = noise.dim_sigma**2 * dt
    q[SCORE] = noise.score_sigma**2 * dt
    return np.diag(q)


def transition(dt: float) -> np.ndarray:
    f = np.eye(STATE_DIM)
    f[POS, VEL] = dt * np.eye(3)
    return f


def kf_predict(track: Track, dt: float, noise: KFNoise = KFNoise()) -> Track:
    if not dt > 0:
        raise ValueError("dt must be positive")
    f = transition(dt)
    state = f @ track.state
    cov = f @ track.cov @ f.T + process_noise(dt, noise)
    return Track(track.id, state, (cov + cov.T) / 2.0, track.age + 1, track.hits, track.misses, list(track.object_ids))


def measurement(det: Detection, noise: KFNoise = KFNoise()) -> tuple[np.ndarray, np.ndarray]:
    b = det.box
    z = np.zeros(STATE_DIM)
    z[POS] = b.center
    z[YAW] = b.yaw
    z[DIMS] = (b.l, b.w, b.h)
    z[SCORE] = det.score
    r = np.zeros((STATE_DIM, STATE_DIM))
    r[POS, POS] = noise.meas_pos_sigma**2 * np.eye(3)
    r[YAW, YAW] = noise.meas_yaw_sigma**2
    r[DIMS, DIMS] = noise.meas_dim_sigma**2 * np.eye(3)
    r[SCORE, SCORE] = noise.meas_score_sigma**2
    if det.velocity is None:
        r[VEL, VEL] = noise.no_velocity_var * np.eye(3)
    else:
        vcov = np.asarray(det.velocity.cov, float)
        if not np.allclose(vcov, vcov.T, atol=1e-12, rtol=1e-9) or np.linalg.eigvalsh((vcov + vcov.T) / 2).min() < -1e-12:
            raise InvalidMeasurement("velocity covariance is not symmetric positive semi-definite")
        z[VEL] = det.velocity.mean
        r[VEL, VEL] = (vcov + vcov.T) / 2.0
    return z, r


def velocity_nis(track: Track, det: Detection) -> float:
    """Normalised innovation squared of the velocity part of a detection."""
    if det.velocity is None:
        return 0.0
    nu = det.velocity.mean - track.state[VEL]
    s = track.cov[VEL, VEL] + det.velocity.cov
    return float(nu @ np.linalg.solve(s, nu))


def _update(track: Track, z: np.ndarray, r: np.ndarray, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Joseph-form update observing the state components listed in ``rows``."""
    h = np.eye(STATE_DIM)[rows]
    innov = z[rows] - track.state[rows]
    if YAW in rows:
        innov[list(rows).index(YAW)] = wrap_angle(innov[list(rows).index(YAW)])
    r = r[np.ix_(rows, rows)]
    s = h @ track.cov @ h.T + r
    k = np.linalg.solve(s.T, (track.cov @ h.T).T).T
    state = track.state + k @ innov
    state[YAW] = wrap_angle(state[YAW])
    i_kh = np.eye(STATE_DIM) - k @ h
    cov = i_kh @ track.cov @ i_kh.T + k @ r @ k.T
    return state, (cov + cov.T) / 2.0


def kf_update(track: Track, det: Detection, noise: KFNoise = KFNoise()) -> Track:
    """Update with the full detection; a velocity failing the innovation gate is left out."""
    z, r = measurement(det, noise)
    rows = np.arange(STATE_DIM)
    if det.velocity is None or velocity_nis(track, det) > noise.velocity_gate:
        rows = rows[:VEL.start]
    state, cov = _update(track, z, r, rows)
    ids = list(track.object_ids) + [det.object_id]
    return Track(track.id, state, cov, track.age, track.hits + 1, 0, ids)


def init_track(track_id: int, det: Detection, noise: KFNoise = KFNoise()) -> Track:
    """Box components from the detection, velocity from a zero-mean prior refined by the gated measurement."""
    z, r = measurement(det, noise)
    state = z.copy()
    cov = r.copy()
    state[VEL] = 0.0
    cov[VEL, :] = 0.0
    cov[:, VEL] = 0.0
    cov[VEL, VEL] = noise.init_velocity_sigma**2 * np.eye(3)
    trk = Track(track_id, state, cov, 1, 1, 0, [det.object_id])
    if det.velocity is not None and velocity_nis(trk, det) <= noise.velocity_gate:
        trk.state, trk.cov = _update(trk, z, r, np.arange(VEL.start, VEL.stop))
    return trk


# ---------------------------------------------------------------- lifecycle


@dataclass
class TrackerConfig:
    min_hits: int = 2
    max_misses: int = 2
    iou_min: float = 0.25
    noise: KFNoise = field(default_factory=KFNoise)


class Tracker:
    """Frame-by-frame multi-object tracker; drive it from a single thread."""

    def __init__(self, config: TrackerConfig = TrackerConfig()):
        self.config = config
        self.tracks: list[Track] = []
        self._next_id = 1
        self.last_matches: list[tuple[Track, Detection]] = []

    def confirmed(self) -> list[Track]:
        return [t for t in self.tracks if t.hits >= self.config.min_hits]

    def step(self, detections: Sequence[Detection], dt: Optional[float]) -> list[Track]:
        """Predict, associate, update, spawn and retire; returns the confirmed tracks."""
        cfg = self.config
        if dt is not None and self.tracks:
            self.tracks = [kf_predict(t, dt, cfg.noise) for t in self.tracks]
        matches, un_t, un_d = associate([t.box for t in self.tracks], [d.box for d in detections], cfg.iou_min)
        updated = {}
        self.last_matches = []
        for ti, di in matches:
            trk = kf_update(self.tracks[ti], detections[di], cfg.noise)
            updated[ti] = trk
            self.last_matches.append((trk, detections[di]))
        survivors = []
        for i, trk in enumerate(self.tracks):
            if i in updated:
                survivors.append(updated[i])
                continue
            trk.misses += 1
            tentative = trk.hits < cfg.min_hits
            if trk.misses <= cfg.max_misses and not tentative:
                survivors.append(trk)
        for di in un_d:
            trk = init_track(self._next_id, detections[di], cfg.noise)
            self._next_id += 1
            survivors.append(trk)
            self.last_matches.append((trk, detections[di]))
        self.tracks = survivors
        return self.confirmed()
