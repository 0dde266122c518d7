"""Procedural ground-truth factory.

Analytic SDF scenes (a room shell plus spheres and boxes), sphere-traced
RGB-D rendering with Lambertian shading over a deterministic value-noise
albedo, and smooth waypoint trajectories with optional seeded per-frame
jitter. World frame: z up; cameras use the usual x-right / y-down /
z-forward convention. Depth images store z-depth; 0 marks no hit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import geometry as geo
from .features import Frame
from .util import hash01

_HIT_TOL = 1e-5
_MAX_STEPS = 256
_LIGHT = np.array([0.35, -0.45, 0.82])
_LIGHT = _LIGHT / np.linalg.norm(_LIGHT)


@dataclass(frozen=True)
class Primitive:
    kind: str                 # "room" | "sphere" | "box"
    center: np.ndarray
    size: np.ndarray          # radius in [0] for spheres, half extents for boxes
    albedo: np.ndarray        # base rgb


@dataclass
class AnalyticScene:
    """Min-composition of primitives with exact distance queries."""
    name: str
    primitives: List[Primitive]
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    texture_seed: int = 0

    def sdf(self, pts: np.ndarray) -> np.ndarray:
        return self._eval(pts)[0]

    def _eval(self, pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        pts = np.atleast_2d(pts)
        dists = np.stack([_primitive_sdf(p, pts) for p in self.primitives], axis=0)
        idx = np.argmin(dists, axis=0)
        return dists[idx, np.arange(pts.shape[0])], idx


def _primitive_sdf(p: Primitive, pts: np.ndarray) -> np.ndarray:
    rel = pts - p.center
    if p.kind == "sphere":
        return np.linalg.norm(rel, axis=-1) - p.size[0]
    if p.kind == "box":
        q = np.abs(rel) - p.size
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside
    if p.kind == "room":
        q = np.abs(rel) - p.size
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return -(outside + inside)
    raise ValueError(f"unknown primitive kind {p.kind!r}")


def scene_sdf(scene: AnalyticScene, x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distance (m), unit normal, and textured albedo at points x (N, 3)."""
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    dist, idx = scene._eval(pts)
    h = 1e-5
    grad = np.empty_like(pts)
    for a in range(3):
        dp = pts.copy()
        dm = pts.copy()
        dp[:, a] += h
        dm[:, a] -= h
        grad[:, a] = (scene._eval(dp)[0] - scene._eval(dm)[0]) / (2 * h)
    norm = np.linalg.norm(grad, axis=-1, keepdims=True)
    normal = grad / np.maximum(norm, 1e-12)
    base = np.stack([scene.primitives[i].albedo for i in idx], axis=0)
    albedo = base * _texture(scene, pts)[:, None]
    if np.asarray(x).ndim == 1:
        return dist[0], normal[0], albedo[0]
    return dist, normal, albedo


def _value_noise(seed: int, pts: np.ndarray, freq: float) -> np.ndarray:
    p = pts * freq + 1024.0
    i = np.floor(p).astype(np.int64)
    f = p - i
    f = f * f * (3.0 - 2.0 * f)
    out = np.zeros(pts.shape[0])
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (np.where(dx, f[:, 0], 1 - f[:, 0])
                     * np.where(dy, f[:, 1], 1 - f[:, 1])
                     * np.where(dz, f[:, 2], 1 - f[:, 2]))
                out += w * hash01(seed, i[:, 0] + dx, i[:, 1] + dy, i[:, 2] + dz)
    return out


def _texture(scene: AnalyticScene, pts: np.ndarray) -> np.ndarray:
    s = scene.texture_seed
    t = (0.55 * _value_noise(s, pts, 2.1) + 0.30 * _value_noise(s + 1, pts, 6.3)
         + 0.15 * _value_noise(s + 2, pts, 17.9))
    return 0.35 + 0.65 * t


def render_gt_frame(scene: AnalyticScene, pose: geo.Pose, K: geo.Intrinsics,
                    timestamp: float = 0.0, far: float = 20.0) -> Frame:
    """Sphere-trace every pixel; returns a Frame with shaded rgb and z-depth."""
    w, h = K.width, K.height
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    a = (us - K.cx) / K.fx
    b = (vs - K.cy) / K.fy
    cam = np.stack([a, b, np.ones_like(a)], axis=-1).reshape(-1, 3)
    rho = np.linalg.norm(cam, axis=-1)
    dirs = (cam / rho[:, None]) @ np.asarray(pose.rotation).T
    origin = np.asarray(pose.translation)

    n = dirs.shape[0]
    t = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    hit = np.zeros(n, dtype=bool)
    for _ in range(_MAX_STEPS):
        if not alive.any():
            break
        pts = origin + dirs[alive] * t[alive, None]
        d, _ = scene._eval(pts)
        sub_hit = np.abs(d) < _HIT_TOL
        idx = np.nonzero(alive)[0]
        hit[idx[sub_hit]] = True
        t[alive] += np.maximum(d, 0.0) * 0.99 + np.where(sub_hit, 0.0, 1e-6)
        still = ~sub_hit & (t[alive] < far)
        alive[idx] = still

    depth = np.zeros(n)
    rgb = np.zeros((n, 3))
    if hit.any():
        pts = origin + dirs[hit] * t[hit, None]
        _, normal, albedo = scene_sdf(scene, pts)
        lam = np.maximum((normal * _LIGHT).sum(-1), 0.0)
        shade = np.clip(0.35 + 0.65 * lam, 0.0, 1.0)
        rgb[hit] = np.clip(albedo * shade[:, None], 0.0, 1.0)
        # z-depth = range / rho
        depth[hit] = t[hit] / rho[hit]
    return Frame(timestamp=timestamp,
                 rgb=rgb.reshape(h, w, 3),
                 depth=depth.reshape(h, w),
                 K=K)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass
class TrajectorySpec:
    waypoints: List[geo.Pose]
    frames_per_segment: int
    interval: int = 1
    max_rot_jitter_deg: float = 0.0
    max_trans_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.interval < 1:
            raise ValueError("interval must be >= 1")
        if len(self.waypoints) < 2:
            raise ValueError("need at least 2 waypoints")


def generate_trajectory(spec: TrajectorySpec) -> List[geo.Pose]:
    """Slerp/lerp between waypoints, subsample every `interval` frames, then
    apply seeded per-frame jitter bounded by the spec."""
    dense: List[geo.Pose] = []
    for k in range(len(spec.waypoints) - 1):
        p0, p1 = spec.waypoints[k], spec.waypoints[k + 1]
        q0 = geo.rotation_to_quaternion(np.asarray(p0.rotation))
        q1 = geo.rotation_to_quaternion(np.asarray(p1.rotation))
        for s in range(spec.frames_per_segment):
            u = s / spec.frames_per_segment
            R = geo.quaternion_to_rotation(geo.quaternion_slerp(q0, q1, u))
            tr = (1 - u) * np.asarray(p0.translation) + u * np.asarray(p1.translation)
            dense.append(geo.Pose(geo.orthonormalize(R), tr))
    dense.append(spec.waypoints[-1].numpy())
    sub = dense[:: spec.interval]
    if spec.max_rot_jitter_deg <= 0 and spec.max_trans_jitter <= 0:
        return sub
    rng = np.random.default_rng(spec.seed)
    out = []
    for p in sub:
        axis = rng.normal(size=3)
        axis /= max(np.linalg.norm(axis), 1e-12)
        ang = rng.uniform(-1.0, 1.0) * np.deg2rad(spec.max_rot_jitter_deg)
        dt = rng.uniform(-1.0, 1.0, size=3) * spec.max_trans_jitter
        jig = geo.se3_exp(np.concatenate([axis * ang, dt]))
        out.append(p.compose(jig))
    return out


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> geo.Pose:
    """Camera-to-world pose with +z looking from eye toward target."""
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - eye
    f = f / np.linalg.norm(f)
    r = np.cross(f, np.asarray(up, dtype=np.float64))
    nr = np.linalg.norm(r)
    if nr < 1e-9:  # looking straight along up: pick an arbitrary right
        r = np.cross(f, np.array([1.0, 0.0, 0.0]))
        nr = np.linalg.norm(r)
    r = r / nr
    d = np.cross(f, r)  # y down
    R = np.stack([r, d, f], axis=1)
    return geo.Pose(geo.orthonormalize(R), eye)


# ---------------------------------------------------------------------------
# the pinned standard suite
# ---------------------------------------------------------------------------

_GRAY = np.array([0.75, 0.73, 0.70])
_RED = np.array([0.80, 0.35, 0.30])
_GREEN = np.array([0.35, 0.75, 0.40])
_BLUE = np.array([0.35, 0.45, 0.85])
_YELLOW = np.array([0.85, 0.80, 0.35])


def _room(cx, cy, cz, hx, hy, hz, albedo=_GRAY) -> Primitive:
    return Primitive("room", np.array([cx, cy, cz]), np.array([hx, hy, hz]), albedo)


def _sphere(cx, cy, cz, r, albedo) -> Primitive:
    return Primitive("sphere", np.array([cx, cy, cz]), np.array([r, r, r]), albedo)


def _box(cx, cy, cz, hx, hy, hz, albedo) -> Primitive:
    return Primitive("box", np.array([cx, cy, cz]), np.array([hx, hy, hz]), albedo)


def _orbit_waypoints(center, radius, z, n, look_z, start=0.0, sweep=2 * np.pi):
    pts = []
    for k in range(n):
        ang = start + sweep * k / max(n - 1, 1)
        eye = np.array([center[0] + radius * np.cos(ang),
                        center[1] + radius * np.sin(ang), z])
        pts.append(look_at(eye, np.array([center[0], center[1], look_z])))
    return pts


def scene_empty_room() -> Tuple[AnalyticScene, List[geo.Pose]]:
    scene = AnalyticScene("empty_room", [_room(0, 0, 1.5, 2.5, 2.0, 1.5)],
                          np.array([-2.6, -2.1, -0.1]), np.array([2.6, 2.1, 3.1]),
                          texture_seed=11)
    ways = _orbit_waypoints((0.0, 0.0), 0.9, 1.5, 6, 1.4)
    return scene, ways


def scene_cluttered_a() -> Tuple[AnalyticScene, List[geo.Pose]]:
    scene = AnalyticScene("cluttered_a", [
        _room(0, 0, 1.5, 2.5, 2.0, 1.5),
        _sphere(1.3, 0.8, 0.5, 0.5, _RED),
        _sphere(-1.2, -0.9, 0.4, 0.4, _BLUE),
        _box(-1.3, 1.0, 0.45, 0.45, 0.35, 0.45, _GREEN),
        _box(1.1, -1.1, 0.3, 0.35, 0.5, 0.3, _YELLOW),
    ], np.array([-2.6, -2.1, -0.1]), np.array([2.6, 2.1, 3.1]), texture_seed=23)
    ways = _orbit_waypoints((0.0, 0.0), 0.8, 1.3, 6, 0.6)
    return scene, ways


def scene_cluttered_b() -> Tuple[AnalyticScene, List[geo.Pose]]:
    scene = AnalyticScene("cluttered_b", [
        _room(0, 0, 1.5, 2.8, 2.3, 1.5),
        _box(1.6, 1.2, 0.5, 0.5, 0.4, 0.5, _BLUE),
        _box(-1.5, 1.3, 0.35, 0.4, 0.4, 0.35, _RED),
        _box(0.2, -1.4, 0.55, 0.6, 0.35, 0.55, _GREEN),
        _sphere(-1.4, -1.1, 0.45, 0.45, _YELLOW),
    ], np.array([-2.9, -2.4, -0.1]), np.array([2.9, 2.4, 3.1]), texture_seed=37)
    ways = _orbit_waypoints((0.0, 0.0), 0.9, 1.4, 6, 0.7, start=0.7)
    return scene, ways


def scene_corridor() -> Tuple[AnalyticScene, List[geo.Pose]]:
    scene = AnalyticScene("corridor", [
        _room(0, 0, 1.25, 4.0, 1.3, 1.25),
        _box(-2.0, 0.8, 0.4, 0.35, 0.3, 0.4, _RED),
        _box(0.5, -0.8, 0.5, 0.4, 0.3, 0.5, _BLUE),
        _box(2.4, 0.7, 0.35, 0.3, 0.35, 0.35, _GREEN),
    ], np.array([-4.1, -1.4, -0.1]), np.array([4.1, 1.4, 2.6]), texture_seed=41)
    ways = [look_at(np.array([-3.0 + k * 1.5, (-1) ** k * 0.25, 1.2]),
                    np.array([-3.0 + k * 1.5 + 2.0, (-1) ** (k + 1) * 0.3, 0.9]))
            for k in range(5)]
    return scene, ways


def scene_sphere_field() -> Tuple[AnalyticScene, List[geo.Pose]]:
    prims = [_room(0, 0, 1.5, 2.6, 2.6, 1.5)]
    albs = [_RED, _GREEN, _BLUE, _YELLOW]
    k = 0
    for gx in (-1.1, 1.1):
        for gy in (-1.1, 1.1):
            prims.append(_sphere(gx, gy, 0.5, 0.45, albs[k % 4]))
            k += 1
    scene = AnalyticScene("sphere_field", prims,
                          np.array([-2.7, -2.7, -0.1]), np.array([2.7, 2.7, 3.1]),
                          texture_seed=53)
    ways = _orbit_waypoints((0.0, 0.0), 0.7, 1.5, 6, 0.5)
    return scene, ways


STANDARD_SCENES: Dict[str, Callable[[], Tuple[AnalyticScene, List[geo.Pose]]]] = {
    "empty_room": scene_empty_room,
    "cluttered_a": scene_cluttered_a,
    "cluttered_b": scene_cluttered_b,
    "corridor": scene_corridor,
    "sphere_field": scene_sphere_field,
}

STANDARD_INTERVALS = (1, 5, 10)
SUITE_BASE_FRAMES = 50
SUITE_FPS = 10.0
# Jitter pinned for the robustness suites: large enough at interval 10 that
# a constant-velocity guess is several degrees off, so pixel-only tracking
# has to cope with a genuinely wrong basin.
SUITE_ROT_JITTER_DEG = 1.2
SUITE_TRANS_JITTER = 0.012


def standard_intrinsics(width: int = 160, height: int = 120) -> geo.Intrinsics:
    f = 110.0 * width / 160.0
    return geo.Intrinsics(f, f, width / 2.0, height / 2.0, width, height)


def build_sequence(scene_name: str, interval: int, width: int = 160, height: int = 120,
                   n_base_frames: int = SUITE_BASE_FRAMES, seed: int = 0,
                   rot_jitter_deg: float = SUITE_ROT_JITTER_DEG,
                   trans_jitter: float = SUITE_TRANS_JITTER):
    """Materialize one suite sequence: (scene, poses, frames, intrinsics)."""
    scene, ways = STANDARD_SCENES[scene_name]()
    fps = max(n_base_frames // (len(ways) - 1), 1)
    spec = TrajectorySpec(ways, fps, interval,
                          max_rot_jitter_deg=rot_jitter_deg * interval,
                          max_trans_jitter=trans_jitter * interval,
                          seed=seed * 7919 + interval)
    poses = generate_trajectory(spec)
    K = standard_intrinsics(width, height)
    frames = []
    far = float(np.linalg.norm(scene.bounds_hi - scene.bounds_lo)) + 1.0
    for k, p in enumerate(poses):
        ts = k * interval / SUITE_FPS
        fr = render_gt_frame(scene, p, K, timestamp=ts, far=far)
        frames.append(fr)
    return scene, poses, frames, K
