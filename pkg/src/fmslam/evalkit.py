"""Evaluation metrics: ATE RMSE (aligned / unaligned), Depth L1,
accuracy / completion / completion ratio, and mesh extraction.

Distances are reported in centimeters, completion ratio in percent.
Nearest-neighbor queries use exact KD-trees; the test suite pins them
against a brute-force all-pairs oracle on small sets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree
from skimage import measure

from . import geometry as geo
from .features import Frame
from .field import FieldModel, decode
from .renderer import RenderConfig, render_frame


class NoAssociations(Exception):
    """No timestamp pairs matched within the association tolerance."""


class EmptyPointSet(Exception):
    """Point-set metric got an empty input."""


class EmptyMesh(Exception):
    """The SDF has no zero crossing inside the queried volume."""


ASSOCIATION_TOL = 0.01  # seconds


@dataclass
class Trajectory:
    timestamps: np.ndarray       # (N,) strictly increasing
    poses: List[geo.Pose]

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if len(self.timestamps) != len(self.poses):
            raise ValueError("timestamps and poses length mismatch")

    def translations(self) -> np.ndarray:
        return np.stack([np.asarray(p.translation) for p in self.poses], axis=0)


def associate(a: np.ndarray, b: np.ndarray, tol: float = ASSOCIATION_TOL
              ) -> List[Tuple[int, int]]:
    """Greedy closest-timestamp association within `tol` seconds."""
    pairs = []
    used_b: set = set()
    for i, ta in enumerate(a):
        j = int(np.argmin(np.abs(b - ta)))
        if abs(b[j] - ta) <= tol and j not in used_b:
            pairs.append((i, j))
            used_b.add(j)
    return pairs


def horn_alignment(est: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form rigid (R, t), no scale, minimizing ||R est + t - gt||."""
    mu_e = est.mean(axis=0)
    mu_g = gt.mean(axis=0)
    cov = (gt - mu_g).T @ (est - mu_e)
    U, _, Vt = np.linalg.svd(cov)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ D @ Vt
    t = mu_g - R @ mu_e
    return R, t


def ate_rmse(est: Trajectory, gt: Trajectory, align: bool) -> float:
    """ATE RMSE in centimeters; `align` applies rigid Horn alignment first."""
    pairs = associate(est.timestamps, gt.timestamps)
    if not pairs:
        raise NoAssociations("no matching timestamps within tolerance")
    pe = est.translations()[[i for i, _ in pairs]]
    pg = gt.translations()[[j for _, j in pairs]]
    if align:
        R, t = horn_alignment(pe, pg)
        pe = pe @ R.T + t
    resid = pe - pg
    return float(np.sqrt((resid ** 2).sum(axis=1).mean())) * 100.0


def depth_l1(model: FieldModel, frames: Sequence[Tuple[Frame, geo.Pose]],
             sample_count: int, rng: np.random.Generator,
             cfg: Optional[RenderConfig] = None, seed: int = 0) -> float:
    """Mean |rendered - observed| z-depth (cm) over random valid pixels."""
    if not frames:
        raise ValueError("need at least one frame")
    cfg = cfg or RenderConfig()
    per = max(sample_count // len(frames), 1)
    errs = []
    for frame, pose in frames:
        vs, us = np.nonzero(frame.depth > 0)
        if len(vs) == 0:
            continue
        sel = rng.choice(len(vs), size=min(per, len(vs)), replace=False)
        pix = np.stack([us[sel], vs[sel]], axis=-1).astype(np.float64)
        gt = frame.depth[vs[sel], us[sel]]
        _, z = render_frame(model, pose, frame.K, pix, cfg, seed=seed, depth_priors=gt)
        errs.append(np.abs(z - gt))
    if not errs:
        raise ValueError("no valid depth pixels")
    return float(np.concatenate(errs).mean()) * 100.0


# ---------------------------------------------------------------------------
# meshes and point metrics
# ---------------------------------------------------------------------------

def sdf_volume(sdf_fn: Callable[[np.ndarray], np.ndarray], lo: np.ndarray,
               hi: np.ndarray, resolution: int, chunk: int = 65536) -> np.ndarray:
    xs = [np.linspace(lo[a], hi[a], resolution) for a in range(3)]
    gx, gy, gz = np.meshgrid(*xs, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    out = np.empty(pts.shape[0])
    for k in range(0, len(pts), chunk):
        out[k:k + chunk] = sdf_fn(pts[k:k + chunk])
    return out.reshape(resolution, resolution, resolution)


def model_sdf_fn(model: FieldModel) -> Callable[[np.ndarray], np.ndarray]:
    def fn(pts: np.ndarray) -> np.ndarray:
        s, _ = decode(model, pts)
        return np.asarray(s)
    return fn


def extract_mesh(model_or_sdf, resolution: int,
                 lo: Optional[np.ndarray] = None, hi: Optional[np.ndarray] = None,
                 frusta: Optional[Sequence[Tuple[geo.Pose, geo.Intrinsics]]] = None,
                 max_depth: float = np.inf) -> Tuple[np.ndarray, np.ndarray]:
    """Marching-cubes triangle mesh of the zero isosurface.

    `model_or_sdf` is a FieldModel or a callable (N,3)->(N,) SDF. When
    `frusta` is given, triangles whose vertices all fall outside the union
    of the camera frusta are culled. Returns (vertices (V,3), faces (F,3)).
    """
    if resolution < 16:
        raise ValueError("resolution must be >= 16")
    if isinstance(model_or_sdf, FieldModel):
        sdf_fn = model_sdf_fn(model_or_sdf)
        lo = model_or_sdf.grid.lo if lo is None else np.asarray(lo)
        hi = model_or_sdf.grid.hi if hi is None else np.asarray(hi)
    else:
        sdf_fn = model_or_sdf
        if lo is None or hi is None:
            raise ValueError("explicit bounds required for a bare SDF")
        lo, hi = np.asarray(lo), np.asarray(hi)
    vol = sdf_volume(sdf_fn, lo, hi, resolution)
    if vol.min() > 0 or vol.max() < 0:
        raise EmptyMesh("no zero crossing in the volume")
    spacing = (hi - lo) / (resolution - 1)
    verts, faces, _, _ = measure.marching_cubes(vol, level=0.0, spacing=tuple(spacing))
    verts = verts + lo
    if frusta:
        inside = np.zeros(len(verts), dtype=bool)
        for pose, K in frusta:
            inside |= points_in_frustum(verts, pose, K, max_depth)
        keep = inside[faces].all(axis=1)
        faces = faces[keep]
        if len(faces) == 0:
            raise EmptyMesh("every triangle was culled by the frusta")
        used = np.unique(faces)
        remap = np.full(len(verts), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        verts = verts[used]
        faces = remap[faces]
    return verts, faces


def points_in_frustum(pts: np.ndarray, pose: geo.Pose, K: geo.Intrinsics,
                      max_depth: float = np.inf) -> np.ndarray:
    inv = pose.numpy().inverse()
    cam = pts @ np.asarray(inv.rotation).T + np.asarray(inv.translation)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * cam[:, 0] / z + K.cx
        v = K.fy * cam[:, 1] / z + K.cy
    return ((z > 0) & (z < max_depth)
            & (u >= 0) & (u <= K.width - 1) & (v >= 0) & (v <= K.height - 1))


def sample_mesh_points(verts: np.ndarray, faces: np.ndarray, count: int,
                       seed: int = 0) -> np.ndarray:
    """Area-weighted uniform surface samples of a triangle mesh."""
    if len(faces) == 0:
        raise EmptyPointSet("mesh has no faces")
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    total = areas.sum()
    if total <= 0:
        raise EmptyPointSet("mesh has zero area")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(faces), size=count, p=areas / total)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    w0 = 1 - r1
    w1 = r1 * (1 - r2)
    w2 = r1 * r2
    return (w0[:, None] * a[idx] + w1[:, None] * b[idx] + w2[:, None] * c[idx])


def acc_comp(est_points: np.ndarray, gt_points: np.ndarray,
             threshold_cm: float = 5.0) -> Tuple[float, float, float]:
    """(accuracy cm, completion cm, completion ratio %) between point sets."""
    est_points = np.asarray(est_points, dtype=np.float64)
    gt_points = np.asarray(gt_points, dtype=np.float64)
    if len(est_points) == 0 or len(gt_points) == 0:
        raise EmptyPointSet("both point sets must be non-empty")
    d_eg, _ = cKDTree(gt_points).query(est_points)
    d_ge, _ = cKDTree(est_points).query(gt_points)
    acc = float(d_eg.mean()) * 100.0
    comp = float(d_ge.mean()) * 100.0
    ratio = float((d_ge * 100.0 < threshold_cm).mean()) * 100.0
    return acc, comp, ratio


def acc_comp_bruteforce(est_points: np.ndarray, gt_points: np.ndarray,
                        threshold_cm: float = 5.0) -> Tuple[float, float, float]:
    """O(n^2) oracle used to pin the KD-tree implementation in tests."""
    if len(est_points) == 0 or len(gt_points) == 0:
        raise EmptyPointSet("both point sets must be non-empty")
    d2 = ((est_points[:, None, :] - gt_points[None, :, :]) ** 2).sum(-1)
    d_eg = np.sqrt(d2.min(axis=1))
    d_ge = np.sqrt(d2.min(axis=0))
    return (float(d_eg.mean()) * 100.0, float(d_ge.mean()) * 100.0,
            float((d_ge * 100.0 < threshold_cm).mean()) * 100.0)
