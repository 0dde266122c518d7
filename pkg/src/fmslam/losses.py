"""Supervision terms: pixel-wise rendering losses, SDF losses, the SSIM
patch-warp pair, and the feature-point / feature-descriptor terms, plus
their weighted combination.

Patch warping compares a 3x3 patch around each anchor pixel of frame i
against frame j sampled through the per-patch plane-induced homography;
similarities are turned into losses as (1 - SSIM) / 2. Visibility masks
are computed by the caller (from current pose values) and enter every
term as constants, so gradients stay clean within one evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Dict, Optional, Tuple

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .features import Frame, bilinear_sample, visibility_mask
from .field import FieldModel, encode


class EmptyBatch(Exception):
    """A loss was asked to average over zero rays."""


class AllInvisible(Exception):
    """Every patch/correspondence is masked out; the caller skips the term."""


@dataclass(frozen=True)
class LossWeights:
    w_photo: float = 1.0
    w_tsdf: float = 1.0
    w_free: float = 1.0
    w_smooth: float = 0.01
    w_rgbwarp: float = 1.0
    w_depthwarp: float = 1.0
    w_fp: float = 1.0
    w_fd: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be nonnegative")

    def as_dict(self) -> Dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# order is part of the determinism contract for total_loss accumulation
TERM_ORDER = ("photo", "tsdf", "free", "smooth", "rgbwarp", "depthwarp", "fp", "fd")
_WEIGHT_OF = {name: f"w_{name}" for name in TERM_ORDER}

PATCH_OFFSETS = np.array([[du, dv] for dv in (-1, 0, 1) for du in (-1, 0, 1)],
                         dtype=np.float64)  # center at index 4


def photometric_loss(rendered, target):
    """Mean squared color L2 over sampled rays."""
    tv = np.asarray(ad.value_of(target))
    if tv.size == 0:
        raise EmptyBatch("no rays")
    n = tv.shape[0]
    diff = rendered - target
    return ad.vsum(diff * diff) / float(n)


def sdf_losses(s, t: np.ndarray, gt_range: np.ndarray, eps: float):
    """TSDF regression inside the truncation band and the free-space pull.

    s (R, S) predicted SDF at sample depths t (R, S); gt_range (R,) is the
    observed surface range along each ray. Empty masks contribute zero.
    """
    gt = np.asarray(gt_range, dtype=np.float64)[:, None]
    near = (np.abs(gt - t) < eps) & (gt > 0)
    free = (t < gt - eps) & (gt > 0)
    target = gt - t
    d_near = (s - target) * near
    d_free = (s - eps) * free
    n_near = max(int(near.sum()), 1)
    n_free = max(int(free.sum()), 1)
    l_tsdf = ad.vsum(d_near * d_near) / float(n_near)
    l_free = ad.vsum(d_free * d_free) / float(n_free)
    return l_tsdf, l_free


def smoothness_loss(model: FieldModel, rng: np.random.Generator,
                    params: Optional[dict] = None, n_points: int = 64):
    """Mean squared feature difference between random points and their
    one-finest-cell axis neighbors."""
    grid = model.grid
    delta = grid.finest_cell
    lo = grid.lo
    hi = grid.hi - delta
    pts = lo + rng.random((n_points, 3)) * (hi - lo)
    base = encode(model, pts, params)
    total = None
    for axis in range(3):
        shifted = pts.copy()
        shifted[:, axis] += delta[axis]
        diff = encode(model, shifted, params) - base
        term = ad.vsum(diff * diff)
        total = term if total is None else total + term
    return total / float(3 * np.asarray(ad.value_of(base)).size)


def ssim(a, b, value_range: float = 1.0):
    """Structural similarity over the last axis (the uniform 3x3 window).

    C1 = (0.01 R)^2, C2 = (0.03 R)^2. Returns per-patch values in [-1, 1].
    """
    c1 = (0.01 * value_range) ** 2
    c2 = (0.03 * value_range) ** 2
    mu_a = ad.vmean(a, axis=-1)
    mu_b = ad.vmean(b, axis=-1)
    var_a = ad.vmean(a * a, axis=-1) - mu_a * mu_a
    var_b = ad.vmean(b * b, axis=-1) - mu_b * mu_b
    cov = ad.vmean(a * b, axis=-1) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2) + 1e-12
    return num / den


@dataclass
class PatchSet:
    """Constant per-anchor data for warping losses, built from frame i."""
    centers: np.ndarray     # (P, 2)
    pix: np.ndarray         # (P, 9, 2) patch pixel coordinates in frame i
    rgb: np.ndarray         # (P, 9, 3) frame-i values
    depth: np.ndarray       # (P, 9) frame-i z-depth at patch pixels
    normals: np.ndarray     # (P, 3) unit plane normals (camera i)
    dists: np.ndarray       # (P,) positive plane distances
    points: np.ndarray      # (P, 9, 3) plane points in camera i


def build_patches(frame: Frame, centers: np.ndarray) -> PatchSet:
    """Plane parameters and patch samples at anchor pixels of `frame`.

    The plane through each anchor comes from central differences of the
    depth map; anchors whose neighborhood shows a depth discontinuity
    (> 5% of depth) or invalid depth fall back to a fronto-parallel plane.
    Anchors without valid center depth are dropped.
    """
    K = frame.K
    depth = frame.depth
    h, w = depth.shape
    c = np.asarray(centers, dtype=np.float64)
    c = c[(c[:, 0] >= 1) & (c[:, 0] <= w - 2) & (c[:, 1] >= 1) & (c[:, 1] <= h - 2)]
    ui = np.clip(np.round(c[:, 0]).astype(np.int64), 1, w - 2)
    vi = np.clip(np.round(c[:, 1]).astype(np.int64), 1, h - 2)
    z = depth[vi, ui]
    zl, zr = depth[vi, ui - 1], depth[vi, ui + 1]
    zu, zd = depth[vi - 1, ui], depth[vi + 1, ui]
    valid = z > 0
    c, ui, vi = c[valid], ui[valid], vi[valid]
    z, zl, zr, zu, zd = z[valid], zl[valid], zr[valid], zu[valid], zd[valid]
    if len(c) == 0:
        return PatchSet(*[np.zeros((0,) + s) for s in [(2,), (9, 2), (9, 3), (9,), (3,), (), (9, 3)]])

    X = np.asarray(geo.backproject(K, np.stack([ui, vi], -1).astype(np.float64), z))
    Xr = np.asarray(geo.backproject(K, np.stack([ui + 1, vi], -1).astype(np.float64), np.maximum(zr, 1e-6)))
    Xl = np.asarray(geo.backproject(K, np.stack([ui - 1, vi], -1).astype(np.float64), np.maximum(zl, 1e-6)))
    Xd = np.asarray(geo.backproject(K, np.stack([ui, vi + 1], -1).astype(np.float64), np.maximum(zd, 1e-6)))
    Xu = np.asarray(geo.backproject(K, np.stack([ui, vi - 1], -1).astype(np.float64), np.maximum(zu, 1e-6)))
    n = np.cross(Xr - Xl, Xd - Xu)
    norm = np.linalg.norm(n, axis=-1)
    bad = ((zl <= 0) | (zr <= 0) | (zu <= 0) | (zd <= 0)
           | (np.abs(zl - z) > 0.05 * z) | (np.abs(zr - z) > 0.05 * z)
           | (np.abs(zu - z) > 0.05 * z) | (np.abs(zd - z) > 0.05 * z)
           | (norm < 1e-12))
    n = np.where(bad[:, None], np.array([0.0, 0.0, 1.0]), n / np.maximum(norm, 1e-12)[:, None])
    # orient towards positive plane distance n . X > 0
    sgn = np.sign((n * X).sum(-1))
    sgn = np.where(sgn == 0, 1.0, sgn)
    n = n * sgn[:, None]
    d = (n * X).sum(-1)
    ok = d > 1e-6
    c, n, d, z = c[ok], n[ok], d[ok], z[ok]

    pix = c[:, None, :] + PATCH_OFFSETS[None, :, :]
    rgb = np.asarray(bilinear_sample(frame.rgb, pix))
    dep = np.asarray(bilinear_sample(frame.depth, pix))
    # plane depth for every patch pixel: z = d / (n . K^-1 q)
    rays = np.concatenate([pix, np.ones(pix.shape[:-1] + (1,))], axis=-1) @ K.matrix_inv.T
    denom = (rays * n[:, None, :]).sum(-1)
    zp = d[:, None] / np.maximum(denom, 1e-9)
    pts = rays * zp[..., None]
    return PatchSet(c, pix, rgb, dep, n, d, pts)


def warp_losses_rgbd(frame_i: Frame, frame_j: Frame, T_ij: geo.Pose,
                     patches: PatchSet, masks: np.ndarray,
                     depth_norm: float = 1.0):
    """SSIM warping losses of color and depth between two frames.

    Each patch of frame i is mapped into frame j through its plane-induced
    homography (differentiable w.r.t. T_ij); losses are visibility-masked
    means of (1 - SSIM) / 2. Raises AllInvisible when no patch survives.
    """
    masks = np.asarray(masks, dtype=np.float64)
    total = float(masks.sum())
    if total <= 0:
        raise AllInvisible("no visible patches")
    K = frame_i.K
    H = geo.plane_homography_batch(T_ij, patches.normals, patches.dists, K)
    warped = geo.apply_homography(H, patches.pix)  # (P, 9, 2)
    rgb_j = bilinear_sample(frame_j.rgb, warped)   # (P, 9, 3)
    dep_j = bilinear_sample(frame_j.depth, warped)  # (P, 9)

    a_rgb = np.transpose(patches.rgb, (0, 2, 1))   # (P, 3, 9)
    b_rgb = ad.transpose(rgb_j, (0, 2, 1))
    sim_rgb = ad.vmean(ssim(a_rgb, b_rgb, 1.0), axis=-1)   # (P,)
    sim_dep = ssim(patches.depth / depth_norm, dep_j / depth_norm, 1.0)

    l_rgb = ad.vsum((1.0 - sim_rgb) * 0.5 * masks) / total
    l_dep = ad.vsum((1.0 - sim_dep) * 0.5 * masks) / total
    return l_rgb, l_dep


def patch_visibility(frame_j: Frame, T_ij: geo.Pose, patches: PatchSet,
                     tol: float) -> np.ndarray:
    """(P,) {0,1} visibility of warped patches in frame j, evaluated at the
    current (detached) pose value."""
    if len(patches.centers) == 0:
        return np.zeros(0)
    T = T_ij.numpy()
    pts_j = patches.points @ np.asarray(T.rotation).T + np.asarray(T.translation)
    z_j = pts_j[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = frame_j.K.fx * pts_j[..., 0] / z_j + frame_j.K.cx
        v = frame_j.K.fy * pts_j[..., 1] / z_j + frame_j.K.cy
    px = np.stack([u, v], axis=-1)
    px[~np.isfinite(px)] = -1.0
    return visibility_mask(px, frame_j.K, frame_j.depth, z_j, tol)


def feature_point_loss(corr, depths: np.ndarray, T_ij: geo.Pose,
                       K: geo.Intrinsics, masks: np.ndarray):
    """Masked mean unsquared pixel distance between matched keypoints and
    reprojections (Eq.-style feature-point residual)."""
    masks = np.asarray(masks, dtype=np.float64)
    total = float(masks.sum())
    if total <= 0:
        raise AllInvisible("no visible correspondences")
    proj = geo.project_clamped(K, T_ij.apply(geo.backproject(K, corr.q_i, depths)))
    diff = corr.q_j - proj
    r = ad.vsqrt(ad.vsum(diff * diff, axis=-1) + 1e-12)
    return ad.vsum(r * masks) / total


def feature_descriptor_loss(F_i, F_j, corr, depths: np.ndarray, T_ij: geo.Pose,
                            K: geo.Intrinsics, masks: np.ndarray,
                            pairing: str = "cross"):
    """Masked mean per-channel L1 between reference descriptors and frame j's
    descriptor map sampled at the reprojected locations.

    pairing="cross" compares F_i(q_i) (the established feature-metric
    residual); pairing="same" compares F_j(q_j) instead.
    """
    masks = np.asarray(masks, dtype=np.float64)
    total = float(masks.sum())
    if total <= 0:
        raise AllInvisible("no visible correspondences")
    proj = geo.project_clamped(K, T_ij.apply(geo.backproject(K, corr.q_i, depths)))
    sampled = F_j.sample(proj)  # (M, Dk)
    if pairing == "cross":
        ref = np.asarray(ad.value_of(F_i.sample(corr.q_i)))
    elif pairing == "same":
        ref = np.asarray(ad.value_of(F_j.sample(corr.q_j)))
    else:
        raise ValueError("pairing must be 'cross' or 'same'")
    l1 = ad.vmean(ad.vabs(sampled - ref), axis=-1)
    return ad.vsum(l1 * masks) / total


def correspondence_visibility(frame_j: Frame, corr, depths: np.ndarray,
                              T_ij: geo.Pose, tol: float) -> np.ndarray:
    """(M,) {0,1} visibility of reprojected correspondences in frame j."""
    if len(corr) == 0:
        return np.zeros(0)
    T = T_ij.numpy()
    X = np.asarray(geo.backproject(frame_j.K, corr.q_i, np.maximum(depths, 1e-9)))
    Xj = X @ np.asarray(T.rotation).T + np.asarray(T.translation)
    z = Xj[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = frame_j.K.fx * Xj[..., 0] / z + frame_j.K.cx
        v = frame_j.K.fy * Xj[..., 1] / z + frame_j.K.cy
    px = np.stack([u, v], axis=-1)
    px[~np.isfinite(px)] = -1.0
    return visibility_mask(px, frame_j.K, frame_j.depth, z, tol) * (depths > 0)


def total_loss(terms: Dict[str, object], weights: LossWeights):
    """Weighted sum of the available terms in the fixed TERM_ORDER.

    Terms set to None (e.g. skipped as AllInvisible) contribute zero.
    Raises NonFiniteLoss if the combination is not finite.
    """
    wd = weights.as_dict()
    total = None
    for name in TERM_ORDER:
        term = terms.get(name)
        if term is None:
            continue
        w = wd[_WEIGHT_OF[name]]
        if w == 0.0:
            continue
        contrib = term * w
        total = contrib if total is None else total + contrib
    if total is None:
        total = 0.0
    val = float(np.asarray(ad.value_of(total)))
    if not np.isfinite(val):
        raise ad.NonFiniteLoss("total loss is not finite")
    return total
