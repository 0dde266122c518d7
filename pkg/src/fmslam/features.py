"""Deterministic feature frontend: corner detection, dense descriptors,
matching, and visibility masking.

Stands in for a learned detector/matcher behind the same interface the
warp and feature-metric losses consume: subpixel Shi-Tomasi corners, an
L2-normalized multi-scale gradient-orientation descriptor sampled densely
at every pixel, and mutual-nearest-neighbor matching with a ratio test.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from . import geometry as geo

DESCRIPTOR_DIM = 16
_NMS_RADIUS = 4
_RATIO = 0.8


@dataclass
class DescriptorMap:
    """Per-pixel unit descriptors, bilinear-sampleable at subpixel locations."""
    data: np.ndarray  # (H, W, Dk)

    def sample(self, uv):
        return bilinear_sample(self.data, uv)


@dataclass
class CorrespondenceSet:
    """One-to-one keypoint matches between two frames."""
    q_i: np.ndarray   # (M, 2)
    q_j: np.ndarray   # (M, 2)
    score: np.ndarray  # (M,) in [0, 1]

    def __len__(self):
        return len(self.q_i)


@dataclass
class Frame:
    """One RGB-D observation plus lazily cached frontend products."""
    timestamp: float
    rgb: np.ndarray          # (H, W, 3) float in [0, 1]
    depth: np.ndarray        # (H, W) z-depth meters, 0 = invalid
    K: geo.Intrinsics
    keypoints: Optional[np.ndarray] = None      # (N, 2) subpixel (u, v)
    kp_scores: Optional[np.ndarray] = None
    descriptors: Optional[DescriptorMap] = None
    cache: Dict[str, object] = field(default_factory=dict)

    @property
    def gray(self) -> np.ndarray:
        g = self.cache.get("gray")
        if g is None:
            g = grayscale(self.rgb)
            self.cache["gray"] = g
        return g

    def extract(self, max_keypoints: int = 200) -> None:
        if self.keypoints is None:
            kps, scores, desc = detect_and_describe(self.rgb, max_keypoints)
            self.keypoints, self.kp_scores, self.descriptors = kps, scores, desc


def grayscale(rgb: np.ndarray) -> np.ndarray:
    if rgb.ndim == 2:
        return np.asarray(rgb, dtype=np.float64)
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def bilinear_sample(img: np.ndarray, coords):
    """Sample (H, W) or (H, W, C) at coords (..., 2) = (u, v).

    Coordinates are clamped to the valid sampling box; clamped samples get
    zero coordinate gradient. Differentiable w.r.t. coords when they are a
    tape Var.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    cv = np.asarray(ad.value_of(coords), dtype=np.float64)
    x = np.clip(cv[..., 0], 0.0, w - 1.0)
    y = np.clip(cv[..., 1], 0.0, h - 1.0)
    inside = ((cv[..., 0] > 0.0) & (cv[..., 0] < w - 1.0)
              & (cv[..., 1] > 0.0) & (cv[..., 1] < h - 1.0))
    x0 = np.minimum(x.astype(np.int64), w - 2)
    y0 = np.minimum(y.astype(np.int64), h - 2)
    fx = x - x0
    fy = y - y0
    f00 = img[y0, x0]
    f01 = img[y0, x0 + 1]
    f10 = img[y0 + 1, x0]
    f11 = img[y0 + 1, x0 + 1]
    if img.ndim == 3:
        fx_ = fx[..., None]
        fy_ = fy[..., None]
    else:
        fx_, fy_ = fx, fy
    out = (f00 * (1 - fx_) * (1 - fy_) + f01 * fx_ * (1 - fy_)
           + f10 * (1 - fx_) * fy_ + f11 * fx_ * fy_)
    if not isinstance(coords, ad.Var):
        return out

    def vjp(g):
        g = np.asarray(g)
        dx = (f01 - f00) * (1 - fy_) + (f11 - f10) * fy_
        dy = (f10 - f00) * (1 - fx_) + (f11 - f01) * fx_
        if img.ndim == 3:
            gx = (g * dx).sum(-1)
            gy = (g * dy).sum(-1)
        else:
            gx = g * dx
            gy = g * dy
        grad = np.stack([gx * inside, gy * inside], axis=-1)
        return grad

    return ad.custom(out, [(coords, vjp)], "bilinear")


# ---------------------------------------------------------------------------
# detection / description
# ---------------------------------------------------------------------------

def detect_and_describe(image: np.ndarray, max_keypoints: int = 200
                        ) -> Tuple[np.ndarray, np.ndarray, DescriptorMap]:
    """Subpixel corners plus the dense descriptor map of an image.

    Returns (keypoints (N, 2), scores (N,), DescriptorMap); keypoints are
    ordered by decreasing score (ties broken by position) and capped.
    """
    gray = grayscale(np.asarray(image, dtype=np.float64))
    score = shi_tomasi_response(gray)
    h, w = gray.shape
    thr = max(1e-6, 0.01 * float(score.max()))
    size = 2 * _NMS_RADIUS + 1
    local_max = score >= ndimage.maximum_filter(score, size=size, mode="nearest")
    cand = local_max & (score > thr)
    cand[:2, :] = cand[-2:, :] = False
    cand[:, :2] = cand[:, -2:] = False
    vs, us = np.nonzero(cand)
    responses = score[vs, us]
    order = np.lexsort((us, vs, -responses))[:max_keypoints]
    vs, us, responses = vs[order], us[order], responses[order]
    du = _quadratic_offset(score[vs, us - 1], score[vs, us], score[vs, us + 1])
    dv = _quadratic_offset(score[vs - 1, us], score[vs, us], score[vs + 1, us])
    kps = np.stack([us + du, vs + dv], axis=-1)
    return kps, responses, DescriptorMap(dense_descriptor(gray))


def shi_tomasi_response(gray: np.ndarray) -> np.ndarray:
    """Minimum-eigenvalue corner score of the 3x3-aggregated structure tensor."""
    g = ndimage.gaussian_filter(gray, 1.0, mode="nearest")
    ix = np.gradient(g, axis=1)
    iy = np.gradient(g, axis=0)
    sxx = ndimage.uniform_filter(ix * ix, 3, mode="nearest")
    syy = ndimage.uniform_filter(iy * iy, 3, mode="nearest")
    sxy = ndimage.uniform_filter(ix * iy, 3, mode="nearest")
    tr = 0.5 * (sxx + syy)
    det = np.sqrt(np.maximum(0.25 * (sxx - syy) ** 2 + sxy ** 2, 0.0))
    return tr - det


def _quadratic_offset(sm: np.ndarray, s0: np.ndarray, sp: np.ndarray) -> np.ndarray:
    denom = sm - 2.0 * s0 + sp
    off = np.where(np.abs(denom) > 1e-12, 0.5 * (sm - sp) / np.where(denom == 0, 1.0, denom), 0.0)
    return np.clip(off, -0.5, 0.5)


def dense_descriptor(gray: np.ndarray) -> np.ndarray:
    """(H, W, 16): two scales x eight orientation bins of smoothed gradient
    energy, L2-normalized per pixel."""
    maps = []
    for sigma in (1.0, 2.5):
        g = ndimage.gaussian_filter(gray, sigma, mode="nearest")
        gx = np.gradient(g, axis=1)
        gy = np.gradient(g, axis=0)
        mag = np.hypot(gx, gy)
        ang = np.arctan2(gy, gx) % (2.0 * np.pi)
        b = ang / (2.0 * np.pi) * 8.0
        b0 = np.floor(b).astype(np.int64) % 8
        frac = b - np.floor(b)
        hist = np.zeros(gray.shape + (8,))
        for k in range(8):
            hist[..., k] = np.where(b0 == k, mag * (1 - frac), 0.0) \
                + np.where((b0 + 1) % 8 == k, mag * frac, 0.0)
        for k in range(8):
            hist[..., k] = ndimage.gaussian_filter(hist[..., k], 1.5, mode="nearest")
        maps.append(hist)
    desc = np.concatenate(maps, axis=-1) + 1e-8
    return desc / np.linalg.norm(desc, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------

def match_features(kp_i: np.ndarray, desc_i: DescriptorMap,
                   kp_j: np.ndarray, desc_j: DescriptorMap) -> CorrespondenceSet:
    """Mutual nearest neighbors in descriptor space with a 0.8 ratio test."""
    empty = CorrespondenceSet(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))
    if len(kp_i) == 0 or len(kp_j) == 0:
        return empty
    di = np.asarray(ad.value_of(desc_i.sample(kp_i)))
    dj = np.asarray(ad.value_of(desc_j.sample(kp_j)))
    d2 = np.maximum(
        (di * di).sum(1)[:, None] + (dj * dj).sum(1)[None, :] - 2.0 * di @ dj.T, 0.0)
    nn_j = np.argmin(d2, axis=1)
    nn_i = np.argmin(d2, axis=0)
    rows = np.arange(len(kp_i))
    mutual = nn_i[nn_j] == rows
    best = np.sqrt(d2[rows, nn_j])
    if d2.shape[1] >= 2:
        part = np.partition(d2, 1, axis=1)
        second = np.sqrt(part[:, 1])
        ratio_ok = best <= _RATIO * np.maximum(second, 1e-12)
    else:
        ratio_ok = np.ones_like(mutual)
    keep = mutual & ratio_ok
    qi = kp_i[keep]
    qj = kp_j[nn_j[keep]]
    score = np.clip(1.0 - best[keep] / 2.0, 0.0, 1.0)
    order = np.lexsort((qi[:, 1], qi[:, 0]))
    return CorrespondenceSet(qi[order], qj[order], score[order])


# ---------------------------------------------------------------------------
# visibility
# ---------------------------------------------------------------------------

def visibility_mask(warped_px: np.ndarray, K: geo.Intrinsics, depth_j: np.ndarray,
                    reproj_depth: np.ndarray, tol: float) -> np.ndarray:
    """(P,) {0,1}: 1 iff every warped pixel of the patch/point stays inside
    frame j's sampling bounds and its reprojected depth agrees with the
    observed depth there within `tol` (occlusion check)."""
    px = np.asarray(ad.value_of(warped_px), dtype=np.float64)
    rz = np.asarray(ad.value_of(reproj_depth), dtype=np.float64)
    if px.ndim == 2:
        px = px[:, None, :]
        rz = rz[:, None]
    inb = ((px[..., 0] >= 0.0) & (px[..., 0] <= K.width - 1.0)
           & (px[..., 1] >= 0.0) & (px[..., 1] <= K.height - 1.0))
    observed = np.asarray(bilinear_sample(depth_j, np.clip(px, 0.0, None)))
    depth_ok = np.abs(rz - observed) < tol
    front = rz > 0.0
    ok = (inb & depth_ok & front).all(axis=-1)
    return ok.astype(np.float64)
