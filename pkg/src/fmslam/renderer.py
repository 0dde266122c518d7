"""Differentiable volumetric rendering of color and depth along rays.

Per-sample weights follow the transmittance form
w_i = exp(-sum_{j<i} sigma_j d_j) * (1 - exp(-sigma_i d_i)). Because the
bell-shaped SDF density is bounded by 0.25, raw weight sums along a ray
stay well below one; ray color and depth are therefore read out as the
weight-normalized expectation restricted to a window around the first
front-to-back SDF zero crossing. The returned per-sample weights are the
(windowed, unnormalized) w_i, whose sum lies in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .field import FieldModel, decode, sdf_to_density
from .util import hash01


class InvalidBounds(Exception):
    """Ray sampling asked for an empty or inverted depth interval."""


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray            # world, meters
    direction: np.ndarray         # unit
    near: float
    far: float
    depth_prior: Optional[float] = None  # range along the ray, meters

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not self.near < self.far:
            raise InvalidBounds("need near < far")


@dataclass
class RaySampleSet:
    """Monotone sample depths plus spacings; (s, c, sigma) filled on evaluation."""
    t: np.ndarray        # (S,) or (R, S), strictly increasing along the last axis
    delta: np.ndarray    # same shape; last entry closes against the far bound
    s: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None


@dataclass(frozen=True)
class RenderConfig:
    near: float = 0.05
    far: float = 8.0
    n_strat: int = 32
    n_surf: int = 8


def _spacings(t: np.ndarray, far: float) -> np.ndarray:
    d = np.diff(t, axis=-1)
    last = np.maximum(far - t[..., -1:], 1e-12)
    return np.concatenate([d, last], axis=-1)


def sample_along_ray(ray: Ray, n_strat: int, n_surf: int, rng: np.random.Generator,
                     window: float = 0.1) -> RaySampleSet:
    """Stratified samples in [near, far], plus uniform samples in
    [prior - window, prior + window] when the ray carries a depth prior."""
    t = sample_depth_batch(ray.near, ray.far, n_strat, n_surf,
                           np.array([ray.depth_prior if ray.depth_prior is not None else np.nan]),
                           window, rng)
    return RaySampleSet(t=t[0], delta=_spacings(t, ray.far)[0])


def sample_depth_batch(near: float, far: float, n_strat: int, n_surf: int,
                       priors: np.ndarray, window: float,
                       rng: np.random.Generator) -> np.ndarray:
    """(R, n_strat + n_surf) sorted sample depths; NaN prior means the extra
    samples are stratified like the rest."""
    if n_strat < 2:
        raise InvalidBounds("need at least 2 stratified samples")
    if not near < far:
        raise InvalidBounds("need near < far")
    priors = np.asarray(priors, dtype=np.float64)
    r = priors.shape[0]
    u = (np.arange(n_strat) + rng.random((r, n_strat))) / n_strat
    t_strat = near + u * (far - near)
    if n_surf > 0:
        has = np.isfinite(priors)
        lo = np.where(has, np.clip(priors - window, near, far), near)
        hi = np.where(has, np.clip(priors + window, near, far), far)
        t_surf = lo[:, None] + rng.random((r, n_surf)) * (hi - lo)[:, None]
        t = np.concatenate([t_strat, t_surf], axis=1)
    else:
        t = t_strat
    t.sort(axis=1)
    return t


def sample_depth_hash(pixels: np.ndarray, seed: int, near: float, far: float,
                      n_strat: int, n_surf: int, priors: np.ndarray,
                      window: float) -> np.ndarray:
    """Order-independent variant: per-sample jitter is a hash of the pixel,
    so permuting the pixel list permutes the output rows identically."""
    if n_strat < 2:
        raise InvalidBounds("need at least 2 stratified samples")
    if not near < far:
        raise InvalidBounds("need near < far")
    pixels = np.asarray(pixels)
    priors = np.asarray(priors, dtype=np.float64)
    total = n_strat + n_surf
    k = np.arange(total)[None, :]
    key = (pixels[:, 1].astype(np.int64) * 131071 + pixels[:, 0].astype(np.int64))[:, None]
    jit = hash01(seed, key, k)
    u = (np.arange(n_strat)[None, :] + jit[:, :n_strat]) / n_strat
    t_strat = near + u * (far - near)
    if n_surf > 0:
        has = np.isfinite(priors)
        lo = np.where(has, np.clip(priors - window, near, far), near)
        hi = np.where(has, np.clip(priors + window, near, far), far)
        t_surf = lo[:, None] + jit[:, n_strat:] * (hi - lo)[:, None]
        t = np.concatenate([t_strat, t_surf], axis=1)
    else:
        t = t_strat
    t.sort(axis=1)
    return t


def render_from_samples(t: np.ndarray, delta: np.ndarray, s, c, sigma,
                        window: float, use_window: bool = True):
    """Core readout from evaluated samples.

    t/delta are (R, S) numpy arrays; s (R, S), c (R, S, 3) and sigma (R, S)
    may be tape Vars. Returns (color (R,3), depth (R,), weights (R,S),
    weight_sum (R,)); color/depth are weight-normalized.
    """
    rn, sn = t.shape
    optical = sigma * delta
    trans = ad.vexp(-ad.exclusive_cumsum(optical, axis=-1))
    alpha = 1.0 - ad.vexp(-optical)
    w = trans * alpha
    if use_window:
        keep = _surface_window_mask(np.asarray(ad.value_of(s)), t, window)
        w = w * keep
    wsum = ad.vsum(w, axis=-1)
    denom = ad.maximum(wsum, 1e-12)
    depth = ad.vsum(w * t, axis=-1) / denom
    color = ad.vsum(ad.reshape(w, (rn, sn, 1)) * c, axis=1) / ad.reshape(denom, (rn, 1))
    return color, depth, w, wsum


def _surface_window_mask(sv: np.ndarray, t: np.ndarray, window: float) -> np.ndarray:
    """Restrict weights to +-window around the first +to- SDF crossing.

    The two bracketing samples always stay inside the window; rays without
    a crossing are left unmasked.
    """
    r, n = sv.shape
    if n < 2:
        return np.ones_like(t)
    crossings = (sv[:, :-1] > 0.0) & (sv[:, 1:] <= 0.0)
    has = crossings.any(axis=1)
    j = np.argmax(crossings, axis=1)
    rows = np.arange(r)
    s0 = sv[rows, j]
    s1 = sv[rows, np.minimum(j + 1, n - 1)]
    t0 = t[rows, j]
    t1 = t[rows, np.minimum(j + 1, n - 1)]
    frac = np.where(np.abs(s0 - s1) > 1e-12, s0 / np.maximum(s0 - s1, 1e-12), 0.0)
    tc = t0 + np.clip(frac, 0.0, 1.0) * (t1 - t0)
    keep = np.abs(t - tc[:, None]) <= window
    keep[rows, j] = True
    keep[rows, np.minimum(j + 1, n - 1)] = True
    keep = np.where(has[:, None], keep, True)
    return keep.astype(np.float64)


def render_ray(model: FieldModel, ray: Ray, samples: RaySampleSet, params=None):
    """Render one ray: returns (color (3,), depth-range, weights (S,))."""
    out = render_rays(
        model,
        origins=np.asarray(ray.origin)[None, :],
        dirs=np.asarray(ray.direction)[None, :],
        t=np.atleast_2d(samples.t),
        delta=np.atleast_2d(samples.delta),
        params=params)
    return out.color[0], out.depth[0], out.weights[0]


@dataclass
class RenderOut:
    """Batch render products; fields may be tape Vars during optimization."""
    color: object      # (R, 3)
    depth: object      # (R,) range along the ray
    weights: object    # (R, S)
    weight_sum: object  # (R,)
    s: object          # (R, S) SDF at the samples
    sigma: object      # (R, S)


def render_rays(model: FieldModel, origins, dirs, t: np.ndarray, delta: np.ndarray,
                params=None, use_window: bool = True) -> RenderOut:
    """Batch render along rays; origins/dirs may be tape Vars (pose gradients)."""
    rn, sn = t.shape
    if ad.value_of(t).ndim != 2:
        raise ValueError("t must be (R, S)")
    o = ad.reshape(origins, (-1, 1, 3)) if isinstance(origins, ad.Var) else np.asarray(origins)[:, None, :]
    d = ad.reshape(dirs, (-1, 1, 3)) if isinstance(dirs, ad.Var) else np.asarray(dirs)[:, None, :]
    pts = o + d * t[:, :, None]
    pts_flat = ad.reshape(pts, (rn * sn, 3))
    s, c = decode(model, pts_flat, params)
    sigma = sdf_to_density(s, model.truncation)
    s2 = ad.reshape(s, (rn, sn))
    sigma2 = ad.reshape(sigma, (rn, sn))
    c2 = ad.reshape(c, (rn, sn, 3))
    color, depth, w, wsum = render_from_samples(t, delta, s2, c2, sigma2,
                                                model.truncation, use_window)
    return RenderOut(color, depth, w, wsum, s2, sigma2)


def pixel_rays(pose: geo.Pose, K: geo.Intrinsics, pixels: np.ndarray):
    """World-space rays through pixel centers.

    Returns (origins (N,3), dirs (N,3) unit, rho (N,)) where rho converts
    z-depth to range along the ray (range = z * rho). Differentiable in the
    pose when its fields are tape Vars.
    """
    pv = np.asarray(ad.value_of(pixels), dtype=np.float64)
    a = (pv[:, 0] - K.cx) / K.fx
    b = (pv[:, 1] - K.cy) / K.fy
    cam = np.stack([a, b, np.ones_like(a)], axis=-1)
    rho = np.linalg.norm(cam, axis=-1)
    cam_unit = cam / rho[:, None]
    dirs = ad.einsum2("ij,nj->ni", pose.rotation, cam_unit)
    n = pv.shape[0]
    if isinstance(pose.translation, ad.Var):
        origins = ad.reshape(pose.translation, (1, 3)) + np.zeros((n, 3))
    else:
        origins = np.broadcast_to(np.asarray(pose.translation), (n, 3)).copy()
    return origins, dirs, rho


def render_frame(model: FieldModel, pose: geo.Pose, K: geo.Intrinsics,
                 pixels: np.ndarray, cfg: RenderConfig, seed: int = 0,
                 depth_priors: Optional[np.ndarray] = None
                 ) -> Tuple[np.ndarray, np.ndarray]:
    """Render pixels independently; plain numpy, order-independent.

    depth_priors are z-depths (NaN/<=0 = none); returns (colors (N, 3),
    z-depths (N,)).
    """
    pixels = np.asarray(pixels)
    if pixels.size == 0:
        return np.zeros((0, 3)), np.zeros((0,))
    bad = ((pixels[:, 0] < 0) | (pixels[:, 0] > K.width - 1)
           | (pixels[:, 1] < 0) | (pixels[:, 1] > K.height - 1))
    if np.any(bad):
        raise ValueError("pixels outside image bounds")
    origins, dirs, rho = pixel_rays(pose, K, pixels)
    if depth_priors is None:
        priors = np.full(len(pixels), np.nan)
    else:
        dp = np.asarray(depth_priors, dtype=np.float64)
        priors = np.where(dp > 0, dp * rho, np.nan)
    t = sample_depth_hash(pixels, seed, cfg.near, cfg.far, cfg.n_strat, cfg.n_surf,
                          priors, model.truncation)
    delta = _spacings(t, cfg.far)
    out = render_rays(model, origins, dirs, t, delta)
    z = np.where(np.asarray(out.weight_sum) > 1e-12, np.asarray(out.depth) / rho, 0.0)
    return np.asarray(out.color), z
