"""Fused trilinear-interpolation kernels for the feature grid hot path.

Numba-compiled when available (sequential, no fastmath, so results are
deterministic); otherwise a vectorized numpy fallback with identical
per-point arithmetic order. Both paths are deterministic run-to-run; the
package never mixes paths within one process.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is present in CI images
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def _interp_fwd_nb(feats, res, u, out, i0, frac):  # pragma: no cover - jitted
    n = u.shape[0]
    fdim = feats.shape[1]
    for k in range(n):
        for a in range(3):
            x = u[k, a]
            if x < 0.0:
                x = 0.0
            m = res - 1.0
            if x > m:
                x = m
            i = int(x)
            if i > res - 2:
                i = res - 2
            i0[k, a] = i
            frac[k, a] = x - i
        fx, fy, fz = frac[k, 0], frac[k, 1], frac[k, 2]
        ix, iy, iz = i0[k, 0], i0[k, 1], i0[k, 2]
        base = (ix * res + iy) * res + iz
        w000 = (1 - fx) * (1 - fy) * (1 - fz)
        w001 = (1 - fx) * (1 - fy) * fz
        w010 = (1 - fx) * fy * (1 - fz)
        w011 = (1 - fx) * fy * fz
        w100 = fx * (1 - fy) * (1 - fz)
        w101 = fx * (1 - fy) * fz
        w110 = fx * fy * (1 - fz)
        w111 = fx * fy * fz
        for c in range(fdim):
            out[k, c] = (w000 * feats[base, c]
                         + w001 * feats[base + 1, c]
                         + w010 * feats[base + res, c]
                         + w011 * feats[base + res + 1, c]
                         + w100 * feats[base + res * res, c]
                         + w101 * feats[base + res * res + 1, c]
                         + w110 * feats[base + res * res + res, c]
                         + w111 * feats[base + res * res + res + 1, c])


@njit(cache=True)
def _vjp_feats_nb(g, res, i0, frac, grad):  # pragma: no cover - jitted
    n = g.shape[0]
    fdim = g.shape[1]
    for k in range(n):
        fx, fy, fz = frac[k, 0], frac[k, 1], frac[k, 2]
        ix, iy, iz = i0[k, 0], i0[k, 1], i0[k, 2]
        base = (ix * res + iy) * res + iz
        w = ((1 - fx) * (1 - fy) * (1 - fz), (1 - fx) * (1 - fy) * fz,
             (1 - fx) * fy * (1 - fz), (1 - fx) * fy * fz,
             fx * (1 - fy) * (1 - fz), fx * (1 - fy) * fz,
             fx * fy * (1 - fz), fx * fy * fz)
        offs = (0, 1, res, res + 1, res * res, res * res + 1,
                res * res + res, res * res + res + 1)
        for c in range(fdim):
            gv = g[k, c]
            for j in range(8):
                grad[base + offs[j], c] += w[j] * gv


@njit(cache=True)
def _vjp_pts_nb(g, feats, res, i0, frac, inside, scale, gp):  # pragma: no cover
    n = g.shape[0]
    fdim = feats.shape[1]
    for k in range(n):
        fx, fy, fz = frac[k, 0], frac[k, 1], frac[k, 2]
        ix, iy, iz = i0[k, 0], i0[k, 1], i0[k, 2]
        base = (ix * res + iy) * res + iz
        r = res
        rr = res * res
        dx = 0.0
        dy = 0.0
        dz = 0.0
        for c in range(fdim):
            f000 = feats[base, c]
            f001 = feats[base + 1, c]
            f010 = feats[base + r, c]
            f011 = feats[base + r + 1, c]
            f100 = feats[base + rr, c]
            f101 = feats[base + rr + 1, c]
            f110 = feats[base + rr + r, c]
            f111 = feats[base + rr + r + 1, c]
            gv = g[k, c]
            dx += gv * ((1 - fy) * (1 - fz) * (f100 - f000)
                        + (1 - fy) * fz * (f101 - f001)
                        + fy * (1 - fz) * (f110 - f010)
                        + fy * fz * (f111 - f011))
            dy += gv * ((1 - fx) * (1 - fz) * (f010 - f000)
                        + (1 - fx) * fz * (f011 - f001)
                        + fx * (1 - fz) * (f110 - f100)
                        + fx * fz * (f111 - f101))
            dz += gv * ((1 - fx) * (1 - fy) * (f001 - f000)
                        + (1 - fx) * fy * (f011 - f010)
                        + fx * (1 - fy) * (f101 - f100)
                        + fx * fy * (f111 - f110))
        gp[k, 0] = dx * scale[0] * inside[k, 0]
        gp[k, 1] = dy * scale[1] * inside[k, 1]
        gp[k, 2] = dz * scale[2] * inside[k, 2]


def interp_forward(feats: np.ndarray, res: int, u: np.ndarray):
    """Trilinear interpolation at grid coordinates u (N, 3) in [0, res-1].

    Returns (out (N, F), i0 (N, 3) int64, frac (N, 3)).
    """
    n = u.shape[0]
    fdim = feats.shape[1]
    out = np.empty((n, fdim))
    i0 = np.empty((n, 3), dtype=np.int64)
    frac = np.empty((n, 3))
    if HAVE_NUMBA:
        _interp_fwd_nb(feats, res, u, out, i0, frac)
        return out, i0, frac
    uc = np.clip(u, 0.0, res - 1.0)
    i0[:] = np.minimum(uc.astype(np.int64), res - 2)
    frac[:] = uc - i0
    base = (i0[:, 0] * res + i0[:, 1]) * res + i0[:, 2]
    offs = np.array([0, 1, res, res + 1, res * res, res * res + 1,
                     res * res + res, res * res + res + 1])
    G = feats[base[:, None] + offs[None, :]]  # (N, 8, F)
    w8 = _weights8(frac)
    out[:] = np.einsum("nkf,nk->nf", G, w8)
    return out, i0, frac


def _weights8(frac: np.ndarray) -> np.ndarray:
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    return np.stack([
        (1 - fx) * (1 - fy) * (1 - fz), (1 - fx) * (1 - fy) * fz,
        (1 - fx) * fy * (1 - fz), (1 - fx) * fy * fz,
        fx * (1 - fy) * (1 - fz), fx * (1 - fy) * fz,
        fx * fy * (1 - fz), fx * fy * fz], axis=1)


def interp_vjp_feats(g: np.ndarray, res: int, fdim: int, i0: np.ndarray,
                     frac: np.ndarray) -> np.ndarray:
    grad = np.zeros((res ** 3, fdim))
    if HAVE_NUMBA:
        _vjp_feats_nb(g, res, i0, frac, grad)
        return grad
    base = (i0[:, 0] * res + i0[:, 1]) * res + i0[:, 2]
    offs = np.array([0, 1, res, res + 1, res * res, res * res + 1,
                     res * res + res, res * res + res + 1])
    idx = (base[:, None] + offs[None, :]).reshape(-1)
    w8 = _weights8(frac)
    wg = w8[:, :, None] * g[:, None, :]
    for c in range(fdim):
        grad[:, c] = np.bincount(idx, weights=wg[:, :, c].reshape(-1),
                                 minlength=res ** 3)
    return grad


def interp_vjp_points(g: np.ndarray, feats: np.ndarray, res: int, i0: np.ndarray,
                      frac: np.ndarray, inside: np.ndarray,
                      scale: np.ndarray) -> np.ndarray:
    n = g.shape[0]
    gp = np.empty((n, 3))
    if HAVE_NUMBA:
        _vjp_pts_nb(g, feats, res, i0, frac, inside.astype(np.float64), scale, gp)
        return gp
    base = (i0[:, 0] * res + i0[:, 1]) * res + i0[:, 2]
    offs = np.array([0, 1, res, res + 1, res * res, res * res + 1,
                     res * res + res, res * res + res + 1])
    G = feats[base[:, None] + offs[None, :]].reshape(n, 2, 2, 2, -1)
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    wx = np.stack([1 - fx, fx], axis=1)
    wy = np.stack([1 - fy, fy], axis=1)
    wz = np.stack([1 - fz, fz], axis=1)
    dX = G[:, 1] - G[:, 0]
    dY = G[:, :, 1] - G[:, :, 0]
    dZ = G[:, :, :, 1] - G[:, :, :, 0]
    gp[:, 0] = (np.einsum("nabf,na,nb->nf", dX, wy, wz) * g).sum(-1) * scale[0]
    gp[:, 1] = (np.einsum("nabf,na,nb->nf", dY, wx, wz) * g).sum(-1) * scale[1]
    gp[:, 2] = (np.einsum("nabf,na,nb->nf", dZ, wx, wy) * g).sum(-1) * scale[2]
    return gp * inside
