"""SE(3) poses, the pinhole camera, reprojection, and plane-induced homographies.

Everything here is written against the autodiff dispatchers, so all
operations accept either plain numpy arrays or tape Vars; when a pose is
built from a twist Var the outputs carry gradients with respect to that
twist. Poses map camera coordinates to world coordinates
(X_world = R @ X_cam + t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


class BehindCamera(Exception):
    """Projection of a point with non-positive camera-frame depth."""


class NonPositiveDepth(Exception):
    """Back-projection with a non-positive depth value."""


class DegeneratePlane(Exception):
    """Homography of a plane passing (numerically) through the camera center."""


_SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def matrix_inv(self) -> np.ndarray:
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform. Fields may be numpy arrays or tape Vars."""
    rotation: object  # (3, 3)
    translation: object  # (3,)

    def __post_init__(self):
        if isinstance(self.rotation, np.ndarray):
            R = np.asarray(self.rotation, dtype=np.float64)
            if R.shape != (3, 3):
                raise ValueError("rotation must be 3x3")
            err = np.abs(R @ R.T - np.eye(3)).max()
            if err > 1e-7 or abs(np.linalg.det(R) - 1.0) > 1e-7:
                raise ValueError(f"rotation is not orthonormal (err={err:.2e})")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        R = ad.matmul(self.rotation, other.rotation)
        t = ad.einsum2("ij,j->i", self.rotation, other.translation) + self.translation
        return Pose(_maybe_array(R), _maybe_array(t))

    def inverse(self) -> "Pose":
        Rt = ad.transpose(self.rotation)
        t = -ad.einsum2("ij,j->i", Rt, self.translation)
        return Pose(_maybe_array(Rt), _maybe_array(t))

    def apply(self, points):
        """Transform (3,) or (N, 3) camera-frame points into the world frame."""
        pts = points
        if ad.value_of(pts).ndim == 1:
            return ad.einsum2("ij,j->i", self.rotation, pts) + self.translation
        return ad.einsum2("ij,nj->ni", self.rotation, pts) + self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = ad.value_of(self.rotation)
        T[:3, 3] = ad.value_of(self.translation)
        return T

    def numpy(self) -> "Pose":
        return Pose(np.array(ad.value_of(self.rotation)), np.array(ad.value_of(self.translation)))


def _maybe_array(x):
    return x if isinstance(x, ad.Var) else np.asarray(x, dtype=np.float64)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto SO(3) (closest in Frobenius norm)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def _hat(w):
    zero = ad.value_of(w)[0] * 0.0 if not isinstance(w, ad.Var) else w[0] * 0.0
    r0 = ad.stack([zero, -w[2], w[1]])
    r1 = ad.stack([w[2], zero, -w[0]])
    r2 = ad.stack([-w[1], w[0], zero])
    return ad.stack([r0, r1, r2], axis=0)


def se3_exp(xi) -> Pose:
    """Exponential map of a twist (3 rotation, 3 translation) to a Pose.

    Rodrigues formula with the exact SE(3) translation coupling; switches
    to the quadratic Taylor series below an angle of 1e-8 so the map stays
    differentiable at zero.
    """
    xi_val = ad.value_of(xi)
    if xi_val.shape != (6,):
        raise ValueError("twist must be a 6-vector")
    if not np.all(np.isfinite(xi_val)):
        raise ValueError("twist has non-finite components")
    w = xi[:3]
    v = xi[3:]
    th2 = ad.vsum(w * w)
    theta = float(np.sqrt(ad.value_of(th2)))
    W = _hat(w)
    W2 = ad.matmul(W, W)
    if theta < _SMALL_ANGLE:
        A = 1.0 - th2 / 6.0
        B = 0.5 - th2 / 24.0
        C = 1.0 / 6.0 - th2 / 120.0
    else:
        th = ad.vsqrt(th2)
        A = ad.vsin(th) / th
        B = (1.0 - ad.vcos(th)) / th2
        C = (th - ad.vsin(th)) / (th2 * th)
    eye = np.eye(3)
    R = eye + A * W + B * W2
    V = eye + B * W + C * W2
    t = ad.einsum2("ij,j->i", V, v)
    return Pose(_maybe_array(R), _maybe_array(t))


def se3_exp_batch_small(xis):
    """Batched exponential map for twists at/near zero: (K, 6) -> (K,3,3), (K,3).

    Uses the quadratic Taylor series of the Rodrigues coefficients, which is
    exact in value and first derivative at xi = 0 (the only point mapping
    re-linearization evaluates it at); error grows as O(theta^3) away from
    zero, so do not use it for finite updates.
    """
    w = xis[:, :3]
    v = xis[:, 3:]
    kn = ad.value_of(xis).shape[0]
    zero = w[:, 0] * 0.0
    r0 = ad.stack([zero, -w[:, 2], w[:, 1]], axis=-1)
    r1 = ad.stack([w[:, 2], zero, -w[:, 0]], axis=-1)
    r2 = ad.stack([-w[:, 1], w[:, 0], zero], axis=-1)
    W = ad.stack([r0, r1, r2], axis=1)          # (K, 3, 3)
    W2 = ad.matmul(W, W)
    eye = np.broadcast_to(np.eye(3), (kn, 3, 3))
    R = eye + W + 0.5 * W2
    V = eye + 0.5 * W + W2 / 6.0
    t = ad.einsum2("kij,kj->ki", V, v)
    return R, t


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation-vector logarithm of a numpy rotation matrix."""
    cos_angle = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(cos_angle))
    if angle < _SMALL_ANGLE:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if np.pi - angle < 1e-6:
        M = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(M), 0.0))
        k = int(np.argmax(axis))
        axis = M[:, k] / max(axis[k], 1e-12)
        axis = axis / np.linalg.norm(axis)
        return angle * axis
    scale = angle / (2.0 * np.sin(angle))
    return scale * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])


def project(K: Intrinsics, X):
    """Pinhole projection of camera-frame points (3,) or (N, 3) to pixels.

    Raises BehindCamera when any depth is <= 0.
    """
    Xv = ad.value_of(X)
    single = Xv.ndim == 1
    z = X[2] if single else X[..., 2]
    zv = Xv[2] if single else Xv[..., 2]
    if np.any(zv <= 0.0):
        raise BehindCamera("point(s) at non-positive depth")
    if single:
        u = K.fx * X[0] / z + K.cx
        v = K.fy * X[1] / z + K.cy
        return ad.stack([u, v])
    u = K.fx * X[..., 0] / z + K.cx
    v = K.fy * X[..., 1] / z + K.cy
    return ad.stack([u, v], axis=-1)


def project_clamped(K: Intrinsics, X, min_depth: float = 1e-6):
    """Projection with depth clamped away from zero; for masked loss paths
    where visibility handling (not an exception) excludes bad points."""
    single = ad.value_of(X).ndim == 1
    z = ad.maximum(X[2] if single else X[..., 2], min_depth)
    if single:
        return ad.stack([K.fx * X[0] / z + K.cx, K.fy * X[1] / z + K.cy])
    return ad.stack([K.fx * X[..., 0] / z + K.cx,
                     K.fy * X[..., 1] / z + K.cy], axis=-1)


def backproject(K: Intrinsics, q, depth):
    """Lift pixels (2,) or (N, 2) at z-depth `depth` to camera-frame points."""
    dv = ad.value_of(depth)
    if np.any(dv <= 0.0):
        raise NonPositiveDepth("depth must be positive")
    qv = ad.value_of(q)
    if qv.ndim == 1:
        x = (q[0] - K.cx) / K.fx * depth
        y = (q[1] - K.cy) / K.fy * depth
        return ad.stack([x, y, depth * 1.0])
    x = (q[..., 0] - K.cx) / K.fx * depth
    y = (q[..., 1] - K.cy) / K.fy * depth
    return ad.stack([x, y, depth * 1.0], axis=-1)


def reproject(q, depth, T_ij: Pose, K: Intrinsics, clamped: bool = False):
    """Map pixels of frame i with known depth into frame j.

    Returns (pixels_j, in_bounds). Out-of-bounds is a flag, not an error;
    BehindCamera propagates from projection unless `clamped`.
    """
    X_i = backproject(K, q, depth)
    X_j = T_ij.apply(X_i)
    pix = project_clamped(K, X_j) if clamped else project(K, X_j)
    pv = ad.value_of(pix)
    zv = ad.value_of(X_j)[..., 2] if pv.ndim > 1 else ad.value_of(X_j)[2]
    in_bounds = ((pv[..., 0] >= 0.0) & (pv[..., 0] <= K.width - 1.0)
                 & (pv[..., 1] >= 0.0) & (pv[..., 1] <= K.height - 1.0)
                 & (zv > 0.0))
    return pix, in_bounds


def reprojected_depth(q, depth, T_ij: Pose, K: Intrinsics):
    """z-depth of the lifted point expressed in frame j's camera."""
    X_j = T_ij.apply(backproject(K, q, depth))
    return X_j[2] if ad.value_of(X_j).ndim == 1 else X_j[..., 2]


def plane_homography(T_ij: Pose, n, d_plane, K: Intrinsics):
    """Pixel homography of the plane {X : n.X = d_plane} (frame i coordinates).

    H = K (R + t n^T / d) K^-1, scaled so H[2,2] = 1; maps homogeneous
    frame-i pixels on the plane to frame-j pixels. `n` must be unit length
    and d_plane the (positive) distance from frame i's camera center.
    """
    dv = float(ad.value_of(d_plane))
    if dv <= np.finfo(np.float64).eps:
        raise DegeneratePlane(f"plane distance {dv} too small")
    nv = ad.value_of(n)
    if abs(np.linalg.norm(nv) - 1.0) > 1e-6:
        raise ValueError("plane normal must be unit length")
    outer = ad.einsum2("i,j->ij", T_ij.translation, n)
    M = T_ij.rotation + outer / d_plane
    H = ad.matmul(np.asarray(K.matrix), ad.matmul(M, np.asarray(K.matrix_inv)))
    return H / H[2, 2]


def plane_homography_batch(T_ij: Pose, normals, d_planes, K: Intrinsics):
    """Vectorized plane_homography: normals (P, 3), d_planes (P,) -> (P, 3, 3).

    Unnormalized (no H[2,2] scaling); homogeneous application divides it out.
    """
    dvals = ad.value_of(d_planes)
    if np.any(dvals <= np.finfo(np.float64).eps):
        raise DegeneratePlane("plane distance too small")
    scaled_n = normals / ad.reshape(d_planes, (-1, 1)) if isinstance(d_planes, ad.Var) \
        else normals / np.asarray(dvals)[:, None]
    outer = ad.einsum2("i,pj->pij", T_ij.translation, scaled_n)
    M = outer + ad.reshape(T_ij.rotation, (1, 3, 3))
    KM = ad.einsum2("ij,pjk->pik", np.asarray(K.matrix), M)
    return ad.einsum2("pij,jk->pik", KM, np.asarray(K.matrix_inv))


def apply_homography(H, pixels):
    """Apply (3,3) or (P,3,3) homographies to pixels (..., 2) homogeneously."""
    pv = ad.value_of(pixels)
    ones = np.ones(pv.shape[:-1] + (1,))
    hom = ad.concatenate([pixels, ones], axis=-1)
    Hv = ad.value_of(H)
    if Hv.ndim == 2:
        mapped = ad.einsum2("ij,nj->ni", H, ad.reshape(hom, (-1, 3)))
        mapped = ad.reshape(mapped, pv.shape[:-1] + (3,))
    else:
        # H: (P,3,3), pixels: (P, S, 2)
        mapped = ad.einsum2("pij,psj->psi", H, hom)
    # Guard the homogeneous scale away from zero without flipping its sign.
    sign = np.where(ad.value_of(mapped)[..., 2] >= 0.0, 1.0, -1.0)
    w = ad.maximum(mapped[..., 2] * sign, 1e-12)
    return ad.stack([mapped[..., 0] * sign / w, mapped[..., 1] * sign / w], axis=-1)


def rotation_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (x, y, z, w), w >= 0, from a rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            x, w = 0.25 * s, (R[2, 1] - R[1, 2]) / s
            y = (R[0, 1] + R[1, 0]) / s
            z = (R[0, 2] + R[2, 0]) / s
        elif i == 1:
            s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
            y, w = 0.25 * s, (R[0, 2] - R[2, 0]) / s
            x = (R[0, 1] + R[1, 0]) / s
            z = (R[1, 2] + R[2, 1]) / s
        else:
            s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
            z, w = 0.25 * s, (R[1, 0] - R[0, 1]) / s
            x = (R[0, 2] + R[2, 0]) / s
            y = (R[1, 2] + R[2, 1]) / s
    q = np.array([x, y, z, w])
    if q[3] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a quaternion (x, y, z, w)."""
    x, y, z, w = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def quaternion_slerp(q0: np.ndarray, q1: np.ndarray, u: float) -> np.ndarray:
    """Spherical interpolation between two unit quaternions."""
    q0 = q0 / np.linalg.norm(q0)
    q1 = q1 / np.linalg.norm(q1)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1, dot = -q1, -dot
    if dot > 1.0 - 1e-12:
        q = q0 + u * (q1 - q0)
        return q / np.linalg.norm(q)
    ang = np.arccos(np.clip(dot, -1.0, 1.0))
    return (np.sin((1.0 - u) * ang) * q0 + np.sin(u * ang) * q1) / np.sin(ang)
