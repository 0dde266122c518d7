"""The online pipeline: per-frame tracking against the map and the previous
frame, keyframe selection, and global map optimization.

Tracking minimizes the total loss over a 6-DoF twist around the motion
model's guess (map parameters frozen); mapping runs single gradient
iterations over the field parameters and all keyframe twists except the
gauge-fixing first keyframe. The optimizer is moment-free gradient descent
with per-block max-norm step scaling; tracking backtracks (halves the step
on a loss increase) and always returns the lowest-loss pose seen.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from . import losses as ls
from .features import Frame, match_features
from .field import FieldModel
from .renderer import render_rays, sample_depth_batch, _spacings, pixel_rays


class TrackingDiverged(Exception):
    """Tracking ended non-finite or with an absurd reprojection residual."""


@dataclass
class TrackerState:
    prev_pose: Optional[geo.Pose] = None
    prev_prev_pose: Optional[geo.Pose] = None
    prev_frame: Optional[Frame] = None
    budget: int = 100
    lr_pose: float = 1e-3


@dataclass
class KeyframeEntry:
    index: int
    frame: Frame
    pose: geo.Pose  # refined by mapping, except entry 0


@dataclass
class KeyframeDatabase:
    stride: int = 5
    entries: List[KeyframeEntry] = field(default_factory=list)

    def add(self, index: int, frame: Frame, pose: geo.Pose) -> None:
        if self.entries and frame.timestamp <= self.entries[-1].frame.timestamp:
            raise ValueError("keyframe timestamps must be strictly increasing")
        self.entries.append(KeyframeEntry(index, frame, pose.numpy()))

    def __len__(self):
        return len(self.entries)


def select_keyframe(index: int, stride: int) -> bool:
    """Frame 0 and every stride-th processed frame become keyframes."""
    return index % stride == 0


def init_pose_guess(state: TrackerState) -> geo.Pose:
    """Constant-velocity extrapolation; identity velocity with one pose;
    world-anchoring identity with none."""
    if state.prev_pose is None:
        return geo.Pose.identity()
    if state.prev_prev_pose is None:
        return state.prev_pose
    vel = state.prev_pose.compose(state.prev_prev_pose.inverse())
    guess = vel.compose(state.prev_pose)
    return geo.Pose(geo.orthonormalize(np.asarray(guess.rotation)),
                    np.asarray(guess.translation))


def _normalized_step(g: np.ndarray, lr: float) -> np.ndarray:
    return -lr * g / (np.abs(g).max() + 1e-12)


def _sample_valid_pixels(frame: Frame, count: int, rng: np.random.Generator
                         ) -> Optional[np.ndarray]:
    vs, us = np.nonzero(frame.depth > 0)
    if len(vs) == 0:
        return None
    sel = rng.choice(len(vs), size=min(count, len(vs)), replace=False)
    return np.stack([us[sel], vs[sel]], axis=-1).astype(np.float64)


@dataclass
class TrackInfo:
    loss: float
    iterations: int
    accepted: int
    median_reproj: float
    n_matches: int
    n_patches: int


def track_frame(frame: Frame, state: TrackerState, model: FieldModel,
                weights: ls.LossWeights, cfg, frame_index: int) -> Tuple[geo.Pose, TrackInfo]:
    """Estimate the camera-to-world pose of `frame`.

    Map parameters stay frozen; only the twist around the motion-model
    guess is optimized. Raises TrackingDiverged on a non-finite final loss
    or a median match reprojection error above a quarter image width.
    """
    prev = state.prev_frame
    K = frame.K
    eps = model.truncation
    guess = init_pose_guess(state)
    rng_pix = np.random.default_rng(np.random.SeedSequence((cfg.seed, 101, frame_index)))
    rng_smp = np.random.default_rng(np.random.SeedSequence((cfg.seed, 103, frame_index)))

    need_render = weights.w_photo > 0 or weights.w_tsdf > 0
    need_patches = weights.w_rgbwarp > 0 or weights.w_depthwarp > 0
    need_features = weights.w_fp > 0 or weights.w_fd > 0

    # fixed per-frame ray batch against the current map
    pixels = _sample_valid_pixels(frame, cfg.pixels_track, rng_pix)
    t = delta = gt_rgb = gt_range = None
    if pixels is not None and need_render:
        _, _, rho = pixel_rays(geo.Pose.identity(), K, pixels)
        ui = pixels[:, 0].astype(np.int64)
        vi = pixels[:, 1].astype(np.int64)
        gt_rgb = frame.rgb[vi, ui]
        gt_range = frame.depth[vi, ui] * rho
        t = sample_depth_batch(cfg.near, cfg.far, cfg.n_strat, cfg.n_surf,
                               gt_range, eps, rng_smp)
        delta = _spacings(t, cfg.far)

    # previous-frame constants
    matches = None
    depths_i = None
    patches = None
    if prev is not None:
        matches = match_features(prev.keypoints, prev.descriptors,
                                 frame.keypoints, frame.descriptors)
        if len(matches):
            from .features import bilinear_sample
            depths_i = np.asarray(bilinear_sample(prev.depth, matches.q_i))
            ok = depths_i > 0
            matches = type(matches)(matches.q_i[ok], matches.q_j[ok], matches.score[ok])
            depths_i = depths_i[ok]
        if need_patches:
            patches = prev.cache.get("patches")
            if patches is None:
                anchors = prev.keypoints[: cfg.max_patches] if prev.keypoints is not None else np.zeros((0, 2))
                patches = ls.build_patches(prev, anchors)
                prev.cache["patches"] = patches

    tol = eps / 2.0
    depth_norm = max(cfg.far, 1e-6)

    def program(p, base_pose, mask_patch, mask_corr):
        pose = geo.se3_exp(p["xi"]).compose(base_pose)
        terms: Dict[str, object] = {}
        if pixels is not None and need_render:
            origins, dirs, _ = pixel_rays(pose, K, pixels)
            out = render_rays(model, origins, dirs, t, delta)
            if weights.w_photo > 0:
                terms["photo"] = ls.photometric_loss(out.color, gt_rgb)
            if weights.w_tsdf > 0:
                l_tsdf, _ = ls.sdf_losses(out.s, t, gt_range, eps)
                terms["tsdf"] = l_tsdf
        if prev is not None and (need_patches or need_features):
            T_ij = pose.inverse().compose(state.prev_pose)
            if need_patches and patches is not None and len(patches.centers):
                try:
                    l_rgb, l_dep = ls.warp_losses_rgbd(prev, frame, T_ij, patches,
                                                       mask_patch, depth_norm)
                    if weights.w_rgbwarp > 0:
                        terms["rgbwarp"] = l_rgb
                    if weights.w_depthwarp > 0:
                        terms["depthwarp"] = l_dep
                except ls.AllInvisible:
                    pass
            if need_features and matches is not None and len(matches):
                try:
                    if weights.w_fp > 0:
                        terms["fp"] = ls.feature_point_loss(matches, depths_i, T_ij,
                                                            K, mask_corr)
                    if weights.w_fd > 0:
                        terms["fd"] = ls.feature_descriptor_loss(
                            prev.descriptors, frame.descriptors, matches, depths_i,
                            T_ij, K, mask_corr, cfg.descriptor_pairing)
                except ls.AllInvisible:
                    pass
        return ls.total_loss(terms, weights)

    zero = np.zeros(6)
    base = guess
    best_loss = np.inf
    best_pose = guess
    best_grad = None
    lr = cfg.lr_pose
    accepted = 0
    iters = int(state.budget)
    for _ in range(iters):
        mask_patch = mask_corr = None
        T_val = base.inverse().compose(state.prev_pose) if prev is not None else None
        if prev is not None and need_patches and patches is not None and len(patches.centers):
            mask_patch = ls.patch_visibility(frame, T_val, patches, tol)
        if prev is not None and need_features and matches is not None and len(matches):
            mask_corr = ls.correspondence_visibility(frame, matches, depths_i, T_val, tol)
        try:
            rep = ad.evaluate_with_gradients(
                lambda p: program(p, base, mask_patch, mask_corr), {"xi": zero})
        except ad.NonFiniteLoss:
            lr = max(lr * 0.5, cfg.lr_pose * 1e-4)
            base = best_pose
            if best_grad is None:
                break
            base = geo.se3_exp(_normalized_step(best_grad, lr)).compose(best_pose)
            continue
        if rep.loss < best_loss:
            best_loss = rep.loss
            best_pose = base
            best_grad = rep.gradients["xi"]
            lr = min(lr * 1.15, cfg.lr_pose * 10.0)
            accepted += 1
        else:
            lr = max(lr * 0.5, cfg.lr_pose * 1e-4)
        if np.abs(best_grad).max() < 1e-14:
            break
        base = geo.se3_exp(_normalized_step(best_grad, lr)).compose(best_pose)

    best_pose = geo.Pose(geo.orthonormalize(np.asarray(best_pose.rotation)),
                         np.asarray(best_pose.translation))

    median_reproj = float("nan")
    if matches is not None and len(matches) >= 8:
        T_val = best_pose.inverse().compose(state.prev_pose)
        proj = np.asarray(geo.project_clamped(K, T_val.apply(
            np.asarray(geo.backproject(K, matches.q_i, np.maximum(depths_i, 1e-9))))))
        err = np.linalg.norm(matches.q_j - proj, axis=-1)
        median_reproj = float(np.median(err))
    info = TrackInfo(loss=float(best_loss), iterations=iters, accepted=accepted,
                     median_reproj=median_reproj,
                     n_matches=0 if matches is None else len(matches),
                     n_patches=0 if patches is None else len(patches.centers))
    if not np.isfinite(best_loss):
        raise TrackingDiverged(f"non-finite tracking loss at frame {frame_index}")
    if np.isfinite(median_reproj) and median_reproj > 0.25 * K.width:
        raise TrackingDiverged(
            f"median reprojection {median_reproj:.1f}px exceeds {0.25 * K.width:.1f}px")
    return best_pose, info


def map_step(db: KeyframeDatabase, model: FieldModel, weights: ls.LossWeights,
             cfg, rng: np.random.Generator, refine_poses: bool = True) -> float:
    """One global optimization iteration over the field (and keyframe twists
    except the first keyframe). Rays are sampled uniformly across keyframes.
    On a non-finite loss the step is aborted with parameters untouched."""
    if not len(db):
        raise ValueError("keyframe database is empty")
    eps = model.truncation
    n_kf = len(db)
    counts = np.full(n_kf, cfg.pixels_map // n_kf, dtype=int)
    counts[: cfg.pixels_map % n_kf] += 1

    groups = []
    for entry, cnt in zip(db.entries, counts):
        if cnt == 0:
            continue
        pix = _sample_valid_pixels(entry.frame, cnt, rng)
        if pix is None:
            continue
        _, _, rho = pixel_rays(geo.Pose.identity(), entry.frame.K, pix)
        ui = pix[:, 0].astype(np.int64)
        vi = pix[:, 1].astype(np.int64)
        gt_rgb = entry.frame.rgb[vi, ui]
        gt_range = entry.frame.depth[vi, ui] * rho
        t = sample_depth_batch(cfg.near, cfg.far, cfg.n_strat, cfg.n_surf,
                               gt_range, eps, rng)
        a = (pix[:, 0] - entry.frame.K.cx) / entry.frame.K.fx
        b = (pix[:, 1] - entry.frame.K.cy) / entry.frame.K.fy
        cam = np.stack([a, b, np.ones_like(a)], axis=-1)
        cam /= np.linalg.norm(cam, axis=-1, keepdims=True)
        groups.append({"entry": entry, "cam": cam, "t": t, "rgb": gt_rgb,
                       "range": gt_range})
    if not groups:
        raise ValueError("no valid pixels across keyframes")

    t_all = np.concatenate([g["t"] for g in groups], axis=0)
    delta_all = _spacings(t_all, cfg.far)
    rgb_all = np.concatenate([g["rgb"] for g in groups], axis=0)
    range_all = np.concatenate([g["range"] for g in groups], axis=0)

    params = dict(model.param_blocks())
    movable = [g for g in groups if g["entry"].index != 0] if refine_poses else []
    if movable:
        params["kf.xi"] = np.zeros((len(movable), 6))
    rng_smooth_seed = rng.integers(0, 2 ** 31)

    def program(p):
        origins_parts = []
        dirs_parts = []
        if movable:
            Rs, ts = geo.se3_exp_batch_small(p["kf.xi"])
        mi = 0
        for g in groups:
            entry = g["entry"]
            R0 = np.asarray(entry.pose.rotation)
            t0 = np.asarray(entry.pose.translation)
            if movable and entry.index != 0:
                Rk = ad.matmul(Rs[mi], R0)
                tk = ad.einsum2("ij,j->i", Rs[mi], t0) + ts[mi]
                mi += 1
                d = ad.einsum2("ij,nj->ni", Rk, g["cam"])
                o = ad.reshape(tk, (1, 3)) + np.zeros((len(g["cam"]), 3))
            else:
                d = g["cam"] @ R0.T
                o = np.broadcast_to(t0, (len(g["cam"]), 3)).copy()
            origins_parts.append(o)
            dirs_parts.append(d)
        origins = ad.concatenate(origins_parts, axis=0)
        dirs = ad.concatenate(dirs_parts, axis=0)
        out = render_rays(model, origins, dirs, t_all, delta_all, params=p)
        terms: Dict[str, object] = {}
        if weights.w_photo > 0:
            terms["photo"] = ls.photometric_loss(out.color, rgb_all)
        if weights.w_tsdf > 0 or weights.w_free > 0:
            l_tsdf, l_free = ls.sdf_losses(out.s, t_all, range_all, eps)
            if weights.w_tsdf > 0:
                terms["tsdf"] = l_tsdf
            if weights.w_free > 0:
                terms["free"] = l_free
        if weights.w_smooth > 0:
            rng_s = np.random.default_rng(rng_smooth_seed)
            terms["smooth"] = ls.smoothness_loss(model, rng_s, p)
        return ls.total_loss(terms, weights)

    rep = ad.evaluate_with_gradients(program, params)  # NonFiniteLoss aborts pre-update

    blocks = model.param_blocks()
    updated = {name: arr + _normalized_step(rep.gradients[name], cfg.lr_map)
               for name, arr in blocks.items()}
    model.set_param_blocks(updated)
    if movable:
        g_xi = rep.gradients["kf.xi"]
        for mi, g in enumerate(movable):
            step = _normalized_step(g_xi[mi], cfg.lr_pose)
            if np.abs(step).max() > 0:
                g["entry"].pose = geo.se3_exp(step).compose(g["entry"].pose)
                g["entry"].pose = geo.Pose(
                    geo.orthonormalize(np.asarray(g["entry"].pose.rotation)),
                    np.asarray(g["entry"].pose.translation))
    return rep.loss


@dataclass
class SlamResult:
    timestamps: np.ndarray
    poses: List[geo.Pose]
    model: FieldModel
    events: List[dict]
    diverged_frames: List[int]
    keyframe_indices: List[int]
    db: KeyframeDatabase


def run_sequence(frames: Sequence[Frame], cfg, model: Optional[FieldModel] = None
                 ) -> SlamResult:
    """Full pipeline over an ordered frame sequence.

    Per frame: extract features -> motion-model guess -> tracking ->
    keyframe selection -> mapping iterations. A diverged track commits the
    motion-model pose, is excluded from keyframing, and is recorded in the
    event log; the pipeline keeps going.
    """
    if not frames:
        raise ValueError("need at least one frame")
    if model is None:
        model = FieldModel.create(cfg.bounds_lo, cfg.bounds_hi,
                                  truncation=cfg.truncation, levels=cfg.levels,
                                  base_res=cfg.base_res, growth=cfg.growth,
                                  feat_dim=cfg.feat_dim, hidden=cfg.hidden,
                                  n_hidden_layers=cfg.hidden_layers, seed=cfg.seed)
    weights = cfg.weights
    db = KeyframeDatabase(stride=cfg.keyframe_stride)
    state = TrackerState(budget=cfg.track_iters, lr_pose=cfg.lr_pose)
    events: List[dict] = []
    diverged: List[int] = []
    kf_indices: List[int] = []
    poses: List[geo.Pose] = []
    timestamps: List[float] = []

    for idx, frame in enumerate(frames):
        t0 = time.monotonic()
        frame.extract(cfg.max_keypoints)
        events.append({"frame": idx, "phase": "features", "loss": 0.0,
                       "iterations": 0, "wall_time_s": time.monotonic() - t0})
        t0 = time.monotonic()
        if idx == 0:
            pose = geo.Pose.identity()
            info = None
            events.append({"frame": 0, "phase": "track", "loss": 0.0,
                           "iterations": 0, "wall_time_s": time.monotonic() - t0})
        else:
            try:
                pose, info = track_frame(frame, state, model, weights, cfg, idx)
                events.append({"frame": idx, "phase": "track", "loss": info.loss,
                               "iterations": info.iterations,
                               "wall_time_s": time.monotonic() - t0})
            except TrackingDiverged as exc:
                pose = init_pose_guess(state)
                diverged.append(idx)
                events.append({"frame": idx, "phase": "track_diverged",
                               "loss": float("nan"), "iterations": cfg.track_iters,
                               "wall_time_s": time.monotonic() - t0,
                               "detail": str(exc)})
        poses.append(pose)
        timestamps.append(frame.timestamp)

        is_kf = select_keyframe(idx, cfg.keyframe_stride) and idx not in diverged
        if is_kf:
            db.add(idx, frame, pose)
            kf_indices.append(idx)

        t0 = time.monotonic()
        rng_map = np.random.default_rng(np.random.SeedSequence((cfg.seed, 211, idx)))
        map_loss = float("nan")
        aborted = 0
        for _ in range(cfg.map_iters):
            try:
                map_loss = map_step(db, model, weights, cfg, rng_map,
                                    refine_poses=cfg.refine_keyframe_poses)
            except ad.NonFiniteLoss:
                aborted += 1
        events.append({"frame": idx, "phase": "map", "loss": map_loss,
                       "iterations": cfg.map_iters, "aborted": aborted,
                       "wall_time_s": time.monotonic() - t0})

        state.prev_prev_pose = state.prev_pose
        state.prev_pose = pose
        state.prev_frame = frame

    # keyframe poses may have been refined by mapping
    kf_pose = {e.index: e.pose for e in db.entries}
    poses = [kf_pose.get(i, p) for i, p in enumerate(poses)]
    return SlamResult(np.asarray(timestamps), poses, model, events, diverged,
                      kf_indices, db)
