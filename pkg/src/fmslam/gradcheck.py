"""Seeded finite-difference verification of every differentiable loss.

Each configuration builds a small random field, renders a jittered
two-view pair of a cluttered synthetic scene, and checks the gradients of
the rendering losses (w.r.t. field parameters and the pose twist) and of
every warp / feature loss (w.r.t. the twist) against central differences.
This is the gate the SLAM loop depends on; the CLI exposes it as
`check-grads` and the acceptance suite runs it at 20 configurations.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Dict, List, Tuple

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from . import losses as ls
from . import synthworld as sw
from .features import Frame, bilinear_sample, match_features
from .field import FieldModel
from .renderer import _spacings, render_rays, sample_depth_batch, pixel_rays

_TOL = 1e-4
_STEP = 1e-6


@lru_cache(maxsize=1)
def _base_pair() -> Tuple[sw.AnalyticScene, geo.Intrinsics]:
    scene, _ = sw.scene_cluttered_a()
    K = sw.standard_intrinsics(64, 48)
    return scene, K


def _make_config(seed: int):
    scene, K = _base_pair()
    rng = np.random.default_rng(np.random.SeedSequence((seed, 977)))
    eye = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(1.2, 1.7)])
    look = np.array([rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(0.3, 1.0)])
    p_i = sw.look_at(eye, look)
    jig = np.concatenate([rng.uniform(-0.06, 0.06, 3), rng.uniform(-0.04, 0.04, 3)])
    p_j = p_i.compose(geo.se3_exp(jig))
    far = float(np.linalg.norm(scene.bounds_hi - scene.bounds_lo)) + 1.0
    f_i = sw.render_gt_frame(scene, p_i, K, timestamp=0.0, far=far)
    f_j = sw.render_gt_frame(scene, p_j, K, timestamp=0.1, far=far)
    f_i.extract(40)
    f_j.extract(40)

    model = FieldModel.create(scene.bounds_lo, scene.bounds_hi, truncation=0.1,
                              levels=2, base_res=6, growth=2, feat_dim=2,
                              hidden=8, n_hidden_layers=2, seed=seed)
    for name, arr in model.param_blocks().items():
        if name.startswith("grid"):
            arr += rng.normal(scale=0.05, size=arr.shape)
    xi0 = rng.uniform(-0.01, 0.01, 6)
    return scene, K, model, f_i, f_j, p_i, p_j, xi0, rng, far


def _check(name: str, program, params, results: Dict[str, Tuple[bool, float]],
           max_coords: int = 5) -> None:
    rep = ad.finite_difference_check(program, params, step=_STEP, tol=_TOL,
                                     max_coords_per_block=max_coords)
    ok, err = results.get(name, (True, 0.0))
    results[name] = (ok and rep.all_passed, max(err, rep.max_rel_err))


def run_gradient_suite(seed: int = 0, configs: int = 20) -> List[Tuple[str, bool, float]]:
    """Returns [(check name, passed, max rel err)] aggregated over configs."""
    results: Dict[str, Tuple[bool, float]] = {}
    for k in range(configs):
        scene, K, model, f_i, f_j, p_i, p_j, xi0, rng, far = _make_config(seed * 1000 + k)
        eps = model.truncation

        # --- rendering losses w.r.t. field parameters and pose twist
        vs, us = np.nonzero(f_j.depth > 0)
        sel = rng.choice(len(vs), size=4, replace=False)
        pixels = np.stack([us[sel], vs[sel]], -1).astype(np.float64)
        _, _, rho = pixel_rays(geo.Pose.identity(), K, pixels)
        gt_rgb = f_j.rgb[vs[sel], us[sel]]
        gt_range = f_j.depth[vs[sel], us[sel]] * rho
        t = sample_depth_batch(0.05, far, 6, 4, gt_range, eps, rng)
        delta = _spacings(t, far)

        def render_photo(p):
            pose = geo.se3_exp(p["xi"]).compose(p_j)
            o, d, _ = pixel_rays(pose, K, pixels)
            out = render_rays(model, o, d, t, delta, params=p)
            return ls.photometric_loss(out.color, gt_rgb) + ad.vsum(out.depth * out.depth)

        def render_tsdf(p):
            pose = geo.se3_exp(p["xi"]).compose(p_j)
            o, d, _ = pixel_rays(pose, K, pixels)
            out = render_rays(model, o, d, t, delta, params=p)
            l_tsdf, l_free = ls.sdf_losses(out.s, t, gt_range, eps)
            return l_tsdf + l_free

        params = dict(model.param_blocks())
        params["xi"] = xi0.copy()
        _check("render_ray+photometric", render_photo, params, results)
        _check("tsdf+free", render_tsdf, params, results)

        # --- smoothness w.r.t. grid features
        smooth_seed = int(rng.integers(0, 2 ** 31))

        def smooth(p):
            return ls.smoothness_loss(model, np.random.default_rng(smooth_seed), p,
                                      n_points=16)

        _check("smoothness", smooth, dict(model.param_blocks()), results)

        # --- warp and feature losses w.r.t. the twist
        matches = match_features(f_i.keypoints, f_i.descriptors,
                                 f_j.keypoints, f_j.descriptors)
        depths_i = np.asarray(bilinear_sample(f_i.depth, matches.q_i)) if len(matches) else np.zeros(0)
        if len(matches):
            ok = depths_i > 0
            matches = type(matches)(matches.q_i[ok], matches.q_j[ok], matches.score[ok])
            depths_i = depths_i[ok]
        patches = ls.build_patches(f_i, f_i.keypoints[:24])
        base_T = p_j.inverse().compose(p_i)
        tol_vis = eps / 2.0
        mask_patch = ls.patch_visibility(f_j, base_T, patches, tol_vis) if len(patches.centers) else np.zeros(0)
        mask_corr = ls.correspondence_visibility(f_j, matches, depths_i, base_T, tol_vis) if len(matches) else np.zeros(0)

        def with_pose(fn):
            def program(p):
                pose_j = geo.se3_exp(p["xi"]).compose(p_j)
                return fn(pose_j.inverse().compose(p_i))
            return program

        if len(patches.centers) and mask_patch.sum() > 0:
            _check("rgb_warp", with_pose(
                lambda T: ls.warp_losses_rgbd(f_i, f_j, T, patches, mask_patch, far)[0]),
                {"xi": xi0.copy()}, results, max_coords=6)
            _check("depth_warp", with_pose(
                lambda T: ls.warp_losses_rgbd(f_i, f_j, T, patches, mask_patch, far)[1]),
                {"xi": xi0.copy()}, results, max_coords=6)
        if len(matches) and mask_corr.sum() > 0:
            _check("feature_point", with_pose(
                lambda T: ls.feature_point_loss(matches, depths_i, T, K, mask_corr)),
                {"xi": xi0.copy()}, results, max_coords=6)
            _check("feature_descriptor", with_pose(
                lambda T: ls.feature_descriptor_loss(
                    f_i.descriptors, f_j.descriptors, matches, depths_i, T, K, mask_corr)),
                {"xi": xi0.copy()}, results, max_coords=6)

    return [(name, ok, err) for name, (ok, err) in sorted(results.items())]
