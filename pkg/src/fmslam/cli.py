"""Command-line surface: configuration, dataset I/O, and output writers.

Commands:
    run         full SLAM over a sequence, writing trajectory/mesh/metrics
    synth       emit the pinned synthetic suite (or selected scenes)
    eval        metrics from saved outputs against dataset ground truth
    ablate      the warp-loss combination grid, one row per configuration
    check-grads finite-difference verification of every differentiable loss

Dataset layout: `manifest.json` (intrinsics, depth scale, frame list),
`rgb/*.png`, `depth/*.png` (16-bit, z-depth * depth_scale), optional
`groundtruth.txt` in TUM format. All randomness in any command derives
from the single config seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from . import evalkit, geometry as geo, slam, synthworld
from .features import Frame
from .field import FieldModel, save_checkpoint
from .losses import LossWeights
from .renderer import RenderConfig


class MissingManifest(Exception):
    pass


class UnreadableImage(Exception):
    pass


class AssociationGap(Exception):
    pass


class IoError(Exception):
    pass


_ITERS_BY_INTERVAL = ((10, 200), (5, 100), (1, 20))

_DISABLE_FLAGS = {
    "photo": "w_photo", "tsdf": "w_tsdf", "free": "w_free", "smooth": "w_smooth",
    "rgbwarp": "w_rgbwarp", "depthwarp": "w_depthwarp", "fp": "w_fp", "fd": "w_fd",
}


def default_iters(interval: int) -> int:
    for lo, iters in _ITERS_BY_INTERVAL:
        if interval >= lo:
            return iters
    return 20


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; serializes losslessly to JSON."""
    dataset: str = ""
    out_dir: str = "out"
    interval: int = 1
    seed: int = 0
    track_iters: int = 0          # 0 = pick from interval (20 / 100 / 200)
    map_iters: int = 0
    pixels_track: int = 1024
    pixels_map: int = 2048
    n_strat: int = 32
    n_surf: int = 8
    truncation: float = 0.1
    levels: int = 4
    base_res: int = 16
    growth: int = 2
    feat_dim: int = 2
    hidden: int = 32
    hidden_layers: int = 2
    lr_pose: float = 1e-3
    lr_map: float = 1e-2
    keyframe_stride: int = 5
    max_keypoints: int = 200
    max_patches: int = 96
    descriptor_pairing: str = "cross"
    near: float = 0.05
    far: float = 0.0              # 0 = bounds diagonal + 1
    bounds_lo: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    bounds_hi: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    refine_keyframe_poses: bool = True
    mesh_resolution: int = 64
    eval_depth_samples: int = 2000
    eval_surface_samples: int = 20000
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.interval < 1:
            raise ValueError("interval must be >= 1")
        if self.pixels_track <= 0 or self.pixels_map <= 0:
            raise ValueError("pixel budgets must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["bounds_lo"] = list(self.bounds_lo)
        d["bounds_hi"] = list(self.bounds_hi)
        return d

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        for k in ("bounds_lo", "bounds_hi"):
            if k in d:
                d[k] = tuple(float(x) for x in d[k])
        return RunConfig(**d)

    def resolved(self, manifest: Optional[dict] = None) -> "RunConfig":
        """Fill interval-dependent iteration counts and manifest-derived
        bounds/far where the config left them at their auto (0) values."""
        upd: Dict[str, object] = {}
        if self.track_iters <= 0:
            upd["track_iters"] = default_iters(self.interval)
        if self.map_iters <= 0:
            upd["map_iters"] = default_iters(self.interval)
        lo, hi = np.asarray(self.bounds_lo), np.asarray(self.bounds_hi)
        if manifest is not None and np.all(lo == hi):
            lo = np.asarray(manifest.get("bounds_lo", [-4.0, -4.0, -1.0]))
            hi = np.asarray(manifest.get("bounds_hi", [4.0, 4.0, 3.5]))
            upd["bounds_lo"] = tuple(float(x) for x in lo)
            upd["bounds_hi"] = tuple(float(x) for x in hi)
        if self.far <= 0:
            upd["far"] = float(np.linalg.norm(hi - lo) + 1.0)
        return dataclasses.replace(self, **upd)

    def render_config(self) -> RenderConfig:
        return RenderConfig(self.near, self.far, self.n_strat, self.n_surf)


def serialize_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def parse_config(text: str) -> RunConfig:
    return RunConfig.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# dataset I/O
# ---------------------------------------------------------------------------

@dataclass
class DatasetSequence:
    root: Path
    frames: List[Frame]
    K: geo.Intrinsics
    depth_scale: float
    manifest: dict
    groundtruth: Optional[evalkit.Trajectory] = None


def load_sequence(root, interval: int = 1) -> DatasetSequence:
    """Load a dataset directory, subsampled to every `interval`-th frame."""
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise MissingManifest(f"no manifest.json under {root}")
    manifest = json.loads(mpath.read_text())
    ki = manifest["intrinsics"]
    K = geo.Intrinsics(ki["fx"], ki["fy"], ki["cx"], ki["cy"],
                       int(ki["width"]), int(ki["height"]))
    scale = float(manifest.get("depth_scale", 5000.0))
    frames: List[Frame] = []
    for rec in manifest["frames"][::interval]:
        ts = float(rec["timestamp"])
        dts = float(rec.get("depth_timestamp", ts))
        if abs(dts - ts) > 0.01:
            raise AssociationGap(f"rgb/depth stamps differ by {abs(dts - ts):.3f}s at t={ts}")
        rgb = _read_rgb(root / rec["rgb"])
        depth = _read_depth(root / rec["depth"], scale)
        frames.append(Frame(timestamp=ts, rgb=rgb, depth=depth, K=K))
    gt = None
    gt_path = root / "groundtruth.txt"
    if gt_path.exists():
        gt = read_trajectory_tum(gt_path)
    return DatasetSequence(root, frames, K, scale, manifest, gt)


def _read_rgb(path: Path) -> np.ndarray:
    if not path.exists():
        raise UnreadableImage(str(path))
    try:
        img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    except Exception as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc
    return img / 255.0


def _read_depth(path: Path, scale: float) -> np.ndarray:
    if not path.exists():
        raise UnreadableImage(str(path))
    try:
        img = np.asarray(Image.open(path), dtype=np.float64)
    except Exception as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc
    return img / scale


def write_sequence(root, frames: Sequence[Frame], poses: Sequence[geo.Pose],
                   bounds_lo, bounds_hi, depth_scale: float = 5000.0) -> None:
    """Write frames + ground-truth trajectory in the on-disk dataset layout."""
    root = Path(root)
    (root / "rgb").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(parents=True, exist_ok=True)
    recs = []
    for k, fr in enumerate(frames):
        rgb_rel = f"rgb/{k:06d}.png"
        dep_rel = f"depth/{k:06d}.png"
        Image.fromarray((np.clip(fr.rgb, 0, 1) * 255.0).round().astype(np.uint8)
                        ).save(root / rgb_rel)
        d16 = np.clip(np.round(fr.depth * depth_scale), 0, 65535).astype(np.uint16)
        Image.fromarray(d16).save(root / dep_rel)
        recs.append({"timestamp": fr.timestamp, "rgb": rgb_rel, "depth": dep_rel})
    K = frames[0].K
    manifest = {
        "intrinsics": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
                       "width": K.width, "height": K.height},
        "depth_scale": depth_scale,
        "bounds_lo": [float(x) for x in bounds_lo],
        "bounds_hi": [float(x) for x in bounds_hi],
        "frames": recs,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    write_trajectory_tum(root / "groundtruth.txt",
                         np.array([f.timestamp for f in frames]), list(poses))


# ---------------------------------------------------------------------------
# output writers
# ---------------------------------------------------------------------------

def write_trajectory_tum(path, timestamps: np.ndarray, poses: Sequence[geo.Pose]) -> None:
    lines = []
    for ts, p in zip(timestamps, poses):
        q = geo.rotation_to_quaternion(np.asarray(p.rotation))
        t = np.asarray(p.translation)
        lines.append("%.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f"
                     % (ts, t[0], t[1], t[2], q[0], q[1], q[2], q[3]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory_tum(path) -> evalkit.Trajectory:
    ts, poses = [], []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = [float(x) for x in line.split()]
        if len(vals) < 8:
            continue
        ts.append(vals[0])
        R = geo.quaternion_to_rotation(np.array(vals[4:8]))
        poses.append(geo.Pose(geo.orthonormalize(R), np.array(vals[1:4])))
    if not ts:
        raise IoError(f"no poses in {path}")
    return evalkit.Trajectory(np.array(ts), poses)


def write_ply(path, verts: np.ndarray, faces: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(verts)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write(f"element face {len(faces)}\n")
        fh.write("property list uchar int vertex_indices\nend_header\n")
        for v in verts:
            fh.write("%.6f %.6f %.6f\n" % (v[0], v[1], v[2]))
        for f in faces:
            fh.write("3 %d %d %d\n" % (f[0], f[1], f[2]))


_METRIC_KEYS = ("frames", "keyframes", "diverged", "trajectory_length_m",
                "ate_rmse_cm", "ate_rmse_unaligned_cm", "depth_l1_cm",
                "acc_cm", "comp_cm", "comp_ratio_pct")


def write_metrics(path, metrics: Dict[str, float]) -> None:
    lines = [f"{k} {metrics.get(k, float('nan')):.6f}" for k in _METRIC_KEYS]
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics(path) -> Dict[str, float]:
    out = {}
    for line in Path(path).read_text().splitlines():
        k, v = line.split()
        out[k] = float(v)
    return out


def trajectory_length(poses: Sequence[geo.Pose]) -> float:
    t = np.stack([np.asarray(p.translation) for p in poses])
    return float(np.linalg.norm(np.diff(t, axis=0), axis=1).sum())


# ---------------------------------------------------------------------------
# evaluation helpers shared by run / eval / ablate
# ---------------------------------------------------------------------------

def gt_surface_points(seq: DatasetSequence, gt: evalkit.Trajectory,
                      count: int, seed: int = 0) -> np.ndarray:
    """Ground-truth surface samples: backprojected valid depth pixels of the
    (observed) ground-truth frames."""
    rng = np.random.default_rng(seed)
    pairs = evalkit.associate(np.array([f.timestamp for f in seq.frames]), gt.timestamps)
    per = max(count // max(len(pairs), 1), 1)
    pts = []
    for fi, gi in pairs:
        fr = seq.frames[fi]
        pose = gt.poses[gi]
        vs, us = np.nonzero(fr.depth > 0)
        if not len(vs):
            continue
        sel = rng.choice(len(vs), size=min(per, len(vs)), replace=False)
        q = np.stack([us[sel], vs[sel]], -1).astype(np.float64)
        z = fr.depth[vs[sel], us[sel]]
        X = np.asarray(geo.backproject(fr.K, q, z))
        pts.append(X @ np.asarray(pose.rotation).T + np.asarray(pose.translation))
    if not pts:
        raise evalkit.EmptyPointSet("no ground-truth surface points")
    return np.concatenate(pts, axis=0)


def evaluate_run(seq: DatasetSequence, cfg: RunConfig, result: slam.SlamResult,
                 mesh: Optional[Tuple[np.ndarray, np.ndarray]]) -> Dict[str, float]:
    metrics: Dict[str, float] = {
        "frames": float(len(result.poses)),
        "keyframes": float(len(result.keyframe_indices)),
        "diverged": float(len(result.diverged_frames)),
        "trajectory_length_m": trajectory_length(result.poses),
    }
    est = evalkit.Trajectory(result.timestamps, result.poses)
    if seq.groundtruth is not None:
        metrics["ate_rmse_cm"] = evalkit.ate_rmse(est, seq.groundtruth, align=True)
        metrics["ate_rmse_unaligned_cm"] = evalkit.ate_rmse(est, seq.groundtruth, align=False)
        pairs = evalkit.associate(est.timestamps, seq.groundtruth.timestamps)
        gt_frames = [(seq.frames[i], seq.groundtruth.poses[j]) for i, j in pairs]
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 301)))
        metrics["depth_l1_cm"] = evalkit.depth_l1(
            result.model, gt_frames, cfg.eval_depth_samples, rng,
            cfg.render_config(), seed=cfg.seed)
        if mesh is not None and len(mesh[1]):
            est_pts = evalkit.sample_mesh_points(*mesh, cfg.eval_surface_samples,
                                                 seed=cfg.seed)
            gt_pts = gt_surface_points(seq, seq.groundtruth,
                                       cfg.eval_surface_samples, seed=cfg.seed)
            diam = float(np.linalg.norm(np.asarray(cfg.bounds_hi) - np.asarray(cfg.bounds_lo)))
            thr_cm = 5.0 if diam == 0 else max(5.0, 0.05 * diam * 100.0)
            acc, comp, ratio = evalkit.acc_comp(est_pts, gt_pts, threshold_cm=thr_cm)
            metrics["acc_cm"] = acc
            metrics["comp_cm"] = comp
            metrics["comp_ratio_pct"] = ratio
    return metrics


def extract_run_mesh(cfg: RunConfig, result: slam.SlamResult):
    frusta = [(e.pose, e.frame.K) for e in result.db.entries]
    try:
        return evalkit.extract_mesh(result.model, cfg.mesh_resolution,
                                    np.asarray(cfg.bounds_lo), np.asarray(cfg.bounds_hi),
                                    frusta=frusta, max_depth=cfg.far)
    except evalkit.EmptyMesh:
        return None


def run_on_sequence(seq: DatasetSequence, cfg: RunConfig,
                    write: bool = True) -> Tuple[slam.SlamResult, Dict[str, float]]:
    cfg = cfg.resolved(seq.manifest)
    result = slam.run_sequence(seq.frames, cfg)
    mesh = extract_run_mesh(cfg, result)
    metrics = evaluate_run(seq, cfg, result, mesh)
    if write:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trajectory_tum(out / "trajectory.txt", result.timestamps, result.poses)
        if mesh is not None:
            write_ply(out / "mesh.ply", *mesh)
        write_metrics(out / "metrics.txt", metrics)
        (out / "config.json").write_text(serialize_config(cfg))
        save_checkpoint(result.model, out / "model.ckpt")
        with open(out / "events.jsonl", "w") as fh:
            for ev in result.events:
                fh.write(json.dumps(ev, sort_keys=True) + "\n")
    return result, metrics


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

ABLATION_ROWS = (
    ("none", dict(w_rgbwarp=0.0, w_depthwarp=0.0, w_fp=0.0, w_fd=0.0)),
    ("rgb", dict(w_depthwarp=0.0, w_fp=0.0, w_fd=0.0)),
    ("rgb+depth", dict(w_fp=0.0, w_fd=0.0)),
    ("rgb+depth+kp", dict(w_fd=0.0)),
    ("all", dict()),
)


def _cmd_run(args) -> int:
    cfg = _config_from_args(args)
    seq = load_sequence(cfg.dataset, cfg.interval)
    _, metrics = run_on_sequence(seq, cfg)
    for k in _METRIC_KEYS:
        if k in metrics:
            print(f"{k} {metrics[k]:.6f}")
    return 0


def _cmd_synth(args) -> int:
    out = Path(args.out)
    scenes = args.scenes.split(",") if args.scenes != "all" else list(synthworld.STANDARD_SCENES)
    intervals = [int(x) for x in args.intervals.split(",")]
    for name in scenes:
        if name not in synthworld.STANDARD_SCENES:
            print(f"unknown scene {name!r}; choices: {sorted(synthworld.STANDARD_SCENES)}",
                  file=sys.stderr)
            return 1
        for iv in intervals:
            scene, poses, frames, _ = synthworld.build_sequence(
                name, iv, width=args.width, height=args.height,
                n_base_frames=args.frames, seed=args.seed,
                rot_jitter_deg=args.rot_jitter, trans_jitter=args.trans_jitter)
            root = out / f"{name}_i{iv}"
            write_sequence(root, frames, poses, scene.bounds_lo, scene.bounds_hi)
            print(f"wrote {root} ({len(frames)} frames)")
    return 0


def _cmd_eval(args) -> int:
    seq = load_sequence(args.dataset, args.interval)
    if seq.groundtruth is None:
        print("dataset has no groundtruth.txt", file=sys.stderr)
        return 1
    out = Path(args.out)
    est = read_trajectory_tum(out / "trajectory.txt")
    metrics = {
        "frames": float(len(est.poses)),
        "trajectory_length_m": trajectory_length(est.poses),
        "ate_rmse_cm": evalkit.ate_rmse(est, seq.groundtruth, align=True),
        "ate_rmse_unaligned_cm": evalkit.ate_rmse(est, seq.groundtruth, align=False),
    }
    write_metrics(out / "metrics.txt", metrics)
    for k in _METRIC_KEYS:
        if k in metrics:
            print(f"{k} {metrics[k]:.6f}")
    return 0


def _cmd_ablate(args) -> int:
    roots = _sequence_roots(Path(args.dataset))
    if not roots:
        print(f"no sequences under {args.dataset}", file=sys.stderr)
        return 1
    base = _config_from_args(args)
    names = [r.name for r in roots]
    table: List[List[str]] = []
    for row_name, overrides in ABLATION_ROWS:
        weights = LossWeights(**{**base.weights.as_dict(), **overrides})
        cells = []
        for root in roots:
            seq = load_sequence(root, base.interval)
            cfg = dataclasses.replace(
                base, weights=weights, dataset=str(root),
                out_dir=str(Path(base.out_dir) / f"ablate_{row_name}" / root.name))
            _, metrics = run_on_sequence(seq, cfg, write=args.write_runs)
            cells.append(metrics.get("ate_rmse_unaligned_cm", float("nan")))
        table.append([row_name] + [f"{c:.3f}" for c in cells])
    header = ["losses"] + names
    lines = ["\t".join(header)] + ["\t".join(r) for r in table]
    text = "\n".join(lines) + "\n"
    out = Path(base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.txt").write_text(text)
    print(text, end="")
    return 0


def _sequence_roots(root: Path) -> List[Path]:
    if (root / "manifest.json").exists():
        return [root]
    return sorted(p.parent for p in root.glob("*/manifest.json"))


def _cmd_check_grads(args) -> int:
    from .gradcheck import run_gradient_suite
    t0 = time.monotonic()
    results = run_gradient_suite(seed=args.seed, configs=args.configs)
    ok = True
    for name, passed, max_err in results:
        print(f"{'PASS' if passed else 'FAIL'} {name} (max rel err {max_err:.2e})")
        ok &= passed
    print(f"total {time.monotonic() - t0:.1f}s")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _config_from_args(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = parse_config(Path(args.config).read_text())
    else:
        cfg = RunConfig()
    upd: Dict[str, object] = {}
    if getattr(args, "dataset", None):
        upd["dataset"] = args.dataset
    if getattr(args, "interval", None):
        upd["interval"] = args.interval
    if getattr(args, "seed", None) is not None:
        upd["seed"] = args.seed
    if getattr(args, "out", None):
        upd["out_dir"] = args.out
    wd = cfg.weights.as_dict()
    for flag, wname in _DISABLE_FLAGS.items():
        if getattr(args, f"disable_{flag}", False):
            wd[wname] = 0.0
    upd["weights"] = LossWeights(**wd)
    return dataclasses.replace(cfg, **upd)


def _add_common(p: argparse.ArgumentParser, dataset_required: bool = True) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--dataset", required=dataset_required, help="dataset root")
    p.add_argument("--interval", type=int, default=None, help="frame interval i")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="output directory")
    for flag in _DISABLE_FLAGS:
        p.add_argument(f"--disable-{flag}", action="store_true",
                       help=f"zero the {flag} loss weight")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fmslam", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full SLAM on a sequence")
    _add_common(p)

    p = sub.add_parser("synth", help="emit synthetic sequences")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", default="all")
    p.add_argument("--intervals", default="1,5,10")
    p.add_argument("--frames", type=int, default=synthworld.SUITE_BASE_FRAMES)
    p.add_argument("--width", type=int, default=160)
    p.add_argument("--height", type=int, default=120)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rot-jitter", type=float, default=synthworld.SUITE_ROT_JITTER_DEG)
    p.add_argument("--trans-jitter", type=float, default=synthworld.SUITE_TRANS_JITTER)

    p = sub.add_parser("eval", help="metrics from saved outputs")
    p.add_argument("--dataset", required=True)
    p.add_argument("--interval", type=int, default=1)
    p.add_argument("--out", required=True, help="run output directory")

    p = sub.add_parser("ablate", help="warp-loss combination grid")
    _add_common(p)
    p.add_argument("--write-runs", action="store_true",
                   help="also write per-run outputs")

    p = sub.add_parser("check-grads", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs", type=int, default=20)
    return ap


_COMMANDS = {
    "run": _cmd_run,
    "synth": _cmd_synth,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "check-grads": _cmd_check_grads,
}

_DOMAIN_ERRORS = (MissingManifest, UnreadableImage, AssociationGap, IoError,
                  evalkit.NoAssociations, evalkit.EmptyPointSet, evalkit.EmptyMesh,
                  ValueError)


def dispatch(command: str, args: Sequence[str]) -> int:
    """Run one command; exit codes: 0 success, 1 domain error, 2 usage error."""
    return main([command, *args])


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return _COMMANDS[args.command](args)
    except _DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
