"""The optimizable scene representation.

A stack of dense per-level feature grids is trilinearly interpolated and
concatenated (plus the normalized query coordinate), then decoded by a
small MLP into a signed distance and an rgb color. Dense grids keep the
artifact deterministic; desk-scale scenes fit comfortably in memory.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from . import _kernels as kernels

_CKPT_MAGIC = b"FMFIELD1"
_CKPT_VERSION = 1


@dataclass
class MultiResGrid:
    """L dense feature grids, coarsest to finest, over an axis-aligned box."""
    lo: np.ndarray
    hi: np.ndarray
    resolutions: List[int]
    feat_dim: int
    features: List[np.ndarray] = field(default_factory=list)  # (res^3, F) each

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if np.any(self.hi <= self.lo):
            raise ValueError("grid bounds must have positive extent")
        if any(b >= a for a, b in zip(self.resolutions[1:], self.resolutions[:-1])):
            raise ValueError("resolutions must be strictly increasing")

    @staticmethod
    def create(lo, hi, levels: int = 4, base_res: int = 16, growth: int = 2,
               feat_dim: int = 2, seed: int = 0) -> "MultiResGrid":
        rng = np.random.default_rng(seed)
        res = [base_res * growth ** k for k in range(levels)]
        feats = [rng.uniform(-1e-4, 1e-4, size=(r ** 3, feat_dim)) for r in res]
        return MultiResGrid(np.asarray(lo, float), np.asarray(hi, float), res, feat_dim, feats)

    @property
    def levels(self) -> int:
        return len(self.resolutions)

    @property
    def finest_cell(self) -> np.ndarray:
        return (self.hi - self.lo) / (self.resolutions[-1] - 1)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(ad.value_of(pts))
        return np.all((p >= self.lo) & (p <= self.hi), axis=-1)

    def normalized(self, pts):
        """Map points into [0, 1]^3, clamped at the box faces."""
        span = self.hi - self.lo
        return ad.clip((pts - self.lo) / span, 0.0, 1.0)


def _interp_level(feats, pts, res: int, lo: np.ndarray, hi: np.ndarray, feat_dim: int):
    """Trilinear interpolation of one level; differentiable w.r.t. features and points."""
    pv = np.atleast_2d(ad.value_of(pts))
    span = hi - lo
    scale = (res - 1) / span
    u = (pv - lo) * scale
    fv = np.ascontiguousarray(ad.value_of(feats))
    out, i0, frac = kernels.interp_forward(fv, res, u)

    parents = []
    if isinstance(feats, ad.Var):
        def vjp_feats(g):
            return kernels.interp_vjp_feats(np.ascontiguousarray(g), res, feat_dim,
                                            i0, frac)
        parents.append((feats, vjp_feats))
    if isinstance(pts, ad.Var):
        inside = (u > 0.0) & (u < res - 1.0)  # clamped points get zero gradient

        def vjp_pts(g):
            return kernels.interp_vjp_points(np.ascontiguousarray(g), fv, res,
                                             i0, frac, inside, scale)
        parents.append((pts, vjp_pts))
    if not parents:
        return out
    return ad.custom(out, parents, f"grid_interp:{res}")


@dataclass
class Decoder:
    """Two-head MLP: shared tanh trunk, linear SDF head, sigmoid color head."""
    weights: Dict[str, np.ndarray]
    hidden: int
    n_hidden_layers: int

    @staticmethod
    def create(in_dim: int, hidden: int = 32, n_hidden_layers: int = 2, seed: int = 0) -> "Decoder":
        rng = np.random.default_rng(seed + 1)

        def xavier(fi, fo):
            lim = np.sqrt(6.0 / (fi + fo))
            return rng.uniform(-lim, lim, size=(fi, fo))

        w: Dict[str, np.ndarray] = {}
        dims = [in_dim] + [hidden] * n_hidden_layers
        for k in range(n_hidden_layers):
            w[f"w{k}"] = xavier(dims[k], dims[k + 1])
            w[f"b{k}"] = np.zeros(dims[k + 1])
        w["ws"] = xavier(hidden, 1)
        w["bs"] = np.zeros(1)
        w["wc"] = xavier(hidden, 3)
        w["bc"] = np.zeros(3)
        return Decoder(w, hidden, n_hidden_layers)


@dataclass
class FieldModel:
    """Grid + decoder + truncation distance: the optimizable map."""
    grid: MultiResGrid
    decoder: Decoder
    truncation: float

    def __post_init__(self):
        if self.truncation <= 0:
            raise ValueError("truncation must be positive")

    @staticmethod
    def create(lo, hi, truncation: float = 0.1, levels: int = 4, base_res: int = 16,
               growth: int = 2, feat_dim: int = 2, hidden: int = 32,
               n_hidden_layers: int = 2, seed: int = 0) -> "FieldModel":
        grid = MultiResGrid.create(lo, hi, levels, base_res, growth, feat_dim, seed)
        dec = Decoder.create(levels * feat_dim + 3, hidden, n_hidden_layers, seed)
        return FieldModel(grid, dec, truncation)

    def param_blocks(self) -> Dict[str, np.ndarray]:
        """Named live parameter arrays, in the fixed registration order."""
        blocks: Dict[str, np.ndarray] = {}
        for k, f in enumerate(self.grid.features):
            blocks[f"grid.l{k}"] = f
        for name, arr in self.decoder.weights.items():
            blocks[f"dec.{name}"] = arr
        return blocks

    def set_param_blocks(self, blocks: Dict[str, np.ndarray]) -> None:
        for k in range(self.grid.levels):
            self.grid.features[k] = np.asarray(blocks[f"grid.l{k}"], dtype=np.float64)
        for name in list(self.decoder.weights):
            self.decoder.weights[name] = np.asarray(blocks[f"dec.{name}"], dtype=np.float64)


def encode(model: FieldModel, x, params: Optional[dict] = None):
    """Concatenated per-level trilinear features for points x (N, 3).

    `params` may substitute tape Vars for the named parameter blocks so
    gradients flow to the grid (and to x when x is a Var). Points outside
    the scene bounds are clamped to the boundary; use
    model.grid.contains(x) for the outside flag.
    """
    grid = model.grid
    outs = []
    for k, res in enumerate(grid.resolutions):
        feats = params[f"grid.l{k}"] if params is not None else grid.features[k]
        outs.append(_interp_level(feats, x, res, grid.lo, grid.hi, grid.feat_dim))
    return ad.concatenate(outs, axis=-1)


def decode(model: FieldModel, x, params: Optional[dict] = None):
    """SDF value (N,) and rgb color (N, 3) in [0, 1] at points x (N, 3)."""
    enc = encode(model, x, params)
    ncoord = model.grid.normalized(x)
    h = ad.concatenate([enc, ncoord], axis=-1)
    dec = model.decoder
    w = (lambda n: params[f"dec.{n}"]) if params is not None else (lambda n: dec.weights[n])
    for k in range(dec.n_hidden_layers):
        h = ad.vtanh(ad.matmul(h, w(f"w{k}")) + w(f"b{k}"))
    s = ad.reshape(ad.matmul(h, w("ws")) + w("bs"), (-1,))
    c = ad.sigmoid(ad.matmul(h, w("wc")) + w("bc"))
    return s, c


def sdf_to_density(s, eps: float):
    """Bell-shaped density from a signed distance: 1/((1+e^{s/eps})(1+e^{-s/eps})).

    Evaluated as m/(1+m)^2 with m = exp(-|s|/eps), which is exact, even in s,
    and overflow-safe for any |s/eps|.
    """
    if eps <= 0:
        raise ValueError("truncation must be positive")
    m = ad.vexp(-ad.vabs(s) / eps)
    return m / ((1.0 + m) * (1.0 + m))


# ---------------------------------------------------------------------------
# checkpoint I/O: versioned little-endian binary
# ---------------------------------------------------------------------------

def save_checkpoint(model: FieldModel, path) -> None:
    g, d = model.grid, model.decoder
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(struct.pack("<3d", *g.lo))
        fh.write(struct.pack("<3d", *g.hi))
        fh.write(struct.pack("<d", model.truncation))
        fh.write(struct.pack("<III", g.levels, g.feat_dim, d.hidden))
        fh.write(struct.pack("<I", d.n_hidden_layers))
        for res in g.resolutions:
            fh.write(struct.pack("<I", res))
        for arr in g.features:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        for name in _decoder_array_order(d):
            fh.write(np.ascontiguousarray(d.weights[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> FieldModel:
    with open(path, "rb") as fh:
        if fh.read(8) != _CKPT_MAGIC:
            raise ValueError("not a field checkpoint")
        version, = struct.unpack("<I", fh.read(4))
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        lo = np.array(struct.unpack("<3d", fh.read(24)))
        hi = np.array(struct.unpack("<3d", fh.read(24)))
        trunc, = struct.unpack("<d", fh.read(8))
        levels, feat_dim, hidden = struct.unpack("<III", fh.read(12))
        n_hidden_layers, = struct.unpack("<I", fh.read(4))
        res = [struct.unpack("<I", fh.read(4))[0] for _ in range(levels)]
        feats = []
        for r in res:
            n = r ** 3 * feat_dim
            feats.append(np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(r ** 3, feat_dim).copy())
        grid = MultiResGrid(lo, hi, res, feat_dim, feats)
        in_dim = levels * feat_dim + 3
        dec = Decoder.create(in_dim, hidden, n_hidden_layers, seed=0)
        for name in _decoder_array_order(dec):
            shape = dec.weights[name].shape
            n = int(np.prod(shape))
            dec.weights[name] = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()
        return FieldModel(grid, dec, trunc)


def _decoder_array_order(dec: Decoder) -> List[str]:
    names = []
    for k in range(dec.n_hidden_layers):
        names += [f"w{k}", f"b{k}"]
    return names + ["ws", "bs", "wc", "bc"]
