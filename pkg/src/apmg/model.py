"""The multi-grid scene representation model.

A model is ``f(x) = d(e(x))``: an encoder that transforms a global
coordinate into each of M learnable feature grids' local frames and
trilinearly interpolates features there (zero outside the grid), and a
small no-bias MLP decoder whose output is rescaled by the stored value
range of the fitted volume.

Each grid's placement is a 4x4 affine matrix mapping global coordinates to
the grid's local ``[-1, 1]^3``; the bottom row is pinned to ``(0, 0, 0, 1)``
and is never trained.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

__all__ = [
    "ModelConfig",
    "ApmgModel",
    "to_local",
    "grid_corners_global",
    "encode_grid",
    "init_model",
    "save_model",
    "load_model",
]

MAGIC = b"APMG"
FORMAT_VERSION = 1
HIDDEN_WIDTH = 64


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. ``resolution`` is (D, H, W) per grid."""

    grids: int
    channels: int
    resolution: tuple[int, int, int]
    flat_top_p: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.grids < 1 or self.channels < 1:
            raise ModelError("grids and channels must be >= 1")
        if len(self.resolution) != 3 or any(int(r) < 2 for r in self.resolution):
            raise ModelError("grid resolution must be three integers >= 2")
        if self.flat_top_p < 1:
            raise ModelError("flat_top_p must be >= 1")

    @property
    def feature_len(self) -> int:
        return self.grids * self.channels

    def to_json(self) -> dict:
        return {
            "grids": self.grids,
            "channels": self.channels,
            "resolution": list(self.resolution),
            "flat_top_p": self.flat_top_p,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(
            grids=int(obj["grids"]),
            channels=int(obj["channels"]),
            resolution=tuple(int(r) for r in obj["resolution"]),
            flat_top_p=int(obj.get("flat_top_p", 10)),
            seed=int(obj.get("seed", 0)),
        )


@dataclass
class ApmgModel:
    """Model parameters plus the stored value range of the fitted field.

    transforms: (M, 4, 4); grids: (M, C, D, H, W); w1: (64, M*C);
    w2: (64, 64); w3: (1, 64). Immutable for inference; training mutates
    the arrays in place under exclusive access.
    """

    config: ModelConfig
    transforms: np.ndarray
    grids: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    vmin: float = 0.0
    vmax: float = 1.0

    def __post_init__(self):
        m, c = self.config.grids, self.config.channels
        d, h, w = self.config.resolution
        expect = {
            "transforms": (m, 4, 4),
            "grids": (m, c, d, h, w),
            "w1": (HIDDEN_WIDTH, m * c),
            "w2": (HIDDEN_WIDTH, HIDDEN_WIDTH),
            "w3": (1, HIDDEN_WIDTH),
        }
        for name, shape in expect.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ModelError(f"{name} has shape {arr.shape}, expected {shape}")
        if self.vmin > self.vmax:
            raise ModelError(f"vmin {self.vmin} > vmax {self.vmax}")

    @property
    def dtype(self):
        return self.grids.dtype

    def astype(self, dtype) -> "ApmgModel":
        """Copy with every tensor cast to ``dtype`` (used by 64-bit oracles)."""
        return ApmgModel(
            config=self.config,
            transforms=self.transforms.astype(dtype),
            grids=self.grids.astype(dtype),
            w1=self.w1.astype(dtype),
            w2=self.w2.astype(dtype),
            w3=self.w3.astype(dtype),
            vmin=self.vmin,
            vmax=self.vmax,
        )

    def copy(self) -> "ApmgModel":
        return self.astype(self.dtype)

    def encode(self, pts: np.ndarray) -> np.ndarray:
        """Feature vectors (N, M*C): per-grid trilinear features, grid-major order."""
        pts = np.atleast_2d(np.asarray(pts, dtype=self.dtype))
        n = len(pts)
        m, c = self.config.grids, self.config.channels
        out = np.zeros((n, m * c), dtype=self.dtype)
        for i in range(m):
            local = to_local(self.transforms[i], pts)
            out[:, i * c : (i + 1) * c] = encode_grid(self.grids[i], local)
        return out

    def decode(self, feats: np.ndarray) -> np.ndarray:
        """MLP + value-range scaling. feats: (N, M*C) -> (N,).

        Uses fixed-order contractions (not BLAS) so each point's value is
        bit-identical regardless of how the batch is chunked."""
        feats = np.atleast_2d(np.asarray(feats, dtype=self.dtype))
        h1 = np.maximum(_stable_matmul(feats, self.w1), 0)
        h2 = np.maximum(_stable_matmul(h1, self.w2), 0)
        raw = _stable_matmul(h2, self.w3)
        scale = np.asarray(self.vmax - self.vmin, dtype=self.dtype)
        return raw[:, 0] * scale + np.asarray(self.vmin, dtype=self.dtype)

    def forward(self, pts: np.ndarray) -> np.ndarray:
        """Field values at normalized global coordinates (N, 3) -> (N,)."""
        return self.decode(self.encode(pts))

    def parameter_count(self) -> int:
        return sum(a.size for a in (self.transforms, self.grids, self.w1, self.w2, self.w3))


def _stable_matmul(a: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """(N, K) x (O, K) -> (N, O) with a per-element accumulation order that
    does not depend on N. BLAS matmul reblocks by batch shape, which would
    make query values depend on how callers chunk their batches."""
    return np.einsum("nk,ok->no", a, rows)


def to_local(transform: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply one 4x4 grid transform to global points (N, 3) -> (N, 3)."""
    pts = np.atleast_2d(pts)
    return _stable_matmul(pts, transform[:3, :3]) + transform[:3, 3]


def grid_corners_global(transform: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Global positions (8, 3) of a grid's local [-1, 1]^3 corners.

    Inverts the affine map; raises if the 3x3 block is singular.
    """
    a = np.asarray(transform, dtype=np.float64)[:3, :3]
    t = np.asarray(transform, dtype=np.float64)[:3, 3]
    if abs(np.linalg.det(a)) < eps:
        raise ModelError("grid transform is singular; corners are undefined")
    corners_local = np.array(list(product((-1.0, 1.0), repeat=3)))
    return (corners_local - t) @ np.linalg.inv(a).T


def grid_interp_terms(resolution: tuple[int, int, int], local: np.ndarray):
    """Shared trilinear machinery for grid encode and its backward pass.

    Returns (inside, ix, iy, iz, fx, fy, fz): the in-bounds mask, base vertex
    indices, and fractional offsets. Indices/fracs are only meaningful where
    ``inside`` holds; outside rows are clamped into range so gathers stay legal.
    """
    d, h, w = resolution
    inside = (np.abs(local) <= 1.0).all(axis=1)
    idx, frac = [], []
    for axis, n in enumerate((w, h, d)):
        u = (local[:, axis] + 1.0) * 0.5 * (n - 1)
        i0 = np.clip(np.floor(u).astype(np.intp), 0, n - 2)
        idx.append(i0)
        frac.append(np.clip(u - i0, 0.0, 1.0))
    return (inside, idx[0], idx[1], idx[2], frac[0], frac[1], frac[2])


def _interp_channels(grid: np.ndarray, ix, iy, iz, fx, fy, fz) -> np.ndarray:
    """Nested-lerp trilinear gather over all channels: (C, D, H, W) -> (N, C)."""

    def lerp(a, b, f):
        return a + f * (b - a)

    c00 = lerp(grid[:, iz, iy, ix], grid[:, iz, iy, ix + 1], fx)
    c10 = lerp(grid[:, iz, iy + 1, ix], grid[:, iz, iy + 1, ix + 1], fx)
    c01 = lerp(grid[:, iz + 1, iy, ix], grid[:, iz + 1, iy, ix + 1], fx)
    c11 = lerp(grid[:, iz + 1, iy + 1, ix], grid[:, iz + 1, iy + 1, ix + 1], fx)
    return lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz).T


def encode_grid(grid: np.ndarray, local: np.ndarray) -> np.ndarray:
    """Trilinear features (N, C) of one grid (C, D, H, W) at local coords (N, 3).

    Vertices are corner-aligned at the extents of [-1, 1]^3; coordinates with
    any component outside that cube yield the zero feature.
    """
    local = np.atleast_2d(local)
    inside, ix, iy, iz, fx, fy, fz = grid_interp_terms(grid.shape[1:], local)
    out = _interp_channels(grid, ix, iy, iz, fx, fy, fz)
    out[~inside] = 0
    return np.ascontiguousarray(out)


def _glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_model(config: ModelConfig, seed: int | None = None,
               vmin: float = 0.0, vmax: float = 1.0) -> ApmgModel:
    """Seeded initialization.

    Transform diagonals are drawn from N(1, 0.05) and the remaining top-row
    entries (shear/rotation and translation) from N(0, 0.05), giving grids
    that start near the global extents; a grid's 3x3 block is redrawn in the
    rare case its determinant is not positive, keeping the start
    orientation-preserving. Feature grids start in U(-1e-4, 1e-4); decoder
    weights are Glorot-uniform.
    """
    if seed is None:
        seed = config.seed
    rng = np.random.Generator(np.random.Philox(seed))
    m, c = config.grids, config.channels
    d, h, w = config.resolution

    transforms = np.zeros((m, 4, 4), dtype=np.float64)
    for i in range(m):
        while True:
            a = np.zeros((3, 3))
            a[np.diag_indices(3)] = rng.normal(1.0, 0.05, size=3)
            off = rng.normal(0.0, 0.05, size=6)
            a[0, 1], a[0, 2], a[1, 0], a[1, 2], a[2, 0], a[2, 1] = off
            if np.linalg.det(a) > 0:
                break
        transforms[i, :3, :3] = a
        transforms[i, :3, 3] = rng.normal(0.0, 0.05, size=3)
        transforms[i, 3, 3] = 1.0

    grids = rng.uniform(-1e-4, 1e-4, size=(m, c, d, h, w))
    w1 = _glorot_uniform(rng, m * c, HIDDEN_WIDTH, (HIDDEN_WIDTH, m * c))
    w2 = _glorot_uniform(rng, HIDDEN_WIDTH, HIDDEN_WIDTH, (HIDDEN_WIDTH, HIDDEN_WIDTH))
    w3 = _glorot_uniform(rng, HIDDEN_WIDTH, 1, (1, HIDDEN_WIDTH))

    return ApmgModel(
        config=config,
        transforms=transforms.astype(np.float32),
        grids=grids.astype(np.float32),
        w1=w1.astype(np.float32),
        w2=w2.astype(np.float32),
        w3=w3.astype(np.float32),
        vmin=float(vmin),
        vmax=float(vmax),
    )


def save_model(model: ApmgModel, path: str | Path) -> None:
    """Fixed little-endian layout; round-trips every scalar bit-exactly."""
    cfg = model.config
    parts = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<5I", cfg.grids, cfg.channels, *cfg.resolution),
    ]
    for arr in (model.transforms, model.grids, model.w1, model.w2, model.w3):
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    parts.append(struct.pack("<2f", np.float32(model.vmin), np.float32(model.vmax)))
    parts.append(struct.pack("<I", cfg.flat_top_p))
    Path(path).write_bytes(b"".join(parts))


def load_model(path: str | Path) -> ApmgModel:
    buf = Path(path).read_bytes()
    if len(buf) < 28 or buf[:4] != MAGIC:
        raise ModelError(f"{path}: not a model file (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise ModelError(f"{path}: unsupported format version {version}")
    m, c, d, h, w = struct.unpack_from("<5I", buf, 8)
    offset = 28

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        end = offset + count * 4
        if end > len(buf) - 12:
            raise ModelError(f"{path}: truncated model file")
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset = end
        return arr.astype(np.float32)

    transforms = take((m, 4, 4))
    grids = take((m, c, d, h, w))
    w1 = take((HIDDEN_WIDTH, m * c))
    w2 = take((HIDDEN_WIDTH, HIDDEN_WIDTH))
    w3 = take((1, HIDDEN_WIDTH))
    if len(buf) != offset + 12:
        raise ModelError(f"{path}: truncated or oversized model file")
    vmin, vmax = struct.unpack_from("<2f", buf, offset)
    (p,) = struct.unpack_from("<I", buf, offset + 8)
    config = ModelConfig(grids=m, channels=c, resolution=(d, h, w), flat_top_p=p)
    return ApmgModel(
        config=config, transforms=transforms, grids=grids,
        w1=w1, w2=w2, w3=w3, vmin=float(vmin), vmax=float(vmax),
    )


def save_config(config: ModelConfig, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(config.to_json(), f, indent=2)


def load_config(path: str | Path) -> ModelConfig:
    with open(path) as f:
        return ModelConfig.from_json(json.load(f))
