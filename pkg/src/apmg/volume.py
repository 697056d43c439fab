"""Dense 3D scalar volumes: raw-file I/O, trilinear sampling, cropping, synthesis.

Conventions used throughout the package:

* ``dims = (W, H, D)`` counts voxels along x, y, z. The flat payload is
  x-fastest, so in memory the data lives in a ``(D, H, W)`` C-order array.
* The normalized domain is ``[-1, 1]^3`` regardless of aspect ratio.
  Lattice vertices are corner-aligned: axis value ``a`` maps to the
  fractional index ``(a + 1) / 2 * (N - 1)``, so ``a = -1`` is vertex 0 and
  ``a = +1`` is vertex ``N - 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Volume",
    "VolumeHeader",
    "Extent",
    "BlobSpec",
    "load_volume",
    "load_header",
    "save_volume",
    "crop",
    "synth_volume",
]


class VolumeError(Exception):
    """Raised for malformed volume files or out-of-contract queries."""


@dataclass(frozen=True)
class VolumeHeader:
    """Sidecar metadata for a raw volume file (``<name>.raw`` + ``<name>.json``)."""

    dims: tuple[int, int, int]  # (W, H, D)
    dtype: str = "f32"
    endianness: str = "little"
    name: str | None = None

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) <= 0 for d in self.dims):
            raise VolumeError(f"dims must be three positive integers, got {self.dims}")
        if self.dtype != "f32":
            raise VolumeError(f"unsupported dtype {self.dtype!r} (only 'f32')")
        if self.endianness != "little":
            raise VolumeError(f"unsupported endianness {self.endianness!r}")

    @property
    def voxel_count(self) -> int:
        w, h, d = self.dims
        return w * h * d

    @property
    def byte_length(self) -> int:
        return self.voxel_count * 4

    def to_json(self) -> dict:
        out = {"dims": list(self.dims), "dtype": self.dtype, "endianness": self.endianness}
        if self.name is not None:
            out["name"] = self.name
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "VolumeHeader":
        return cls(
            dims=tuple(int(v) for v in obj["dims"]),
            dtype=obj.get("dtype", "f32"),
            endianness=obj.get("endianness", "little"),
            name=obj.get("name"),
        )


@dataclass(frozen=True)
class Extent:
    """Inclusive voxel index box, ``lo <= hi`` componentwise, in (x, y, z) order."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self):
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise VolumeError(f"extent lo {self.lo} exceeds hi {self.hi}")
        if any(l < 0 for l in self.lo):
            raise VolumeError(f"extent lo {self.lo} has negative component")

    def shape(self) -> tuple[int, int, int]:
        """Voxel counts (W, H, D) of the extent."""
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    def within(self, dims: tuple[int, int, int]) -> bool:
        return all(h < d for h, d in zip(self.hi, dims))


@dataclass
class Volume:
    """A dense scalar field over the normalized domain ``[-1, 1]^3``.

    ``data`` has shape ``(D, H, W)`` (z, y, x) and dtype float32; ``vmin`` and
    ``vmax`` cache the exhaustive value range. Instances are treated as
    immutable after construction; concurrent read-only sampling is safe.
    """

    dims: tuple[int, int, int]
    data: np.ndarray
    vmin: float = field(init=False)
    vmax: float = field(init=False)

    def __post_init__(self):
        w, h, d = (int(v) for v in self.dims)
        self.dims = (w, h, d)
        if any(v <= 0 for v in self.dims):
            raise VolumeError(f"dims must be positive, got {self.dims}")
        if self.data.shape != (d, h, w):
            raise VolumeError(
                f"data shape {self.data.shape} does not match dims {self.dims} (expected {(d, h, w)})"
            )
        if self.data.dtype != np.float32:
            raise VolumeError(f"volume data must be float32, got {self.data.dtype}")
        if not np.isfinite(self.data).all():
            raise VolumeError("volume contains NaN or Inf")
        self.vmin = float(self.data.min())
        self.vmax = float(self.data.max())

    @property
    def voxel_diagonal(self) -> float:
        """Length of one voxel's diagonal in normalized-domain units."""
        spans = [2.0 / (n - 1) if n > 1 else 2.0 for n in self.dims]
        return float(np.linalg.norm(spans))

    def lattice_coords(self) -> np.ndarray:
        """Normalized coordinates of every voxel center, shape (W*H*D, 3), x-fastest."""
        axes = [axis_coords(n) for n in self.dims]
        zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        return np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)

    def sample(self, x) -> float:
        """Trilinear interpolation at one normalized coordinate."""
        return float(self.sample_many(np.asarray(x, dtype=np.float64)[None, :])[0])

    def sample_many(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized trilinear interpolation at normalized coordinates (N, 3).

        Raises on coordinates outside [-1, 1]^3. Math runs in float64.
        """
        pts = np.asarray(pts, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise VolumeError(f"expected (N, 3) coordinates, got {pts.shape}")
        if pts.size and (np.abs(pts) > 1.0).any():
            bad = pts[np.abs(pts).max(axis=1) > 1.0][0]
            raise VolumeError(f"coordinate {bad.tolist()} outside [-1, 1]^3")
        return _trilinear(self.data, pts, self.dims)


def axis_coords(n: int) -> np.ndarray:
    """Normalized coordinates of the n corner-aligned vertices along one axis."""
    if n == 1:
        return np.zeros(1)
    return 2.0 * np.arange(n) / (n - 1) - 1.0


def _trilinear(data: np.ndarray, pts: np.ndarray, dims: tuple[int, int, int]) -> np.ndarray:
    w, h, d = dims
    out_dtype = pts.dtype
    idx = []
    frac = []
    for axis, n in enumerate((w, h, d)):
        if n == 1:
            idx.append(np.zeros(len(pts), dtype=np.intp))
            frac.append(np.zeros(len(pts), dtype=out_dtype))
            continue
        u = (pts[:, axis] + 1.0) * 0.5 * (n - 1)
        i0 = np.clip(np.floor(u).astype(np.intp), 0, n - 2)
        idx.append(i0)
        frac.append(u - i0)
    ix, iy, iz = idx
    fx, fy, fz = frac
    sx = 1 if w > 1 else 0
    sy = 1 if h > 1 else 0
    sz = 1 if d > 1 else 0

    def corner(dz, dy, dx):
        return data[iz + dz * sz, iy + dy * sy, ix + dx * sx].astype(out_dtype, copy=False)

    # Nested lerp: exact for constant fields and at base vertices.
    def lerp(a, b, f):
        return a + f * (b - a)

    c00 = lerp(corner(0, 0, 0), corner(0, 0, 1), fx)
    c10 = lerp(corner(0, 1, 0), corner(0, 1, 1), fx)
    c01 = lerp(corner(1, 0, 0), corner(1, 0, 1), fx)
    c11 = lerp(corner(1, 1, 0), corner(1, 1, 1), fx)
    return lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)


def load_header(path: str | Path) -> VolumeHeader:
    path = Path(path)
    if not path.exists():
        raise VolumeError(f"header file not found: {path}")
    with open(path) as f:
        return VolumeHeader.from_json(json.load(f))


def load_volume(path: str | Path, header: VolumeHeader) -> Volume:
    """Load a raw little-endian float32 volume described by ``header``."""
    path = Path(path)
    if not path.exists():
        raise VolumeError(f"volume file not found: {path}")
    payload = path.read_bytes()
    if len(payload) != header.byte_length:
        raise VolumeError(
            f"payload is {len(payload)} bytes but header dims {header.dims} require {header.byte_length}"
        )
    w, h, d = header.dims
    data = np.frombuffer(payload, dtype="<f4").reshape(d, h, w).astype(np.float32)
    return Volume(dims=header.dims, data=data)


def load_subvolume(path: str | Path, header: VolumeHeader, extent: Extent) -> Volume:
    """Load only the voxels of ``extent`` from a raw volume file (memory-mapped)."""
    path = Path(path)
    if not path.exists():
        raise VolumeError(f"volume file not found: {path}")
    if not extent.within(header.dims):
        raise VolumeError(f"extent {extent} out of bounds for dims {header.dims}")
    if path.stat().st_size != header.byte_length:
        raise VolumeError(
            f"payload is {path.stat().st_size} bytes but header dims {header.dims} require {header.byte_length}"
        )
    w, h, d = header.dims
    mm = np.memmap(path, dtype="<f4", mode="r", shape=(d, h, w))
    (x0, y0, z0), (x1, y1, z1) = extent.lo, extent.hi
    data = np.array(mm[z0 : z1 + 1, y0 : y1 + 1, x0 : x1 + 1], dtype=np.float32)
    del mm
    return Volume(dims=extent.shape(), data=data)


def save_volume(vol: Volume, raw_path: str | Path, header_path: str | Path | None = None,
                name: str | None = None) -> VolumeHeader:
    """Write ``<name>.raw`` plus JSON sidecar; returns the header written."""
    raw_path = Path(raw_path)
    if header_path is None:
        header_path = raw_path.with_suffix(".json")
    header = VolumeHeader(dims=vol.dims, name=name)
    raw_path.write_bytes(np.ascontiguousarray(vol.data, dtype="<f4").tobytes())
    with open(header_path, "w") as f:
        json.dump(header.to_json(), f, indent=2)
    return header


def crop(vol: Volume, e: Extent) -> Volume:
    """Copy the sub-volume covered by ``e``; value range is recomputed."""
    if not e.within(vol.dims):
        raise VolumeError(f"extent {e} out of bounds for dims {vol.dims}")
    (x0, y0, z0), (x1, y1, z1) = e.lo, e.hi
    data = vol.data[z0 : z1 + 1, y0 : y1 + 1, x0 : x1 + 1].copy()
    return Volume(dims=e.shape(), data=data)


@dataclass(frozen=True)
class BlobSpec:
    """One anisotropic gaussian bump: amplitude * exp(-sum_d (x_d - c_d)^2 / (2 s_d^2))."""

    center: tuple[float, float, float]
    sigma: tuple[float, float, float]
    amplitude: float = 1.0


def synth_volume(dims: tuple[int, int, int], blobs: list[BlobSpec], seed: int = 0,
                 background: float = 0.0, noise: float = 0.0) -> Volume:
    """Deterministic synthetic field: gaussian blobs over a constant background.

    ``noise`` adds uniform noise in [-noise, noise] drawn from a Philox stream
    keyed by ``seed``, so identical (dims, blobs, seed, noise) produce
    byte-identical volumes.
    """
    w, h, d = (int(v) for v in dims)
    if min(w, h, d) <= 0:
        raise VolumeError(f"dims must be positive, got {dims}")
    xs, ys, zs = axis_coords(w), axis_coords(h), axis_coords(d)
    acc = np.full((d, h, w), float(background), dtype=np.float64)
    for blob in blobs:
        ex = np.exp(-((xs - blob.center[0]) ** 2) / (2.0 * blob.sigma[0] ** 2))
        ey = np.exp(-((ys - blob.center[1]) ** 2) / (2.0 * blob.sigma[1] ** 2))
        ez = np.exp(-((zs - blob.center[2]) ** 2) / (2.0 * blob.sigma[2] ** 2))
        acc += blob.amplitude * ez[:, None, None] * ey[None, :, None] * ex[None, None, :]
    if noise > 0.0:
        rng = np.random.Generator(np.random.Philox(seed))
        acc += rng.uniform(-noise, noise, size=acc.shape)
    return Volume(dims=(w, h, d), data=acc.astype(np.float32))
