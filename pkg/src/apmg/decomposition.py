"""Brick the domain into a grid of models, train them on a worker pool,
and serve decomposed inference through a closed-form spatial hash.

Core extents tile the voxel lattice disjointly; ghost extents pad each
brick by a configurable number of voxels (clamped at the volume border) so
neighboring models overlap in training data, softening seams. Ownership of
a continuous query point is decided by the uniform-domain hash, not by the
data extents: each brick owns the axis slab [-1 + 2i/I, -1 + 2(i+1)/I).
With uneven voxel splits and a small ghost width, a thin sliver of an owned
slab can fall outside the brick's trained sub-domain; such queries still
evaluate (the encoder returns zero features out of bounds).
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ApmgModel, ModelConfig, init_model, load_model, save_model
from .trainer import TrainConfig, TrainLog, psnr, train_single
from .volume import Extent, Volume, VolumeHeader, load_subvolume

__all__ = [
    "BrickSpec",
    "DecompositionPlan",
    "DecompositionManifest",
    "plan_partition",
    "spatial_hash",
    "train_decomposed",
    "load_manifest",
    "DecomposedField",
]


class DecompositionError(Exception):
    pass


@dataclass(frozen=True)
class BrickSpec:
    """One brick: voxel extents plus its owned normalized-domain slab."""

    index: tuple[int, int, int]  # (i, j, k)
    core: Extent
    ghost: Extent
    domain_lo: tuple[float, float, float]  # owned slab, uniform tiling of [-1, 1]^3
    domain_hi: tuple[float, float, float]


@dataclass(frozen=True)
class DecompositionPlan:
    dims: tuple[int, int, int]
    counts: tuple[int, int, int]  # (I, J, K)
    ghost: int
    bricks: tuple[BrickSpec, ...]  # flat index i + I*j + I*J*k

    @property
    def brick_count(self) -> int:
        i, j, k = self.counts
        return i * j * k


def _axis_runs(n: int, parts: int) -> list[tuple[int, int]]:
    """Split n voxels into contiguous runs differing in length by at most 1.

    The +1-length runs sit at the low-index end. Returns inclusive (lo, hi)."""
    base, rem = divmod(n, parts)
    runs, lo = [], 0
    for p in range(parts):
        length = base + (1 if p < rem else 0)
        runs.append((lo, lo + length - 1))
        lo += length
    return runs


def plan_partition(dims: tuple[int, int, int], i_count: int, j_count: int, k_count: int,
                   ghost: int = 1) -> DecompositionPlan:
    """Lay out an I x J x K grid of bricks over a (W, H, D) volume."""
    w, h, d = dims
    counts = (i_count, j_count, k_count)
    if min(counts) < 1 or ghost < 0:
        raise DecompositionError("brick counts must be >= 1 and ghost >= 0")
    for n, parts, axis in zip((w, h, d), counts, "xyz"):
        if parts > n:
            raise DecompositionError(f"{parts} bricks exceed {n} voxels along {axis}")
    runs = [_axis_runs(n, parts) for n, parts in zip((w, h, d), counts)]
    bricks = []
    for k in range(k_count):
        for j in range(j_count):
            for i in range(i_count):
                lo = (runs[0][i][0], runs[1][j][0], runs[2][k][0])
                hi = (runs[0][i][1], runs[1][j][1], runs[2][k][1])
                glo = tuple(max(0, v - ghost) for v in lo)
                ghi = tuple(min(n - 1, v + ghost) for v, n in zip(hi, dims))
                dlo = tuple(-1.0 + 2.0 * idx / cnt for idx, cnt in zip((i, j, k), counts))
                dhi = tuple(-1.0 + 2.0 * (idx + 1) / cnt for idx, cnt in zip((i, j, k), counts))
                bricks.append(BrickSpec(
                    index=(i, j, k),
                    core=Extent(lo=lo, hi=hi),
                    ghost=Extent(lo=glo, hi=ghi),
                    domain_lo=dlo,
                    domain_hi=dhi,
                ))
    return DecompositionPlan(dims=tuple(dims), counts=counts, ghost=ghost, bricks=tuple(bricks))


def spatial_hash(pts: np.ndarray, i_count: int, j_count: int, k_count: int) -> np.ndarray:
    """Flat brick index i + I*j + I*J*k for points in [-1, 1]^3.

    Per axis: i = floor(I * (p + 1) / 2), clamped below the count so the
    +1.0 boundary stays in range."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if pts.size and (np.abs(pts) > 1.0).any():
        raise DecompositionError("coordinate outside [-1, 1]^3")
    counts = np.array([i_count, j_count, k_count])
    cells = np.floor(counts * (pts + 1.0) * 0.5).astype(np.int64)
    cells = np.minimum(cells, counts - 1)
    return cells[:, 0] + i_count * cells[:, 1] + i_count * j_count * cells[:, 2]


@dataclass
class DecompositionManifest:
    plan: DecompositionPlan
    volume_header: VolumeHeader
    bricks: list[dict]  # per-brick model refs + training summary, flat C-order

    def to_json(self) -> dict:
        i, j, k = self.plan.counts
        return {
            "I": i, "J": j, "K": k,
            "ghost": self.plan.ghost,
            "volume_header": self.volume_header.to_json(),
            "bricks": self.bricks,
        }

    def write(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)


def load_manifest(path: str | Path) -> DecompositionManifest:
    path = Path(path)
    with open(path) as f:
        obj = json.load(f)
    header = VolumeHeader.from_json(obj["volume_header"])
    plan = plan_partition(header.dims, obj["I"], obj["J"], obj["K"], obj["ghost"])
    bricks = obj["bricks"]
    if len(bricks) != plan.brick_count:
        raise DecompositionError(
            f"manifest lists {len(bricks)} bricks, plan expects {plan.brick_count}")
    return DecompositionManifest(plan=plan, volume_header=header, bricks=bricks)


def _brick_seed(seed: int, flat_index: int) -> int:
    return (seed ^ flat_index) & 0x7FFFFFFF


def _train_brick(job: dict) -> tuple[int, dict]:
    """Worker-pool job: crop, train, save one brick's model. Top level so it pickles."""
    t0 = time.perf_counter()
    header = VolumeHeader.from_json(job["header"])
    brick = Extent(lo=tuple(job["ghost_lo"]), hi=tuple(job["ghost_hi"]))
    sub = load_subvolume(job["data_path"], header, brick)
    seed = job["seed"]
    model = init_model(ModelConfig.from_json(job["model_config"]), seed=seed,
                       vmin=sub.vmin, vmax=sub.vmax)
    cfg = TrainConfig(**{**job["train_config"], "seed": seed})
    model, log = train_single(model, sub, cfg)
    save_model(model, job["model_path"])
    summary = {
        "core_lo": job["core_lo"], "core_hi": job["core_hi"],
        "ghost_lo": job["ghost_lo"], "ghost_hi": job["ghost_hi"],
        "model_path": Path(job["model_path"]).name,
        "vmin": sub.vmin, "vmax": sub.vmax,
        "psnr": psnr(model, sub),
        "seed": seed,
        "iterations_run": log.iterations_run,
        "train_seconds": time.perf_counter() - t0,
    }
    return job["flat_index"], summary


def train_decomposed(data_path: str | Path, header: VolumeHeader, plan: DecompositionPlan,
                     model_config: ModelConfig, train_config: TrainConfig,
                     out_dir: str | Path, workers: int = 1) -> DecompositionManifest:
    """Train one independent model per brick over a fixed worker pool.

    Bricks are jobs on a shared queue; per-brick seeds are derived from the
    configured seed and the flat brick index, so results do not depend on
    scheduling order or worker count. Failures are recorded per brick in the
    manifest, which is still written before the error is raised.
    """
    if workers < 1:
        raise DecompositionError("worker count must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_cfg_json = {k: v for k, v in vars(train_config).items()}
    jobs = []
    for flat, brick in enumerate(plan.bricks):
        jobs.append({
            "flat_index": flat,
            "data_path": str(data_path),
            "header": header.to_json(),
            "core_lo": list(brick.core.lo), "core_hi": list(brick.core.hi),
            "ghost_lo": list(brick.ghost.lo), "ghost_hi": list(brick.ghost.hi),
            "model_config": model_config.to_json(),
            "train_config": train_cfg_json,
            "seed": _brick_seed(train_config.seed, flat),
            "model_path": str(out_dir / f"brick_{flat:04d}.apmg"),
        })

    results: dict[int, dict] = {}
    failures: dict[int, str] = {}
    if workers == 1:
        for job in jobs:
            try:
                flat, summary = _train_brick(job)
                results[flat] = summary
            except Exception as exc:  # noqa: BLE001 - recorded per brick
                failures[job["flat_index"]] = str(exc)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_train_brick, job): job for job in jobs}
            for future, job in futures.items():
                try:
                    flat, summary = future.result()
                    results[flat] = summary
                except Exception as exc:  # noqa: BLE001
                    failures[job["flat_index"]] = str(exc)

    bricks = []
    for flat, job in enumerate(jobs):
        if flat in results:
            bricks.append(results[flat])
        else:
            bricks.append({
                "core_lo": job["core_lo"], "core_hi": job["core_hi"],
                "ghost_lo": job["ghost_lo"], "ghost_hi": job["ghost_hi"],
                "model_path": Path(job["model_path"]).name,
                "error": failures[flat],
            })
    manifest = DecompositionManifest(plan=plan, volume_header=header, bricks=bricks)
    manifest.write(out_dir / "manifest.json")
    if failures:
        raise DecompositionError(f"{len(failures)} brick(s) failed: {failures}")
    return manifest


def _axis_bound(index: int, n: int) -> float:
    return 0.0 if n == 1 else 2.0 * index / (n - 1) - 1.0


class DecomposedField:
    """Loaded brick models plus the hash-based dispatch for batched inference."""

    def __init__(self, manifest: DecompositionManifest, models: list[ApmgModel]):
        if len(models) != manifest.plan.brick_count:
            raise DecompositionError("model count does not match manifest")
        self.manifest = manifest
        self.models = models
        dims = manifest.volume_header.dims
        # Per brick: local = p * scale + offset maps the ghost extent onto [-1, 1].
        self._scale = np.zeros((len(models), 3))
        self._offset = np.zeros((len(models), 3))
        for flat, brick in enumerate(manifest.plan.bricks):
            for axis in range(3):
                a_lo = _axis_bound(brick.ghost.lo[axis], dims[axis])
                a_hi = _axis_bound(brick.ghost.hi[axis], dims[axis])
                if a_hi > a_lo:
                    s = 2.0 / (a_hi - a_lo)
                    self._scale[flat, axis] = s
                    self._offset[flat, axis] = -s * a_lo - 1.0
        self.vmin = min(m.vmin for m in models)
        self.vmax = max(m.vmax for m in models)
        spans = [2.0 / (n - 1) if n > 1 else 2.0 for n in dims]
        self.voxel_diagonal = float(np.linalg.norm(spans))

    @classmethod
    def load(cls, manifest_path: str | Path) -> "DecomposedField":
        manifest = load_manifest(manifest_path)
        base = Path(manifest_path).parent
        models = []
        for entry in manifest.bricks:
            if "error" in entry:
                raise DecompositionError(f"manifest records a failed brick: {entry['error']}")
            models.append(load_model(base / entry["model_path"]))
        return cls(manifest, models)

    def forward(self, pts: np.ndarray) -> np.ndarray:
        """Evaluate each point with its owning brick's model, preserving order."""
        pts = np.atleast_2d(np.asarray(pts))
        i, j, k = self.manifest.plan.counts
        owners = spatial_hash(pts, i, j, k)
        out = np.zeros(len(pts), dtype=np.float32)
        for flat in np.unique(owners):
            mask = owners == flat
            local = pts[mask].astype(np.float64) * self._scale[flat] + self._offset[flat]
            out[mask] = self.models[flat].forward(local.astype(np.float32))
        return out

    __call__ = forward
