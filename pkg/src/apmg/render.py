"""Volume rendering: pinhole rays, transfer functions, front-to-back
emission-absorption compositing, and progressive checkerboard refinement.

Determinism contract: for a fixed (field, camera, transfer function,
config), every pixel's value is computed by an identical elementwise chain
regardless of how rays or field queries are batched, so progressive
assembly is bit-identical to a direct render and the field-query batch size
never changes output.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from PIL import Image

from .model import ApmgModel
from .volume import Volume

__all__ = [
    "Camera",
    "TransferFunction",
    "RenderConfig",
    "VolumeField",
    "ModelField",
    "generate_rays",
    "ray_box_hits",
    "composite_ray",
    "render_frame",
    "progressive_schedule",
    "render_progressive",
    "image_to_png_bytes",
    "save_png",
]

# Reference lattice used for opacity correction when the field carries no
# voxel dimensions of its own (a 64^3 volume's voxel diagonal).
DEFAULT_REFERENCE_STEP = 2.0 * np.sqrt(3.0) / 63.0
_RAY_CHUNK = 16384


class RenderError(Exception):
    pass


@dataclass(frozen=True)
class Camera:
    eye: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    fov_deg: float = 45.0
    width: int = 256
    height: int = 256

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise RenderError("image dimensions must be >= 1")
        if not 0.0 < self.fov_deg < 180.0:
            raise RenderError("vertical field of view must be in (0, 180) degrees")
        fwd = np.subtract(self.look_at, self.eye, dtype=np.float64)
        if np.linalg.norm(fwd) == 0.0:
            raise RenderError("eye and look_at coincide")
        if np.linalg.norm(np.cross(fwd, np.asarray(self.up, dtype=np.float64))) < 1e-12:
            raise RenderError("up vector is parallel to the view direction")

    def to_json(self) -> dict:
        return {
            "eye": list(self.eye), "look_at": list(self.look_at), "up": list(self.up),
            "fov": self.fov_deg, "width": self.width, "height": self.height,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Camera":
        return cls(
            eye=tuple(float(v) for v in obj["eye"]),
            look_at=tuple(float(v) for v in obj["look_at"]),
            up=tuple(float(v) for v in obj.get("up", (0.0, 1.0, 0.0))),
            fov_deg=float(obj.get("fov", 45.0)),
            width=int(obj.get("width", 256)),
            height=int(obj.get("height", 256)),
        )


class TransferFunction:
    """Piecewise-linear color/opacity map baked into a 256-entry RGBA LUT.

    Control-point positions live in [0, 1] over the (window-remapped)
    normalized value range; the relative window restricts the mapped span of
    the data range, ParaView-style.
    """

    LUT_SIZE = 256

    def __init__(self, color_points=None, opacity_points=None, window=(0.0, 1.0)):
        if color_points is None:
            color_points = [(0.0, (0.0, 0.0, 0.0)), (1.0, (1.0, 1.0, 1.0))]
        if opacity_points is None:
            opacity_points = [(0.0, 0.0), (1.0, 1.0)]
        if not color_points or not opacity_points:
            raise RenderError("transfer function needs at least one point per channel")
        color_points = sorted((float(p), tuple(float(c) for c in rgb)) for p, rgb in color_points)
        opacity_points = sorted((float(p), float(a)) for p, a in opacity_points)
        for p, _ in color_points + opacity_points:
            if not 0.0 <= p <= 1.0:
                raise RenderError(f"control point position {p} outside [0, 1]")
        lo, hi = float(window[0]), float(window[1])
        if not (0.0 <= lo < hi <= 1.0):
            raise RenderError(f"window {window} must satisfy 0 <= lo < hi <= 1")
        self.color_points = color_points
        self.opacity_points = opacity_points
        self.window = (lo, hi)
        self.lut = self._bake()

    def _bake(self) -> np.ndarray:
        t = np.linspace(0.0, 1.0, self.LUT_SIZE)
        cp = np.array([p for p, _ in self.color_points])
        cv = np.array([rgb for _, rgb in self.color_points])
        op = np.array([p for p, _ in self.opacity_points])
        ov = np.array([a for _, a in self.opacity_points])
        lut = np.empty((self.LUT_SIZE, 4), dtype=np.float32)
        for ch in range(3):
            lut[:, ch] = np.interp(t, cp, cv[:, ch])
        lut[:, 3] = np.interp(t, op, ov)
        return lut

    def apply(self, values: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
        """Map raw field values to RGBA via normalization, window remap, LUT."""
        values = np.asarray(values, dtype=np.float32)
        if vmax > vmin:
            n = (values - np.float32(vmin)) / np.float32(vmax - vmin)
        else:
            n = np.zeros_like(values)
        lo, hi = self.window
        w = np.clip((n - np.float32(lo)) / np.float32(hi - lo), 0.0, 1.0)
        pos = w * (self.LUT_SIZE - 1)
        i0 = np.minimum(pos.astype(np.intp), self.LUT_SIZE - 2)
        frac = (pos - i0).astype(np.float32)[..., None]
        return self.lut[i0] * (1.0 - frac) + self.lut[i0 + 1] * frac

    def to_json(self) -> dict:
        return {
            "colormap": [{"position": p, "rgb": list(rgb)} for p, rgb in self.color_points],
            "opacity": [{"position": p, "alpha": a} for p, a in self.opacity_points],
            "window": list(self.window),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TransferFunction":
        return cls(
            color_points=[(d["position"], tuple(d["rgb"])) for d in obj["colormap"]],
            opacity_points=[(d["position"], d["alpha"]) for d in obj["opacity"]],
            window=tuple(obj.get("window", (0.0, 1.0))),
        )


@dataclass(frozen=True)
class RenderConfig:
    samples_per_ray: int = 128
    batch_size: int = 65536
    background: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 1.0)
    early_exit_alpha: float | None = 0.99
    reference_step: float | None = None  # None: field voxel diagonal, else default

    def __post_init__(self):
        if self.samples_per_ray < 1 or self.batch_size < 1:
            raise RenderError("samples_per_ray and batch_size must be >= 1")


class VolumeField:
    """Raw-volume field adapter (trilinear sampling)."""

    def __init__(self, volume: Volume):
        self.volume = volume
        self.vmin = volume.vmin
        self.vmax = volume.vmax
        self.voxel_diagonal = volume.voxel_diagonal

    def forward(self, pts: np.ndarray) -> np.ndarray:
        return self.volume.sample_many(pts).astype(np.float32)

    __call__ = forward


class ModelField:
    """Single-model field adapter; the value range is the one the model stored."""

    def __init__(self, model: ApmgModel, voxel_diagonal: float | None = None):
        self.model = model
        self.vmin = model.vmin
        self.vmax = model.vmax
        self.voxel_diagonal = voxel_diagonal

    def forward(self, pts: np.ndarray) -> np.ndarray:
        return self.model.forward(np.asarray(pts, dtype=np.float32))

    __call__ = forward


def generate_rays(camera: Camera):
    """Per-pixel unit ray directions, row-major with pixel (0, 0) top-left.

    Returns (origin (3,), dirs (H*W, 3))."""
    eye = np.asarray(camera.eye, dtype=np.float64)
    fwd = np.asarray(camera.look_at, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(camera.up, dtype=np.float64))
    right /= np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    tan_half = np.tan(np.radians(camera.fov_deg) * 0.5)
    aspect = camera.width / camera.height
    px = (np.arange(camera.width) + 0.5) / camera.width * 2.0 - 1.0
    py = 1.0 - (np.arange(camera.height) + 0.5) / camera.height * 2.0
    u, v = np.meshgrid(px * tan_half * aspect, py * tan_half)
    dirs = fwd + u[..., None] * right + v[..., None] * true_up
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return eye, dirs.reshape(-1, 3)


def ray_box_hits(origin: np.ndarray, dirs: np.ndarray):
    """Slab intersection with [-1, 1]^3: (t_enter, t_exit, hit mask).

    Rays starting inside the box enter at t=0; rays parallel to a slab miss
    unless the origin lies within it."""
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    t0 = np.full(len(dirs), -np.inf)
    t1 = np.full(len(dirs), np.inf)
    for axis in range(3):
        d = dirs[:, axis]
        o = origin[axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (-1.0 - o) / d
            tb = (1.0 - o) / d
        near = np.minimum(ta, tb)
        far = np.maximum(ta, tb)
        parallel = d == 0.0
        inside_slab = abs(o) <= 1.0
        t0 = np.where(parallel, np.where(inside_slab, t0, np.inf), np.maximum(t0, near))
        t1 = np.where(parallel, np.where(inside_slab, t1, -np.inf), np.minimum(t1, far))
    enter = np.maximum(t0, 0.0)
    hit = (t1 > enter) & (t1 > 0.0) & np.isfinite(enter)
    return enter, t1, hit


def _corrected_alpha(alpha: np.ndarray, step, reference_step: float) -> np.ndarray:
    return 1.0 - np.power(1.0 - alpha, np.asarray(step, dtype=np.float32) / np.float32(reference_step))


def composite_ray(samples: np.ndarray, step: float, reference_step: float = DEFAULT_REFERENCE_STEP,
                  background=(0.0, 0.0, 0.0, 1.0), early_exit_alpha: float | None = 0.99) -> np.ndarray:
    """Front-to-back composite of one ray's RGBA samples over a background.

    Opacity is corrected for step length, alpha' = 1 - (1 - alpha)^(step /
    reference_step); accumulation stops once alpha reaches the early-exit
    threshold."""
    samples = np.asarray(samples, dtype=np.float32).reshape(1, -1, 4)
    steps = np.full(1, step, dtype=np.float32)
    return _composite(samples, steps, reference_step, background, early_exit_alpha)[0]


def _composite(samples: np.ndarray, steps: np.ndarray, reference_step: float,
               background, early_exit_alpha: float | None) -> np.ndarray:
    """Vectorized front-to-back compositing; elementwise per ray."""
    n, s_count, _ = samples.shape
    color = np.zeros((n, 3), dtype=np.float32)
    alpha = np.zeros(n, dtype=np.float32)
    corr = _corrected_alpha(samples[:, :, 3], steps[:, None], reference_step)
    for s in range(s_count):
        active = np.ones(n, dtype=bool) if early_exit_alpha is None else alpha < early_exit_alpha
        contrib = (1.0 - alpha) * corr[:, s]
        color = np.where(active[:, None], color + contrib[:, None] * samples[:, s, :3], color)
        alpha = np.where(active, alpha + contrib, alpha)
    bg = np.asarray(background, dtype=np.float32)
    out = np.empty((n, 4), dtype=np.float32)
    remaining = (1.0 - alpha) * bg[3]
    out[:, :3] = color + remaining[:, None] * bg[:3]
    out[:, 3] = alpha + remaining
    return out


def _resolve_reference_step(field, cfg: RenderConfig) -> float:
    if cfg.reference_step is not None:
        return cfg.reference_step
    diag = getattr(field, "voxel_diagonal", None)
    return diag if diag else DEFAULT_REFERENCE_STEP


def _render_rays(field, origin: np.ndarray, dirs: np.ndarray, tf: TransferFunction,
                 cfg: RenderConfig) -> tuple[np.ndarray, int]:
    """Render an arbitrary subset of rays; returns (RGBA (N, 4), field evals)."""
    n = len(dirs)
    out = np.empty((n, 4), dtype=np.float32)
    bg = np.asarray(cfg.background, dtype=np.float32)
    reference_step = _resolve_reference_step(field, cfg)
    enter, exit_t, hit = ray_box_hits(origin, dirs)
    out[~hit] = bg
    hit_idx = np.nonzero(hit)[0]
    evals = 0
    s_count = cfg.samples_per_ray
    for lo in range(0, len(hit_idx), _RAY_CHUNK):
        idx = hit_idx[lo : lo + _RAY_CHUNK]
        t_in = enter[idx]
        dt = (exit_t[idx] - t_in) / s_count
        offsets = (np.arange(s_count) + 0.5)[None, :] * dt[:, None] + t_in[:, None]
        pts = origin[None, None, :] + offsets[:, :, None] * dirs[idx][:, None, :]
        pts = np.clip(pts, -1.0, 1.0).reshape(-1, 3).astype(np.float32)
        values = np.empty(len(pts), dtype=np.float32)
        for b in range(0, len(pts), cfg.batch_size):
            values[b : b + cfg.batch_size] = field.forward(pts[b : b + cfg.batch_size])
        evals += len(pts)
        rgba = tf.apply(values, field.vmin, field.vmax).reshape(len(idx), s_count, 4)
        out[idx] = _composite(rgba, dt.astype(np.float32), reference_step,
                              cfg.background, cfg.early_exit_alpha)
    return out, evals


def render_frame(field, camera: Camera, tf: TransferFunction, cfg: RenderConfig) -> np.ndarray:
    """Render the full image; returns float32 RGBA of shape (height, width, 4)."""
    origin, dirs = generate_rays(camera)
    pixels, _ = _render_rays(field, origin, dirs, tf, cfg)
    return pixels.reshape(camera.height, camera.width, 4)


def progressive_schedule(width: int, height: int):
    """Coarse-to-fine passes over a power-of-two image hierarchy.

    Pass k carries exactly the pixels first evaluated at level k (stride
    2^(L-1-k) representatives minus coarser ones); the passes partition the
    image. Returns a list of (level, stride, pixels (P, 2) as (x, y))."""
    if width < 1 or height < 1:
        raise RenderError("image dimensions must be >= 1")
    levels = max(int(np.ceil(np.log2(max(width, height, 1)))), 0) + 1
    passes = []
    for level in range(levels):
        stride = 2 ** (levels - 1 - level)
        xs = np.arange(0, width, stride)
        ys = np.arange(0, height, stride)
        gx, gy = np.meshgrid(xs, ys)
        px = np.stack([gx.ravel(), gy.ravel()], axis=1)
        if level > 0:
            prev = stride * 2
            new = (px[:, 0] % prev != 0) | (px[:, 1] % prev != 0)
            px = px[new]
        passes.append((level, stride, px))
    return passes


def _bilinear_upscale(small: np.ndarray, width: int, height: int) -> np.ndarray:
    sh, sw = small.shape[:2]
    if (sh, sw) == (height, width):
        return small.copy()
    out_x = (np.arange(width) + 0.5) * sw / width - 0.5
    out_y = (np.arange(height) + 0.5) * sh / height - 0.5
    x0 = np.clip(np.floor(out_x), 0, sw - 1).astype(np.intp)
    y0 = np.clip(np.floor(out_y), 0, sh - 1).astype(np.intp)
    x1 = np.minimum(x0 + 1, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    fx = np.clip(out_x - x0, 0.0, 1.0).astype(np.float32)[None, :, None]
    fy = np.clip(out_y - y0, 0.0, 1.0).astype(np.float32)[:, None, None]
    top = small[y0[:, None], x0[None, :]] * (1 - fx) + small[y0[:, None], x1[None, :]] * fx
    bot = small[y1[:, None], x0[None, :]] * (1 - fx) + small[y1[:, None], x1[None, :]] * fx
    return top * (1 - fy) + bot * fy


@dataclass
class ProgressivePass:
    index: int
    level: int
    stride: int
    preview: np.ndarray  # (height, width, 4) float32
    new_pixels: int
    samples_evaluated: int
    final: bool = dc_field(default=False)


def render_progressive(field, camera: Camera, tf: TransferFunction, cfg: RenderConfig):
    """Yield one ProgressivePass per hierarchy level, coarse to fine.

    Each preview is the finest fully-evaluated level bilinearly upscaled,
    overwritten with every exactly-evaluated pixel; the last pass's preview
    is bit-identical to ``render_frame`` on the same inputs. Consumers may
    stop iterating at any pass boundary to cancel."""
    origin, dirs = generate_rays(camera)
    dirs = dirs.reshape(camera.height, camera.width, 3)
    image = np.zeros((camera.height, camera.width, 4), dtype=np.float32)
    done = np.zeros((camera.height, camera.width), dtype=bool)
    passes = progressive_schedule(camera.width, camera.height)
    for index, (level, stride, px) in enumerate(passes):
        ray_dirs = dirs[px[:, 1], px[:, 0]]
        pixels, evals = _render_rays(field, origin, ray_dirs, tf, cfg)
        image[px[:, 1], px[:, 0]] = pixels
        done[px[:, 1], px[:, 0]] = True
        level_img = image[::stride, ::stride]
        preview = _bilinear_upscale(level_img, camera.width, camera.height)
        preview[done] = image[done]
        yield ProgressivePass(
            index=index, level=level, stride=stride, preview=preview,
            new_pixels=len(px), samples_evaluated=evals,
            final=index == len(passes) - 1,
        )


def image_to_png_bytes(image: np.ndarray) -> bytes:
    """Encode a float RGBA image (values clipped to [0, 1]) as 8-bit PNG."""
    arr = (np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def save_png(image: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(image_to_png_bytes(image))


def load_camera(path: str | Path) -> Camera:
    import json

    with open(path) as f:
        return Camera.from_json(json.load(f))


def load_tf(path: str | Path) -> TransferFunction:
    import json

    with open(path) as f:
        return TransferFunction.from_json(json.load(f))
