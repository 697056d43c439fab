"""Render a volume and a trained model, then watch progressive refinement.

Produces three image files: the raw volume, the model (run demo 01 first,
or this script trains a quick one), and one PNG per progressive pass so you
can flip through the coarse-to-fine sequence. The final pass is
bit-identical to the direct render.
"""

from pathlib import Path

import numpy as np

from apmg import BlobSpec, Camera, ModelConfig, RenderConfig, TrainConfig, TransferFunction, init_model, synth_volume
from apmg.render import ModelField, VolumeField, render_frame, render_progressive, save_png
from apmg.trainer import train_single

volume = synth_volume(
    (48, 48, 48),
    [
        BlobSpec(center=(0.45, -0.3, 0.2), sigma=(0.08, 0.08, 0.08)),
        BlobSpec(center=(-0.4, 0.35, -0.3), sigma=(0.12, 0.1, 0.14), amplitude=0.7),
    ],
)

model_path = Path("demo_single.apmg")
if model_path.exists():
    from apmg.model import load_model

    model = load_model(model_path)
    print("using model from demo 01")
else:
    print("no demo_single.apmg found; training a quick model (about a minute)")
    model = init_model(ModelConfig(grids=8, channels=1, resolution=(8, 8, 8), seed=3),
                       vmin=volume.vmin, vmax=volume.vmax)
    train_single(model, volume, TrainConfig(iterations=2000, batch_size=2048, seed=3))

camera = Camera(eye=(1.6, 1.2, 2.6), look_at=(0.0, 0.0, 0.0), fov_deg=40,
                width=320, height=320)
tf = TransferFunction(
    color_points=[(0.0, (0.05, 0.05, 0.2)), (0.5, (0.9, 0.4, 0.1)), (1.0, (1.0, 1.0, 0.8))],
    opacity_points=[(0.0, 0.0), (0.25, 0.02), (1.0, 0.8)],
)
cfg = RenderConfig(samples_per_ray=160)

save_png(render_frame(VolumeField(volume), camera, tf, cfg), "render_volume.png")
print("wrote render_volume.png (ground truth)")

direct = render_frame(ModelField(model, voxel_diagonal=volume.voxel_diagonal), camera, tf, cfg)
save_png(direct, "render_model.png")
print("wrote render_model.png (neural field)")

field = ModelField(model, voxel_diagonal=volume.voxel_diagonal)
for item in render_progressive(field, camera, tf, cfg):
    save_png(item.preview, f"render_pass_{item.index}.png")
    print(f"  pass {item.index}: level {item.level} (+{item.new_pixels} pixels)")
assert item.preview.tobytes() == direct.tobytes()
print("final progressive pass is bit-identical to the direct render")

err = np.abs(direct - render_frame(VolumeField(volume), camera, tf, cfg)).max()
print(f"max per-channel difference between model and volume renders: {err:.4f}")
