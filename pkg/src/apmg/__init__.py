"""Adaptively placed multi-grid scene representation networks for 3D scalar
fields, with domain-decomposed training and a progressive volume renderer."""

from .decomposition import (
    DecomposedField,
    DecompositionManifest,
    DecompositionPlan,
    plan_partition,
    spatial_hash,
    train_decomposed,
)
from .model import ApmgModel, ModelConfig, init_model, load_model, save_model
from .render import Camera, RenderConfig, TransferFunction, render_frame, render_progressive
from .trainer import TrainConfig, TrainLog, psnr, train_single
from .volume import BlobSpec, Extent, Volume, VolumeHeader, crop, load_volume, save_volume, synth_volume

__all__ = [
    "ApmgModel",
    "ModelConfig",
    "init_model",
    "save_model",
    "load_model",
    "Volume",
    "VolumeHeader",
    "Extent",
    "BlobSpec",
    "load_volume",
    "save_volume",
    "crop",
    "synth_volume",
    "TrainConfig",
    "TrainLog",
    "train_single",
    "psnr",
    "DecompositionPlan",
    "DecompositionManifest",
    "DecomposedField",
    "plan_partition",
    "spatial_hash",
    "train_decomposed",
    "Camera",
    "TransferFunction",
    "RenderConfig",
    "render_frame",
    "render_progressive",
]

__version__ = "0.1.0"
