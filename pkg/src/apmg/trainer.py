"""Single-model training loop and evaluation.

Every iteration draws a fresh uniform batch of coordinates, runs a
reconstruction step on the feature grids and decoder, and (after a delayed
start, while the stop flag is unset) a density step on the transforms using
the same batch and its detached per-point squared errors. A plateau
scheduler watches the reconstruction loss and can end training early;
a moving-average check halts transform updates once the density loss stops
improving, with a hard stop at 80% of the iteration budget.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .model import ApmgModel
from .optim import AdamState, adam_step, density_loss_and_grads, recon_loss_and_grads
from .volume import Volume

__all__ = [
    "TrainConfig",
    "TrainLog",
    "PlateauState",
    "plateau_step",
    "transform_stop_check",
    "train_single",
    "psnr",
]

PSNR_CAP_DB = 200.0


@dataclass
class TrainConfig:
    iterations: int = 50_000
    batch_size: int = 100_000
    lr_main: float = 0.01
    lr_transform: float = 0.001
    delay_start: int = 500
    transform_ma_window: int = 1000
    transform_improve_threshold: float = 1e-4  # 0.01% relative
    transform_hard_stop_fraction: float = 0.8
    plateau_window: int = 500
    plateau_threshold: float = 1e-4
    plateau_factor: float = 10.0
    plateau_max_triggers: int = 3
    seed: int = 0
    train_transforms: bool = True
    plateau_enabled: bool = True

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")
        if self.iterations > 0 and self.delay_start >= self.iterations:
            raise ValueError("delay_start must be < iterations")
        for name in ("lr_main", "lr_transform", "transform_ma_window", "plateau_window",
                     "transform_improve_threshold", "plateau_threshold", "plateau_factor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def hard_stop_iteration(self) -> int:
        return int(np.ceil(self.transform_hard_stop_fraction * self.iterations))


@dataclass
class TrainLog:
    """Per-iteration history. Wall time is informational and the only field
    that varies between otherwise identical runs."""

    l_rec: list[float] = field(default_factory=list)
    l_density: list[float | None] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    transform_stop_iteration: int | None = None
    plateau_trigger_iterations: list[int] = field(default_factory=list)
    iterations_run: int = 0
    wall_seconds: float = 0.0

    def records(self):
        """Line-delimited JSON records: {iter, l_rec, l_density, lr, flags}."""
        stop = self.transform_stop_iteration
        for i in range(self.iterations_run):
            triggers = sum(1 for t in self.plateau_trigger_iterations if t <= i)
            yield {
                "iter": i,
                "l_rec": self.l_rec[i],
                "l_density": self.l_density[i],
                "lr": self.lr[i],
                "flags": {
                    "transform_frozen": stop is not None and i >= stop,
                    "plateau_triggers": triggers,
                },
            }

    def write_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for rec in self.records():
                f.write(json.dumps(rec) + "\n")


@dataclass
class PlateauState:
    """Window-to-window comparison of the loss moving average."""

    lr: float
    window: int
    threshold: float
    factor: float
    max_triggers: int
    history: list[float] = field(default_factory=list)
    triggers: int = 0


def plateau_step(state: PlateauState, current_ma: float) -> str:
    """Advance the plateau scheduler with the latest loss moving average.

    Returns 'none', 'reduce_lr', or 'stop'. A trigger fires when the moving
    average has not dropped below its value one window earlier by the
    relative threshold; each trigger divides the learning rate by the factor
    (and restarts the comparison window), and the final trigger requests a
    stop. Callers should feed full-window averages only, so the first
    trigger can fire one window after the average first fills.
    """
    state.history.append(current_ma)
    if len(state.history) <= state.window:
        return "none"
    reference = state.history[-state.window - 1]
    improvement = (reference - current_ma) / max(abs(reference), 1e-12)
    if improvement >= state.threshold:
        return "none"
    state.history.clear()
    state.triggers += 1
    state.lr /= state.factor
    return "stop" if state.triggers >= state.max_triggers else "reduce_lr"


def transform_stop_check(history, cfg: TrainConfig, iteration: int) -> bool:
    """Whether transform updates should halt at this iteration.

    True once the moving average over the last window of density losses has
    not improved on the average one window earlier by the relative
    threshold, or unconditionally from the hard-stop iteration (80% of the
    budget). The trainer latches the first True.
    """
    if iteration >= cfg.hard_stop_iteration:
        return True
    w = cfg.transform_ma_window
    if len(history) < 2 * w:
        return False
    recent = float(np.mean(history[-w:]))
    previous = float(np.mean(history[-2 * w : -w]))
    improvement = (previous - recent) / max(abs(previous), 1e-12)
    return improvement < cfg.transform_improve_threshold


def train_single(model: ApmgModel, volume: Volume, cfg: TrainConfig,
                 on_iteration=None) -> tuple[ApmgModel, TrainLog]:
    """Fit ``model`` to ``volume`` in place; returns the model and its log.

    Deterministic for fixed (volume, cfg, seed) at a fixed thread
    configuration: coordinates come from a counter-based Philox stream and
    all reductions have a stable order. A plateau trigger scales both
    learning rates. ``on_iteration(it, model)``, if given, runs after each
    iteration's updates.
    """
    log = TrainLog()
    if cfg.iterations == 0:
        return model, log

    start = time.perf_counter()
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    main_params = {"grids": model.grids, "w1": model.w1, "w2": model.w2, "w3": model.w3}
    transform_params = {"transforms": model.transforms}
    main_state = AdamState(main_params)
    transform_state = AdamState(transform_params)
    plateau = PlateauState(
        lr=cfg.lr_main, window=cfg.plateau_window, threshold=cfg.plateau_threshold,
        factor=cfg.plateau_factor, max_triggers=cfg.plateau_max_triggers,
    )
    density_history: list[float] = []
    transforms_active = cfg.train_transforms
    lr_scale = 1.0

    for it in range(cfg.iterations):
        coords64 = rng.uniform(-1.0, 1.0, size=(cfg.batch_size, 3))
        targets = volume.sample_many(coords64).astype(np.float32)
        coords = coords64.astype(np.float32)

        l_rec, sq_errors, grads = recon_loss_and_grads(model, coords, targets)
        adam_step(main_params, grads, main_state, cfg.lr_main * lr_scale)

        l_density = None
        if transforms_active and it >= cfg.delay_start:
            if transform_stop_check(density_history, cfg, it):
                transforms_active = False
                log.transform_stop_iteration = it
            else:
                l_density, dg = density_loss_and_grads(
                    model, coords, np.asarray(sq_errors, dtype=np.float64))
                adam_step(transform_params, dg, transform_state, cfg.lr_transform * lr_scale)
                density_history.append(l_density)

        log.l_rec.append(l_rec)
        log.l_density.append(l_density)
        log.lr.append(cfg.lr_main * lr_scale)
        log.iterations_run = it + 1
        if on_iteration is not None:
            on_iteration(it, model)

        if cfg.plateau_enabled and len(log.l_rec) >= cfg.plateau_window:
            action = plateau_step(plateau, float(np.mean(log.l_rec[-cfg.plateau_window:])))
            if action != "none":
                log.plateau_trigger_iterations.append(it)
                lr_scale /= cfg.plateau_factor
                if action == "stop":
                    break

    log.wall_seconds = time.perf_counter() - start
    return model, log


def psnr(field, volume: Volume, batch_size: int = 65536) -> float:
    """Data-space PSNR in dB: 10 log10(range^2 / MSE) over every voxel center.

    ``field`` is a model or any callable mapping (N, 3) float32 coordinates
    to values. Zero MSE (and constant volumes) report the 200 dB cap.
    """
    predict = field.forward if isinstance(field, ApmgModel) else field
    value_range = volume.vmax - volume.vmin
    if value_range == 0.0:
        return PSNR_CAP_DB
    pts = volume.lattice_coords()
    truth = volume.data.ravel()
    sq_sum = 0.0
    for lo in range(0, len(pts), batch_size):
        chunk = pts[lo : lo + batch_size].astype(np.float32)
        pred = np.asarray(predict(chunk), dtype=np.float64)
        diff = pred - truth[lo : lo + batch_size]
        sq_sum += float((diff * diff).sum())
    mse = sq_sum / len(pts)
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(value_range * value_range / mse), PSNR_CAP_DB))
