"""Loss gradients, the Adam optimizer, and a finite-difference oracle.

Gradients are hand-derived reverse-mode passes over the model's forward
chain. The two losses update disjoint parameter groups: the reconstruction
loss reaches the feature grids and decoder only, the density loss reaches
the top three rows of the transforms only. Per-batch reductions use a
fixed accumulation order (matmul + bincount), so results are reproducible
for a fixed thread configuration.
"""

from __future__ import annotations

import numpy as np

from .density import (
    EPSILON,
    cofactor_matrices,
    density_loss,
    feature_density_terms,
    scale_density,
    target_density,
)
from .model import ApmgModel, _interp_channels, _stable_matmul, grid_interp_terms, to_local

__all__ = [
    "AdamState",
    "adam_step",
    "recon_loss_and_grads",
    "density_loss_and_grads",
    "finite_diff_check",
]

BETA1 = 0.9
BETA2 = 0.99
ADAM_GUARD = 1e-8


class AdamState:
    """First/second moment buffers and step counter for a named parameter set."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place.

    Entries whose gradient is exactly zero are left untouched (moments
    included), so a zero-gradient call never moves parameters regardless of
    accumulated momentum. This is what keeps untouched feature-grid cells
    and masked parameter groups bit-frozen.
    """
    state.t += 1
    bc1 = 1.0 - BETA1 ** state.t
    bc2 = 1.0 - BETA2 ** state.t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {key!r}")
        mask = g != 0
        if not mask.any():
            continue
        g = g[mask]
        m = state.m[key][mask]
        v = state.v[key][mask]
        m = BETA1 * m + (1.0 - BETA1) * g
        v = BETA2 * v + (1.0 - BETA2) * (g * g)
        state.m[key][mask] = m
        state.v[key][mask] = v
        p[mask] = p[mask] - lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_GUARD)


def _forward_chain(model: ApmgModel, coords: np.ndarray):
    """Forward pass keeping every intermediate needed for the backward pass."""
    coords = np.atleast_2d(np.asarray(coords, dtype=model.dtype))
    n = len(coords)
    m, c = model.config.grids, model.config.channels
    feats = np.zeros((n, m * c), dtype=model.dtype)
    interp = []
    for i in range(m):
        local = to_local(model.transforms[i], coords)
        terms = grid_interp_terms(model.config.resolution, local)
        interp.append(terms)
        inside, ix, iy, iz, fx, fy, fz = terms
        feats[:, i * c : (i + 1) * c] = _interp_channels(model.grids[i], ix, iy, iz, fx, fy, fz)
        feats[~inside, i * c : (i + 1) * c] = 0
    # same stable contractions as ApmgModel.decode, so training-time outputs
    # are bit-identical to inference outputs for the same parameters
    z1 = _stable_matmul(feats, model.w1)
    h1 = np.maximum(z1, 0)
    z2 = _stable_matmul(h1, model.w2)
    h2 = np.maximum(z2, 0)
    raw = _stable_matmul(h2, model.w3)
    scale = np.asarray(model.vmax - model.vmin, dtype=model.dtype)
    out = raw[:, 0] * scale + np.asarray(model.vmin, dtype=model.dtype)
    return coords, feats, z1, h1, z2, h2, out, interp


def recon_loss_and_grads(model: ApmgModel, coords: np.ndarray, targets: np.ndarray):
    """Mean-squared reconstruction loss and its gradients.

    Returns (loss, per_point_sq_errors, grads) where grads holds entries for
    'grids', 'w1', 'w2', 'w3' only; the transforms receive no gradient from
    this loss.
    """
    targets = np.asarray(targets, dtype=model.dtype).ravel()
    if targets.size < 1:
        raise ValueError("empty batch")
    coords, feats, z1, h1, z2, h2, out, interp = _forward_chain(model, coords)
    if len(coords) != targets.size:
        raise ValueError(f"{len(coords)} coordinates but {targets.size} targets")
    n = targets.size
    resid = out - targets
    sq_errors = resid * resid
    loss = float(np.mean(sq_errors, dtype=np.float64))

    scale = np.asarray(model.vmax - model.vmin, dtype=model.dtype)
    g_raw = (resid * (np.asarray(2.0 / n, dtype=model.dtype) * scale))[:, None]
    d_w3 = g_raw.T @ h2
    g_z2 = (g_raw @ model.w3) * (z2 > 0)
    d_w2 = g_z2.T @ h1
    g_z1 = (g_z2 @ model.w2) * (z1 > 0)
    d_w1 = g_z1.T @ feats
    g_feats = g_z1 @ model.w1

    m, c = model.config.grids, model.config.channels
    d, h, w = model.config.resolution
    d_grids = np.zeros_like(model.grids)
    for i in range(m):
        inside, ix, iy, iz, fx, fy, fz = interp[i]
        if not inside.any():
            continue
        ixs, iys, izs = ix[inside], iy[inside], iz[inside]
        fxs, fys, fzs = fx[inside], fy[inside], fz[inside]
        flat_parts, weight_parts = [], []
        for cz in (0, 1):
            wz = fzs if cz else 1.0 - fzs
            for cy in (0, 1):
                wy = fys if cy else 1.0 - fys
                for cx in (0, 1):
                    wx = fxs if cx else 1.0 - fxs
                    flat_parts.append((izs + cz) * (h * w) + (iys + cy) * w + (ixs + cx))
                    weight_parts.append(wx * wy * wz)
        flat = np.concatenate(flat_parts)
        weights = np.concatenate(weight_parts)
        for ch in range(c):
            g_pts = g_feats[inside, i * c + ch]
            acc = np.bincount(flat, weights=np.tile(g_pts, 8) * weights, minlength=d * h * w)
            d_grids[i, ch] += acc.reshape(d, h, w).astype(model.dtype)

    grads = {"grids": d_grids, "w1": d_w1, "w2": d_w2, "w3": d_w3}
    return loss, sq_errors, grads


def density_loss_and_grads(model: ApmgModel, coords: np.ndarray, errors: np.ndarray):
    """Density loss and its gradient for the top three rows of every transform.

    The target density is held constant (no gradient flows through it); the
    batch normalizer of the current density is differentiated through. All
    math runs in float64; the returned gradient is cast to the model dtype
    with bottom rows exactly zero.
    """
    coords64 = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    errors = np.asarray(errors, dtype=np.float64).ravel()
    if len(coords64) < 2 or errors.size != len(coords64):
        raise ValueError("density batch needs >= 2 coordinates with matching errors")
    p = model.config.flat_top_p

    local, dets, bumps, rho = feature_density_terms(model.transforms, coords64, p)
    total = rho.sum()
    rho_scaled = scale_density(rho)
    mean_error = float(errors.mean())
    rho_star = target_density(rho_scaled, errors, mean_error)
    loss = density_loss(rho_scaled, rho_star)

    n = rho.size
    # dL/d(rho_scaled), then through the batch normalizer rho_scaled = rho / sum(rho)
    d_scaled = (np.log(rho_scaled + EPSILON) - np.log(rho_star)
                + rho_scaled / (rho_scaled + EPSILON)) / n
    d_rho = (d_scaled - (d_scaled * rho_scaled).sum()) / total

    a = np.asarray(model.transforms, dtype=np.float64)[:, :3, :3]
    cof = cofactor_matrices(a)  # d(det)/dA, smooth even at det = 0
    with np.errstate(over="ignore", invalid="ignore"):
        lpow = local * (local * local) ** (p - 1)  # local^(2p-1), sign preserved
    lpow = np.where(bumps[:, :, None] > 0, lpow, 0.0)

    weights = d_rho[None, :] * bumps  # (M, N)
    s = np.abs(dets)[:, None] * weights
    d_a = (np.sign(dets) * weights.sum(axis=1))[:, None, None] * cof
    d_a -= 2.0 * p * np.einsum("mn,mnr,nc->mrc", s, lpow, coords64)
    d_t = -2.0 * p * np.einsum("mn,mnr->mr", s, lpow)

    d_transforms = np.zeros_like(model.transforms)
    d_transforms[:, :3, :3] = d_a.astype(model.dtype)
    d_transforms[:, :3, 3] = d_t.astype(model.dtype)
    return loss, {"transforms": d_transforms}


def finite_diff_check(loss_and_grads_fn, params: dict[str, np.ndarray], step: float,
                      samples_per_tensor: int = 50, rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients against central finite differences.

    ``loss_and_grads_fn(params) -> (loss, grads)`` must be deterministic.
    Samples up to ``samples_per_tensor`` coordinates per tensor (all of them
    for smaller tensors) and returns the max over sampled coordinates of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    if rng is None:
        rng = np.random.Generator(np.random.Philox(0))
    _, grads = loss_and_grads_fn(params)
    worst = 0.0
    for key, base in params.items():
        flat_size = base.size
        count = min(flat_size, samples_per_tensor)
        picks = rng.choice(flat_size, size=count, replace=False)
        analytic_flat = np.asarray(grads[key], dtype=np.float64).ravel()
        for flat_idx in picks:
            shifted = {k: v.copy() for k, v in params.items()}
            shifted[key].ravel()[flat_idx] = base.ravel()[flat_idx] + step
            plus, _ = loss_and_grads_fn(shifted)
            shifted[key].ravel()[flat_idx] = base.ravel()[flat_idx] - step
            minus, _ = loss_and_grads_fn(shifted)
            numeric = (plus - minus) / (2.0 * step)
            analytic = analytic_flat[flat_idx]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
