"""Differentiable feature density, its error-warped target, and the density loss.

A grid's indicator function has zero gradient everywhere, so grids that do
not contain a point would never feel its error. The density model replaces
the indicator with a flat-top gaussian bump in the grid's local frame,
weighted by the determinant of the transform's 3x3 block (features per unit
volume), which keeps a small but nonzero pull on every grid from every
coordinate. The loss is the relative entropy from an error-warped target
density to the current batch-normalized density; it is the only loss that
trains the transforms.

All density math runs in float64; per-grid exponents above ``EXP_CLAMP``
contribute exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EPSILON",
    "EXP_CLAMP",
    "DensityBatch",
    "flat_top",
    "feature_density",
    "feature_density_terms",
    "scale_density",
    "target_density",
    "density_loss",
]

EPSILON = 1e-8
EXP_CLAMP = 700.0
# A point whose error is many orders below the batch mean can warp its
# target density below float range; flooring keeps the relative entropy
# (and its gradients) finite.
TARGET_FLOOR = 1e-300


class DensityError(Exception):
    pass


@dataclass(frozen=True)
class FlatTopParams:
    """Flat-top strength; center 0 and unit width are fixed in local space."""

    p: int

    def __post_init__(self):
        if self.p < 1:
            raise DensityError("flat-top strength p must be >= 1")


def flat_top(t, p: int):
    """Unit flat-top gaussian exp(-t^(2p) / 2); box-like for large p.

    Even in t, equals 1 at t=0, and reduces to the standard gaussian kernel
    at p=1. The density model below uses the same bump without the 1/2
    factor in the exponent.
    """
    if p < 1:
        raise DensityError("flat-top strength p must be >= 1")
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(over="ignore"):
        q = 0.5 * (t * t) ** p
    return np.where(q > EXP_CLAMP, 0.0, np.exp(-np.minimum(q, EXP_CLAMP)))


def cofactor_matrices(a: np.ndarray) -> np.ndarray:
    """Cofactor matrices of a stack of 3x3 matrices: row i is the cross
    product of the other two rows, so cof is the determinant's derivative
    with respect to the matrix. Polynomial in the entries; no inversion."""
    return np.stack([
        np.cross(a[:, 1], a[:, 2]),
        np.cross(a[:, 2], a[:, 0]),
        np.cross(a[:, 0], a[:, 1]),
    ], axis=1)


def feature_density_terms(transforms: np.ndarray, pts: np.ndarray, p: int):
    """Per-grid intermediates of the density sum, shared with the backward pass.

    Returns (local, dets, bumps, rho): local coords (M, N, 3), signed 3x3
    determinants (M,), per-grid bump values exp(-sum_d local_d^(2p)) with
    the overflow clamp applied (M, N), and the density rho (N,). The
    density weights each bump by |det|: feature density is a magnitude, and
    an optimizer step that flips a transform's orientation must not produce
    negative density.
    """
    transforms = np.asarray(transforms, dtype=np.float64)
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    a = transforms[:, :3, :3]
    t = transforms[:, :3, 3]
    local = np.einsum("mij,nj->mni", a, pts) + t[:, None, :]
    dets = np.einsum("mi,mi->m", a[:, 0], np.cross(a[:, 1], a[:, 2]))
    with np.errstate(over="ignore"):
        q = ((local * local) ** p).sum(axis=2)
    bumps = np.where(q > EXP_CLAMP, 0.0, np.exp(-np.minimum(q, EXP_CLAMP)))
    rho = (np.abs(dets)[:, None] * bumps).sum(axis=0)
    return local, dets, bumps, rho


def feature_density(transforms: np.ndarray, pts: np.ndarray, p: int) -> np.ndarray:
    """Density rho at global points: sum_i |det(A_i)| * exp(-sum_d local_d^(2p))."""
    return feature_density_terms(transforms, pts, p)[3]


def scale_density(rho: np.ndarray) -> np.ndarray:
    """Normalize a batch of densities to sum to one."""
    rho = np.asarray(rho, dtype=np.float64)
    total = rho.sum()
    if total <= 0.0:
        raise DensityError("degenerate batch: feature density sums to zero")
    return rho / total


def target_density(rho_scaled: np.ndarray, errors: np.ndarray, mean_error: float,
                   epsilon: float = EPSILON) -> np.ndarray:
    """Error-warped density target: exp(((h_bar+eps)/(h+eps)) * log(rho_scaled+eps)).

    Raising the scaled density to the relative-error power pushes the target
    up where error is above average (exponent < 1 lifts a value in (0, 1))
    and down where it is below. The guard constant appears in both the ratio
    and the log so that uniform errors leave the target at exactly
    rho_scaled + eps. The result is a constant during backpropagation.
    """
    rho_scaled = np.asarray(rho_scaled, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    exponent = (mean_error + epsilon) / (errors + epsilon)
    # exp(log(x)) is off by an ulp; a unit exponent must leave the target
    # exactly unchanged.
    warped = np.where(exponent == 1.0, rho_scaled + epsilon,
                      np.exp(exponent * np.log(rho_scaled + epsilon)))
    return np.maximum(warped, TARGET_FLOOR)


def density_loss(rho_scaled: np.ndarray, rho_star: np.ndarray,
                 epsilon: float = EPSILON) -> float:
    """Relative entropy (1/N) sum rho_scaled * log((rho_scaled+eps) / rho_star)."""
    rho_scaled = np.asarray(rho_scaled, dtype=np.float64)
    rho_star = np.asarray(rho_star, dtype=np.float64)
    if rho_scaled.shape != rho_star.shape or rho_scaled.size < 1:
        raise DensityError("rho_scaled and rho_star must be equal-length, non-empty")
    n = rho_scaled.size
    return float((rho_scaled * (np.log(rho_scaled + epsilon) - np.log(rho_star))).sum() / n)


@dataclass(frozen=True)
class DensityBatch:
    """One training batch's density state, validated against its invariants."""

    coords: np.ndarray
    rho: np.ndarray
    rho_scaled: np.ndarray
    errors: np.ndarray
    mean_error: float
    epsilon: float = EPSILON

    def __post_init__(self):
        if (self.rho_scaled < 0).any():
            raise DensityError("rho_scaled has negative entries")
        if abs(self.rho_scaled.sum() - 1.0) > 1e-6:
            raise DensityError("rho_scaled does not sum to 1")
        if abs(float(self.errors.mean()) - self.mean_error) > 1e-9:
            raise DensityError("mean_error is not the mean of errors")

    @classmethod
    def from_model_state(cls, transforms: np.ndarray, coords: np.ndarray,
                         errors: np.ndarray, p: int) -> "DensityBatch":
        rho = feature_density(transforms, coords, p)
        return cls(
            coords=np.asarray(coords),
            rho=rho,
            rho_scaled=scale_density(rho),
            errors=np.asarray(errors, dtype=np.float64),
            mean_error=float(np.asarray(errors, dtype=np.float64).mean()),
        )
