"""Per-patch albedo from intensities under known first-order spherical-harmonic lighting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import MAX_REFLECTANCE

MAX_COND = 1e8


class AlbedoError(ValueError):
    pass


@dataclass(frozen=True)
class AlbedoEstimate:
    rho: float  # clamped to [0, 1)
    residual: float
    raw: float  # least-squares scale before clamping


def sh_basis(normal):
    """First-order SH basis [1, nx, ny, nz] at a unit normal."""
    n = np.asarray(normal, dtype=float)
    return np.array([1.0, n[0], n[1], n[2]])


def shading(lighting_coeffs, normal):
    """Predicted irradiance per observation: L @ [1, n]."""
    return np.asarray(lighting_coeffs, dtype=float) @ sh_basis(normal)


def estimate_albedo(observations, lighting_coeffs, normal):
    """Least-squares albedo relating observed intensity to SH-predicted irradiance.

    ``observations`` holds one intensity per lighting condition and
    ``lighting_coeffs`` the matching (k, 4) first-order SH coefficients.
    The lighting design must span all four SH directions.
    """
    I = np.asarray(observations, dtype=float).ravel()
    L = np.asarray(lighting_coeffs, dtype=float)
    if L.ndim != 2 or L.shape[1] != 4 or L.shape[0] != I.size:
        raise ValueError("lighting_coeffs must be (k, 4) with one row per observation")
    if I.size < 4 or np.linalg.cond(L) >= MAX_COND:
        raise AlbedoError("insufficient illumination diversity")
    s = shading(L, normal)
    ss = float(s @ s)
    if ss == 0.0:
        raise AlbedoError("insufficient illumination diversity")
    raw = float(I @ s) / ss
    res = float(np.linalg.norm(I - raw * s))
    return AlbedoEstimate(min(max(raw, 0.0), MAX_REFLECTANCE), res, raw)
