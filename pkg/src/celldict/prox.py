"""Closed-form projections and proximal maps used by the primal-dual solver.

All maps are pure, pixelwise, and deterministic.
"""

from __future__ import annotations

import numpy as np

__all__ = ["project_nonneg", "project_ball", "prox_quadratic_nonneg"]


def project_nonneg(img) -> np.ndarray:
    """Componentwise projection onto the non-negative orthant."""
    return np.maximum(np.asarray(img, dtype=np.float64), 0.0)


def project_ball(field, radius: float) -> np.ndarray:
    """Pixelwise projection of a (2, h, w) vector field onto Euclidean balls.

    Each per-pixel 2-vector is rescaled to norm at most ``radius`` with
    its direction preserved: ``w / max(1, |w| / radius)``.  Zero vectors
    are left unchanged.  ``radius == 0`` collapses the field to zero.
    """
    field = np.asarray(field, dtype=np.float64)
    if radius < 0:
        raise ValueError("ball radius must be non-negative")
    if radius == 0.0:
        return np.zeros_like(field)
    norms = np.sqrt(field[0] * field[0] + field[1] * field[1])
    return field / np.maximum(1.0, norms / radius)


def prox_quadratic_nonneg(w, datum, tau: float) -> np.ndarray:
    """Proximal map of ``0.5 * |y - datum|^2`` plus non-negativity, step ``tau``.

    Componentwise ``max((w + tau * datum) / (1 + tau), 0)``.  This is the
    minimizer over ``y >= 0`` of
    ``0.5 * |y - datum|^2 + (1 / (2 * tau)) * |y - w|^2``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    w = np.asarray(w, dtype=np.float64)
    datum = np.asarray(datum, dtype=np.float64)
    if w.shape != datum.shape:
        raise ValueError(f"shape mismatch: {w.shape} vs {datum.shape}")
    return np.maximum((w + tau * datum) / (1.0 + tau), 0.0)
