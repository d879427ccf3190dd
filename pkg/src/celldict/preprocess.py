"""Focus selection, cropping, and normalization of raw frames.

A square window is swept over the frame on a coarse stride grid (plus
the boundary-flush final row and column, so no region is unreachable)
and scored by its mean Sobel gradient energy, evaluated in constant time
per position through a summed-area table.  The best-scoring crop is then
min-max normalized to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgops import integral_image, rect_sum, sobel_energy

__all__ = [
    "FocusResult",
    "window_size",
    "focus_select",
    "crop_focused",
    "normalize_minmax",
    "common_crop_size",
    "center_crop",
]


@dataclass(frozen=True)
class FocusResult:
    """Top-left corner, side length, and mean-energy score of the chosen crop."""

    y: int
    x: int
    window: int
    score: float


def window_size(height: int, width: int) -> int:
    """Adaptive crop side: ``max(48, min(floor(0.75 * min(H, W)), min(H, W)))``."""
    if height < 1 or width < 1:
        raise ValueError("frame dimensions must be >= 1")
    smallest = min(height, width)
    return max(48, min(int(0.75 * smallest), smallest))


def _scan_positions(extent: int, window: int, stride: int) -> list:
    last = extent - window
    positions = list(range(0, last + 1, stride))
    if positions[-1] != last:
        positions.append(last)  # keep the boundary-flush placement reachable
    return positions


def focus_select(frame, window: int | None = None) -> FocusResult:
    """Argmax of windowed mean gradient energy; ties go to the first
    position in row-major scan order.

    ``window`` overrides the adaptive side length (it must fit in the
    frame).  The stride is ``max(1, window // 8)``.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise ValueError(f"expected a 2-D frame, got shape {frame.shape}")
    h, w = frame.shape
    side = window_size(h, w) if window is None else int(window)
    if side < 1 or side > min(h, w):
        raise ValueError(
            f"window {side} does not fit in a {h}x{w} frame"
        )
    stride = max(1, side // 8)
    table = integral_image(sobel_energy(frame))
    area = float(side * side)

    best = None
    for y in _scan_positions(h, side, stride):
        for x in _scan_positions(w, side, stride):
            score = rect_sum(table, y, x, side, side) / area
            if best is None or score > best.score:
                best = FocusResult(y=y, x=x, window=side, score=score)
    return best


def crop_focused(frame, result: FocusResult) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    return frame[result.y: result.y + result.window, result.x: result.x + result.window].copy()


def normalize_minmax(img) -> np.ndarray:
    """Affine rescale to [0, 1]; a constant image maps to all zeros."""
    img = np.asarray(img, dtype=np.float64)
    lo = float(img.min())
    hi = float(img.max())
    if hi == lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def common_crop_size(shapes) -> int:
    """Smallest dimension over a corpus of crop shapes (fixed reduction order)."""
    smallest = None
    for shape in shapes:
        m = min(int(shape[0]), int(shape[1]))
        if smallest is None or m < smallest:
            smallest = m
    if smallest is None:
        raise ValueError("empty corpus")
    return smallest


def center_crop(img, size: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if size > min(h, w):
        raise ValueError(f"cannot center-crop {h}x{w} to {size}")
    top = (h - size) // 2
    left = (w - size) // 2
    return img[top: top + size, left: left + size].copy()
