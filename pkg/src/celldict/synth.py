"""Synthetic multi-channel cell datasets for desk-scale verification.

Cells are non-negative combinations of a small bank of smooth
orthonormal patterns (a strictly positive blob plus rings, gradients,
and low-frequency waves).  Channels apply sign/contrast transforms to
the detail coefficients, so directional channel pairs are approximately
antisymmetric up to the positive base component, mimicking
opposite-tilt phase-gradient imaging.  Additive noise has exact l2
magnitude ``noise`` per frame and the noiseless images are retained,
which makes the generator usable for noise-stability studies.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .dataio import DatasetManifest, write_image, write_labels_csv, write_manifest
from .multichannel import BSCCM_CHANNELS, CellRecord

__all__ = ["SyntheticDataset", "generate_synthetic", "write_dataset"]

# (detail sign, contrast) per canonical channel name
_CHANNEL_TRANSFORMS = {
    "DPC_Left": (1.0, 1.0),
    "DPC_Right": (-1.0, 1.0),
    "DPC_Top": (1.0, 0.85),
    "DPC_Bottom": (-1.0, 0.85),
    "Brightfield": (1.0, 0.6),
}


@dataclass
class SyntheticDataset:
    cells: list  # CellRecord with noisy frames
    clean: list  # CellRecord with noiseless frames
    channel_names: list
    patterns: np.ndarray  # (n, k_true), orthonormal columns, column 0 positive
    labels: dict
    coefficients: np.ndarray  # (n_cells, C, k_true) ground-truth weights
    noise: float
    seed: int
    shape: tuple = field(default=(16, 16))


def _pattern_bank(shape, k_true: int) -> np.ndarray:
    """k_true smooth templates, orthonormalized; first column stays positive."""
    h, w = shape
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    rr = np.sqrt(yy * yy + xx * xx)
    templates = [
        np.exp(-(rr ** 2) / 0.9) + 0.35,          # wide positive blob
        np.exp(-((rr - 0.55) ** 2) / 0.02),       # membrane-like ring
        xx * np.exp(-(rr ** 2) / 0.5),            # horizontal gradient
        yy * np.exp(-(rr ** 2) / 0.5),            # vertical gradient
    ]
    freq = 1
    while len(templates) < k_true:
        templates.append(np.cos(np.pi * freq * xx) * np.cos(np.pi * (freq + 1) * yy))
        freq += 1
    stack = np.stack([t.ravel() for t in templates[:k_true]], axis=1)
    q, r = np.linalg.qr(stack)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    if q[:, 0].min() <= 0:
        raise RuntimeError("base pattern lost positivity during orthonormalization")
    return q


def generate_synthetic(
    n_cells: int,
    channels: int,
    shape,
    k_true: int,
    noise: float,
    seed: int,
) -> SyntheticDataset:
    """Build ``n_cells`` cells with ``channels`` frames of size ``shape``.

    With ``noise == 0`` every frame lies exactly in the non-negative
    cone of the ``k_true`` patterns.  Cell ``j`` carries class label
    ``j % 2``; the two classes emphasize different detail patterns.
    """
    h, w = int(shape[0]), int(shape[1])
    if k_true < 1 or k_true > h * w:
        raise ValueError(f"k_true must lie in [1, {h * w}]")
    if not 1 <= channels <= len(BSCCM_CHANNELS):
        raise ValueError(f"channels must lie in [1, {len(BSCCM_CHANNELS)}]")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    channel_names = list(BSCCM_CHANNELS[:channels])
    patterns = _pattern_bank((h, w), k_true)
    base = patterns[:, 0].reshape(h, w)
    base_min = float(base.min())

    rng = np.random.default_rng(seed)
    cells, clean, labels = [], [], {}
    coefficients = np.zeros((n_cells, channels, k_true))
    for j in range(n_cells):
        cls = j % 2
        labels[j] = cls
        detail_w = rng.uniform(0.2, 1.0, size=max(0, k_true - 1))
        for i in range(len(detail_w)):
            if i % 2 == cls:
                detail_w[i] *= 2.0
        noisy_imgs, clean_imgs = [], []
        for c, name in enumerate(channel_names):
            sign, contrast = _CHANNEL_TRANSFORMS[name]
            coeff = np.zeros(k_true)
            coeff[1:] = sign * contrast * detail_w
            detail = (patterns[:, 1:] @ coeff[1:]).reshape(h, w) if k_true > 1 else np.zeros((h, w))
            needed = max(0.0, float((-detail / base).max())) if k_true > 1 else 0.0
            coeff[0] = 1.25 * needed + 0.5 * contrast
            img = (patterns @ coeff).reshape(h, w)
            coefficients[j, c] = coeff
            clean_imgs.append(img)
            if noise > 0:
                g = np.random.default_rng([seed, j, c]).standard_normal((h, w))
                g *= noise / np.linalg.norm(g)
                noisy_imgs.append(img + g)
            else:
                noisy_imgs.append(img.copy())
        cells.append(CellRecord(cell_id=j, images=noisy_imgs))
        clean.append(CellRecord(cell_id=j, images=clean_imgs))
    return SyntheticDataset(
        cells=cells,
        clean=clean,
        channel_names=channel_names,
        patterns=patterns,
        labels=labels,
        coefficients=coefficients,
        noise=noise,
        seed=seed,
        shape=(h, w),
    )


def write_dataset(dataset: SyntheticDataset, out_dir) -> str:
    """Write frames, labels, and a manifest; returns the manifest path."""
    frames_dir = os.path.join(out_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    cell_entries = []
    for cell in dataset.cells:
        files = {}
        for name, img in zip(dataset.channel_names, cell.images):
            rel = os.path.join("frames", f"cell{cell.cell_id:05d}_{name}.cdim")
            write_image(os.path.join(out_dir, rel), img)
            files[name] = rel
        cell_entries.append({"id": cell.cell_id, "files": files})
    write_labels_csv(os.path.join(out_dir, "labels.csv"), dataset.labels)
    manifest = DatasetManifest(
        channels=dataset.channel_names,
        shape=dataset.shape,
        cells=cell_entries,
        labels="labels.csv",
        provenance=(
            f"synthetic: cells={len(dataset.cells)} k_true={dataset.patterns.shape[1]} "
            f"noise={dataset.noise!r} seed={dataset.seed}"
        ),
    )
    path = os.path.join(out_dir, "manifest.json")
    write_manifest(path, manifest)
    return path
