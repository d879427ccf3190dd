"""Per-channel training orchestration and unified cell descriptors.

Channels are trained independently (same configuration and seed, no
cross-channel coupling), so the dictionary learned for a channel is
identical whether or not other channels are present.  The per-cell
descriptor concatenates the per-channel codes in a fixed channel
ordering; no cross-channel atom correspondence is implied.  The unified
image is an inverse-residual-weighted average of the per-channel
reconstructions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dictlearn import LearnConfig, train_channel
from .pdhg import DivergenceError

__all__ = [
    "BSCCM_CHANNELS",
    "ChannelId",
    "CellRecord",
    "UnifiedDescriptor",
    "build_descriptor",
    "rank_atoms",
    "train_multichannel",
]

BSCCM_CHANNELS = ("DPC_Left", "DPC_Right", "DPC_Top", "DPC_Bottom", "Brightfield")

DEFAULT_WEIGHT_EPSILON = 1e-8


@dataclass(frozen=True)
class ChannelId:
    index: int
    name: str


@dataclass
class CellRecord:
    """One cell: an id plus C same-shaped images in channel order."""

    cell_id: int
    images: list

    def validate(self, n_channels: int, shape) -> None:
        if len(self.images) != n_channels:
            raise ValueError(
                f"cell {self.cell_id}: expected {n_channels} channels, got {len(self.images)}"
            )
        for img in self.images:
            if np.asarray(img).shape != tuple(shape):
                raise ValueError(f"cell {self.cell_id}: inconsistent image shape")


@dataclass
class UnifiedDescriptor:
    """Concatenated per-channel codes and derived summaries for one cell.

    ``phi`` is the channel-major concatenation (length C*K); ``Phi`` is
    its (K, C) matrix form whose column-major vectorization recovers
    ``phi`` exactly.  ``psi[k]`` is the Euclidean norm of row k of
    ``Phi`` (index-wise cross-channel activation strength).  ``unified``
    is the weighted-average reconstruction image (None when a store was
    loaded without images).
    """

    cell_id: int
    phi: np.ndarray
    psi: np.ndarray
    residuals: np.ndarray
    weights: np.ndarray
    unified: Optional[np.ndarray] = None

    @property
    def n_channels(self) -> int:
        return len(self.weights)

    @property
    def n_atoms(self) -> int:
        return len(self.psi)

    @property
    def Phi(self) -> np.ndarray:
        return self.phi.reshape(self.n_channels, self.n_atoms).T


def build_descriptor(
    codes: Sequence[np.ndarray],
    dicts: Sequence[np.ndarray],
    images: Sequence[np.ndarray],
    cell_id: int = 0,
    epsilon: float = DEFAULT_WEIGHT_EPSILON,
) -> UnifiedDescriptor:
    """Assemble the descriptor for one cell from per-channel codes.

    ``codes[c]``, ``dicts[c]`` and ``images[c]`` belong to channel c in
    the fixed ordering.  Weights are ``1 / (residual + epsilon)``
    normalized to sum to one.  Per-channel reconstructions are
    orthogonal projections of non-negative denoised images and need not
    be non-negative pixelwise, so negativity of the unified image is
    only warned about, never raised.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    n_channels = len(codes)
    if not (len(dicts) == len(images) == n_channels):
        raise ValueError("codes, dicts, and images must have one entry per channel")
    code_mat = np.stack([np.asarray(a, dtype=np.float64) for a in codes])  # (C, K)
    phi = code_mat.reshape(-1)
    psi = np.linalg.norm(code_mat, axis=0)

    shape = np.asarray(images[0]).shape
    recons = np.stack(
        [(dicts[c] @ code_mat[c]).reshape(shape) for c in range(n_channels)]
    )
    residuals = np.array(
        [
            float(np.linalg.norm(np.asarray(images[c], dtype=np.float64) - recons[c]))
            for c in range(n_channels)
        ]
    )
    raw = 1.0 / (residuals + epsilon)
    weights = raw / raw.sum()
    unified = np.einsum("c,chw->hw", weights, recons)
    if unified.min() < -1e-12:
        warnings.warn(
            f"cell {cell_id}: unified image has negative pixels down to {unified.min():.3e}",
            stacklevel=2,
        )
    return UnifiedDescriptor(
        cell_id=cell_id,
        phi=phi,
        psi=psi,
        residuals=residuals,
        weights=weights,
        unified=unified,
    )


def rank_atoms(descriptor: UnifiedDescriptor, top_m: int) -> np.ndarray:
    """Atom indices sorted by descending psi; ties break toward lower index."""
    if not 1 <= top_m <= descriptor.n_atoms:
        raise ValueError(f"top_m must lie in [1, {descriptor.n_atoms}]")
    order = np.argsort(-descriptor.psi, kind="stable")
    return order[:top_m]


def train_multichannel(
    cells: Sequence[CellRecord],
    cfg: LearnConfig,
    *,
    channel_names: Optional[Sequence[str]] = None,
    threads: int = 1,
    checkpoint_dir=None,
    trace_dir=None,
    epsilon: float = DEFAULT_WEIGHT_EPSILON,
):
    """Train one dictionary per channel and emit descriptors for every cell.

    Returns ``(dicts, descriptors, reports)`` with one entry per channel
    in ``dicts``/``reports`` and one descriptor per cell.  Failures are
    re-raised with the offending channel named.
    """
    if not cells:
        raise ValueError("at least one cell is required")
    n_channels = len(cells[0].images)
    shape = np.asarray(cells[0].images[0]).shape
    for cell in cells:
        cell.validate(n_channels, shape)
    if channel_names is None:
        channel_names = [f"channel_{c}" for c in range(n_channels)]
    if len(channel_names) != n_channels:
        raise ValueError("channel_names length does not match the cells")

    dicts, all_codes, reports = [], [], []
    for c, name in enumerate(channel_names):
        data = [cell.images[c] for cell in cells]
        try:
            dictionary, codes, report = train_channel(
                data,
                cfg,
                threads=threads,
                checkpoint_dir=checkpoint_dir,
                checkpoint_tag=name,
                trace_dir=trace_dir,
            )
        except DivergenceError as exc:
            raise DivergenceError(f"channel {name!r}: {exc}") from exc
        except Exception as exc:
            raise RuntimeError(f"training failed on channel {name!r}: {exc}") from exc
        dicts.append(dictionary)
        all_codes.append(codes)
        reports.append(report)

    descriptors = [
        build_descriptor(
            [all_codes[c][j] for c in range(n_channels)],
            dicts,
            cells[j].images,
            cell_id=cells[j].cell_id,
            epsilon=epsilon,
        )
        for j in range(len(cells))
    ]
    return dicts, descriptors, reports
