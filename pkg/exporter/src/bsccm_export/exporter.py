"""Convert the BSCCM-tiny distribution into the neutral dataset format.

The converter is a pure format shim: 12-bit source intensities are
written as float32 without rescaling (normalization happens downstream),
cell ids and the fixed channel ordering are preserved, and the labeled
subset goes to a two-column CSV with the class encoding
Lymphocyte=0, Granulocyte=1, Monocyte=2.

The dataset ships as a Python package with accessor methods; anything
exposing the same small surface (``cell_ids``, ``read_image``,
``classification_labels``) can be exported, which is how the test suite
drives the converter without the 0.6 GB download.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .neutral import frame_filename, write_image, write_labels_csv, write_manifest

CHANNELS = ("DPC_Left", "DPC_Right", "DPC_Top", "DPC_Bottom", "Brightfield")
CLASS_CODES = {"lymphocyte": 0, "granulocyte": 1, "monocyte": 2}

EXPECTED_CELLS = 1000
EXPECTED_LABELED = 28
FRAME_SHAPE = (128, 128)

DATASET_DOI = "10.5061/dryad.sxksn038s"
DATASET_URL = "https://waller-lab.github.io/BSCCM/"


class ExportError(RuntimeError):
    """Raised when the source dataset is missing or inconsistent."""


@dataclass
class ExportManifest:
    """What was written: ids, channel order, and the labeled subset."""

    cell_ids: list
    channels: list
    labels: dict
    histogram: dict = field(default_factory=dict)

    @property
    def n_cells(self) -> int:
        return len(self.cell_ids)


class BsccmTinySource:
    """Adapter over the ``bsccm`` package's accessor object."""

    def __init__(self, dataset):
        self._dataset = dataset

    @classmethod
    def open(cls, data_dir):
        try:
            from bsccm import BSCCM
        except ImportError as exc:
            raise ExportError(
                "the 'bsccm' package is not installed; install it and download "
                f"the BSCCM-tiny dataset (DOI {DATASET_DOI}, {DATASET_URL})"
            ) from exc
        if not os.path.isdir(data_dir):
            raise ExportError(
                f"dataset directory {data_dir!r} does not exist; download "
                f"BSCCM-tiny from DOI {DATASET_DOI} ({DATASET_URL})"
            )
        return cls(BSCCM(data_dir))

    def cell_ids(self):
        indices = self._dataset.get_indices()
        return [int(i) for i in np.asarray(indices).ravel()]

    def read_image(self, cell_id: int, channel: str) -> np.ndarray:
        return np.asarray(self._dataset.read_image(cell_id, channel=channel))

    def classification_labels(self) -> dict:
        """cell id -> class name, for the labeled subset."""
        indices, names = self._dataset.get_cell_type_classification_data()
        return {int(i): str(n) for i, n in zip(np.asarray(indices).ravel(), names)}


def _encode_labels(raw: dict) -> dict:
    encoded = {}
    for cell_id, name in raw.items():
        key = str(name).strip().lower()
        if key not in CLASS_CODES:
            raise ExportError(f"unknown cell class {name!r} for cell {cell_id}")
        encoded[int(cell_id)] = CLASS_CODES[key]
    return encoded


def export(source, out_dir, expected_cells: int = EXPECTED_CELLS) -> ExportManifest:
    """Write every (cell, channel) frame plus labels and a manifest.

    Rerunning into the same directory overwrites byte-identically.
    """
    cell_ids = list(source.cell_ids())
    if len(cell_ids) != expected_cells:
        raise ExportError(
            f"expected {expected_cells} cells in the tiny subset, found {len(cell_ids)}"
        )
    labels = _encode_labels(source.classification_labels())
    unknown = set(labels) - set(cell_ids)
    if unknown:
        raise ExportError(f"labels reference unknown cells: {sorted(unknown)[:5]}")
    if len(labels) != EXPECTED_LABELED:
        raise ExportError(
            f"expected {EXPECTED_LABELED} labeled cells, found {len(labels)}"
        )

    frames_dir = os.path.join(out_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    cells = []
    shape = None
    for cell_id in cell_ids:
        files = {}
        for channel in CHANNELS:
            frame = np.asarray(source.read_image(cell_id, channel), dtype=np.float64)
            if frame.ndim != 2:
                raise ExportError(f"cell {cell_id} channel {channel}: not a 2-D frame")
            if shape is None:
                shape = frame.shape
            elif frame.shape != shape:
                raise ExportError(
                    f"cell {cell_id} channel {channel}: shape {frame.shape} != {shape}"
                )
            rel = frame_filename(cell_id, channel)
            write_image(os.path.join(out_dir, rel), frame)
            files[channel] = rel
        cells.append({"id": int(cell_id), "files": files})

    write_labels_csv(os.path.join(out_dir, "labels.csv"), labels)
    histogram = {name: 0 for name in CLASS_CODES}
    for code in labels.values():
        for name, value in CLASS_CODES.items():
            if value == code:
                histogram[name] += 1
    write_manifest(
        os.path.join(out_dir, "manifest.json"),
        channels=CHANNELS,
        shape=shape,
        cells=cells,
        labels_rel="labels.csv",
        provenance=f"BSCCM-tiny export (DOI {DATASET_DOI})",
        extra={"label_histogram": histogram},
    )
    return ExportManifest(
        cell_ids=cell_ids,
        channels=list(CHANNELS),
        labels=labels,
        histogram=histogram,
    )
