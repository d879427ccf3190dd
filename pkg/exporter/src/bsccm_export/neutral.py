"""Writer for the pipeline's neutral dataset format.

Images: a 64-byte ASCII header ``CDIM <height> <width>`` padded with
spaces, then row-major little-endian float32 pixels.  12-bit camera
intensities fit in float32 exactly, so the export is lossless.

A dataset directory additionally carries ``manifest.json`` (channels in
fixed order, image shape, per-cell file references) and ``labels.csv``
(``cell_id,class`` rows) for the labeled subset.
"""

from __future__ import annotations

import json
import os

import numpy as np

IMAGE_MAGIC = b"CDIM"
IMAGE_HEADER_LEN = 64


def write_image(path, img) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"images must be 2-D, got shape {img.shape}")
    h, w = img.shape
    header = f"CDIM {h} {w}".encode("ascii").ljust(IMAGE_HEADER_LEN - 1) + b"\n"
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(img, dtype="<f4").tobytes())


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(IMAGE_HEADER_LEN)
        if not header.startswith(IMAGE_MAGIC):
            raise ValueError(f"{path}: not a CDIM image")
        parts = header[len(IMAGE_MAGIC):].split()
        h, w = int(parts[0]), int(parts[1])
        payload = fh.read(4 * h * w)
    if len(payload) != 4 * h * w:
        raise ValueError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w)


def write_labels_csv(path, labels: dict) -> None:
    with open(path, "w") as fh:
        fh.write("cell_id,class\n")
        for cell_id in sorted(labels):
            fh.write(f"{cell_id},{labels[cell_id]}\n")


def write_manifest(path, channels, shape, cells, labels_rel, provenance, extra=None) -> None:
    payload = {
        "channels": list(channels),
        "shape": list(shape),
        "cells": cells,
        "labels": labels_rel,
        "provenance": provenance,
        "extra": extra or {},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def frame_filename(cell_id: int, channel: str) -> str:
    return os.path.join("frames", f"cell{cell_id:05d}_{channel}.cdim")
