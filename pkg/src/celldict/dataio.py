"""File formats for images, checkpoints, descriptor stores, and manifests.

Images use a neutral binary format: a 64-byte ASCII header
``CDIM <height> <width>`` padded with spaces, followed by row-major
little-endian float32 pixels.  Floats rather than PNG keep the pipeline
loss-free and bit-reproducible.

Dictionary checkpoints and descriptor stores are little-endian float64
payloads behind small ASCII headers, so every artifact can be diffed
byte-for-byte between runs.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "DataError",
    "write_image",
    "read_image",
    "config_digest",
    "save_checkpoint",
    "load_checkpoint",
    "save_descriptor_store",
    "load_descriptor_store",
    "DatasetManifest",
    "write_manifest",
    "read_manifest",
    "read_labels_csv",
    "write_labels_csv",
]

IMAGE_MAGIC = b"CDIM"
IMAGE_HEADER_LEN = 64
CHECKPOINT_MAGIC = "UDL1"
CHECKPOINT_HEADER_LEN = 256
DESCRIPTOR_MAGIC = "UDS1"


class DataError(RuntimeError):
    """Raised for unreadable, malformed, or inconsistent data files."""


def write_image(path, img) -> None:
    """Write a 2-D array as a CDIM file (float32, little-endian)."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise DataError(f"images must be 2-D, got shape {img.shape}")
    h, w = img.shape
    header = f"CDIM {h} {w}".encode("ascii")
    if len(header) > IMAGE_HEADER_LEN - 1:
        raise DataError("image dimensions too large for header")
    header = header.ljust(IMAGE_HEADER_LEN - 1) + b"\n"
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(img, dtype="<f4").tobytes())


def read_image(path) -> np.ndarray:
    """Read a CDIM file; pixels are widened to float64 (exact)."""
    try:
        with open(path, "rb") as fh:
            header = fh.read(IMAGE_HEADER_LEN)
            if len(header) != IMAGE_HEADER_LEN or not header.startswith(IMAGE_MAGIC):
                raise DataError(f"{path}: not a CDIM image")
            parts = header[len(IMAGE_MAGIC):].split()
            h, w = int(parts[0]), int(parts[1])
            payload = fh.read(4 * h * w)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    except (IndexError, ValueError) as exc:
        raise DataError(f"{path}: malformed CDIM header") from exc
    if len(payload) != 4 * h * w:
        raise DataError(f"{path}: truncated pixel payload")
    img = np.frombuffer(payload, dtype="<f4").reshape(h, w)
    return img.astype(np.float64)


def config_digest(obj) -> str:
    """Stable short hash of a JSON-serializable configuration object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _header_line(fields: dict, length: int) -> bytes:
    parts = " ".join(f"{k}={v}" for k, v in fields.items())
    line = f"{parts}".encode("ascii")
    if len(line) > length - 1:
        raise DataError("checkpoint header too long")
    return line.ljust(length - 1) + b"\n"


def _parse_header(raw: bytes, magic: str) -> dict:
    text = raw.decode("ascii").strip()
    fields = {}
    for token in text.split():
        if "=" not in token:
            raise DataError(f"malformed header token: {token!r}")
        key, value = token.split("=", 1)
        fields[key] = value
    if fields.get("magic") != magic:
        raise DataError(f"bad header magic: {fields.get('magic')!r}")
    return fields


def save_checkpoint(
    path,
    dictionary: np.ndarray,
    codes: np.ndarray,
    iteration: int,
    seed: int,
    config_hash: str,
    fbar: Optional[float] = None,
    streak: int = 0,
    tag: str = "",
) -> None:
    """Serialize a dictionary plus per-sample codes with resume metadata.

    ``fbar`` (mean fidelity of the saved iteration) and ``streak`` (count
    of consecutive satisfied stopping checks) make an interrupted outer
    loop resumable with bit-identical continuation.  ``tag`` names the
    channel the dictionary belongs to; code coordinates are only
    meaningful relative to it.
    """
    dictionary = np.asarray(dictionary, dtype=np.float64)
    codes = np.asarray(codes, dtype=np.float64)
    n, k = dictionary.shape
    samples = codes.shape[0]
    if codes.ndim != 2 or codes.shape[1] != k:
        raise DataError(f"codes shape {codes.shape} inconsistent with dictionary {dictionary.shape}")
    if tag and (" " in tag or "=" in tag):
        raise DataError(f"checkpoint tag {tag!r} may not contain spaces or '='")
    header = _header_line(
        {
            "magic": CHECKPOINT_MAGIC,
            "n": n,
            "k": k,
            "samples": samples,
            "iteration": iteration,
            "seed": seed,
            "config": config_hash,
            "fbar": "none" if fbar is None else float(fbar).hex(),
            "streak": streak,
            "tag": tag if tag else "none",
        },
        CHECKPOINT_HEADER_LEN,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(dictionary, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(codes, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[np.ndarray, np.ndarray, dict]:
    """Inverse of :func:`save_checkpoint`; returns (dictionary, codes, meta)."""
    try:
        with open(path, "rb") as fh:
            header = fh.read(CHECKPOINT_HEADER_LEN)
            fields = _parse_header(header, CHECKPOINT_MAGIC)
            n = int(fields["n"])
            k = int(fields["k"])
            samples = int(fields["samples"])
            payload = fh.read(8 * (n * k + samples * k))
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if len(payload) != 8 * (n * k + samples * k):
        raise DataError(f"{path}: truncated checkpoint payload")
    flat = np.frombuffer(payload, dtype="<f8")
    dictionary = flat[: n * k].reshape(n, k).copy()
    codes = flat[n * k:].reshape(samples, k).copy()
    meta = {
        "iteration": int(fields["iteration"]),
        "seed": int(fields["seed"]),
        "config": fields["config"],
        "fbar": None if fields["fbar"] == "none" else float.fromhex(fields["fbar"]),
        "streak": int(fields["streak"]),
        "tag": "" if fields.get("tag", "none") == "none" else fields["tag"],
    }
    return dictionary, codes, meta


def save_descriptor_store(directory, descriptors, channel_names, config_hash: str) -> None:
    """Write one binary record per cell plus a JSON manifest.

    Record layout (little-endian): cell_id int64, C int64, K int64,
    phi (C*K float64), psi (K float64), residuals (C float64),
    weights (C float64).
    """
    os.makedirs(directory, exist_ok=True)
    records_path = os.path.join(directory, "descriptors.bin")
    manifest_path = os.path.join(directory, "descriptors.json")
    count = 0
    with open(records_path, "wb") as fh:
        for d in descriptors:
            c = len(d.weights)
            k = len(d.psi)
            head = np.array([int(d.cell_id), c, k], dtype="<i8")
            fh.write(head.tobytes())
            fh.write(np.ascontiguousarray(d.phi, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(d.psi, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(d.residuals, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(d.weights, dtype="<f8").tobytes())
            count += 1
    manifest = {
        "magic": DESCRIPTOR_MAGIC,
        "channels": list(channel_names),
        "config": config_hash,
        "cells": count,
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_descriptor_store(directory):
    """Read a descriptor store; returns (records, manifest).

    Each record is a dict with keys cell_id, phi, psi, residuals, weights.
    """
    from .multichannel import UnifiedDescriptor  # local import to avoid a cycle

    records_path = os.path.join(directory, "descriptors.bin")
    manifest_path = os.path.join(directory, "descriptors.json")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError(f"{manifest_path}: {exc}") from exc
    if manifest.get("magic") != DESCRIPTOR_MAGIC:
        raise DataError(f"{manifest_path}: not a descriptor store manifest")
    out = []
    try:
        with open(records_path, "rb") as fh:
            while True:
                head = fh.read(24)
                if not head:
                    break
                cell_id, c, k = np.frombuffer(head, dtype="<i8")
                c, k = int(c), int(k)
                body = fh.read(8 * (c * k + k + c + c))
                if len(body) != 8 * (c * k + k + c + c):
                    raise DataError(f"{records_path}: truncated record")
                flat = np.frombuffer(body, dtype="<f8")
                phi = flat[: c * k].copy()
                psi = flat[c * k: c * k + k].copy()
                residuals = flat[c * k + k: c * k + k + c].copy()
                weights = flat[c * k + k + c:].copy()
                out.append(
                    UnifiedDescriptor(
                        cell_id=int(cell_id),
                        phi=phi,
                        psi=psi,
                        residuals=residuals,
                        weights=weights,
                        unified=None,
                    )
                )
    except OSError as exc:
        raise DataError(f"{records_path}: {exc}") from exc
    if len(out) != manifest.get("cells"):
        raise DataError(f"{records_path}: record count disagrees with manifest")
    return out, manifest


@dataclass
class DatasetManifest:
    """Index of a dataset directory: cells, channels, shape, and audit info."""

    channels: list
    shape: tuple
    cells: list = field(default_factory=list)  # [{"id": int, "files": {channel: relpath}, ...}]
    labels: Optional[str] = None
    provenance: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def n_cells(self) -> int:
        return len(self.cells)


def write_manifest(path, manifest: DatasetManifest) -> None:
    payload = {
        "channels": list(manifest.channels),
        "shape": list(manifest.shape),
        "cells": manifest.cells,
        "labels": manifest.labels,
        "provenance": manifest.provenance,
        "extra": manifest.extra,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_manifest(path) -> DatasetManifest:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    try:
        return DatasetManifest(
            channels=list(payload["channels"]),
            shape=tuple(payload["shape"]),
            cells=payload["cells"],
            labels=payload.get("labels"),
            provenance=payload.get("provenance", ""),
            extra=payload.get("extra", {}),
        )
    except KeyError as exc:
        raise DataError(f"{path}: missing manifest key {exc}") from exc


def write_labels_csv(path, labels: dict) -> None:
    """Write cell_id -> integer class as a two-column CSV."""
    with open(path, "w") as fh:
        fh.write("cell_id,class\n")
        for cell_id in sorted(labels):
            fh.write(f"{cell_id},{labels[cell_id]}\n")


def read_labels_csv(path) -> dict:
    labels = {}
    try:
        with open(path) as fh:
            header = fh.readline()
            if not header.strip().startswith("cell_id"):
                raise DataError(f"{path}: expected 'cell_id,class' header")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                cid, cls = line.split(",")
                labels[int(cid)] = int(cls)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path}: malformed label row") from exc
    return labels
