"""Dataset ingestion and serialization: IDX binary and CSV.

IDX layout (big-endian): images carry magic 2051 then [n, rows, cols] and
n*rows*cols pixel bytes; labels carry magic 2049 then [n] and n label bytes.
Pixels are scaled to [0,1] by /255. Parse failures report the byte offset.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .models import Dataset

IDX_IMAGES_MAGIC = 2051  # 0x00000803
IDX_LABELS_MAGIC = 2049  # 0x00000801


def _read_u32s(buf: bytes, count: int, offset: int, path) -> tuple:
    end = offset + 4 * count
    if len(buf) < end:
        raise DataError(f"{path}: truncated header at byte {len(buf)} (need {end})")
    return struct.unpack(f">{count}I", buf[offset:end])


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label file pair into a Dataset (features in [0,1])."""
    img_buf = Path(images_path).read_bytes()
    lab_buf = Path(labels_path).read_bytes()

    (img_magic,) = _read_u32s(img_buf, 1, 0, images_path)
    if img_magic != IDX_IMAGES_MAGIC:
        raise DataError(
            f"{images_path}: bad image magic {img_magic} at byte 0 (want {IDX_IMAGES_MAGIC})"
        )
    n, rows, cols = _read_u32s(img_buf, 3, 4, images_path)
    pixel_count = n * rows * cols
    if len(img_buf) != 16 + pixel_count:
        raise DataError(
            f"{images_path}: expected {16 + pixel_count} bytes, got {len(img_buf)} "
            f"(mismatch from byte {min(len(img_buf), 16 + pixel_count)})"
        )

    (lab_magic,) = _read_u32s(lab_buf, 1, 0, labels_path)
    if lab_magic != IDX_LABELS_MAGIC:
        raise DataError(
            f"{labels_path}: bad label magic {lab_magic} at byte 0 (want {IDX_LABELS_MAGIC})"
        )
    (n_lab,) = _read_u32s(lab_buf, 1, 4, labels_path)
    if len(lab_buf) != 8 + n_lab:
        raise DataError(
            f"{labels_path}: expected {8 + n_lab} bytes, got {len(lab_buf)} "
            f"(mismatch from byte {min(len(lab_buf), 8 + n_lab)})"
        )
    if n_lab != n:
        raise DataError(
            f"image count {n} != label count {n_lab} ({images_path} vs {labels_path})"
        )

    X = np.frombuffer(img_buf, dtype=np.uint8, offset=16).astype(np.float64) / 255.0
    y = np.frombuffer(lab_buf, dtype=np.uint8, offset=8).astype(np.int64)
    num_classes = int(y.max()) + 1 if n else 0
    return Dataset(X.reshape(n, rows * cols), y, num_classes)


def write_idx(data: Dataset, images_path, labels_path, rows: int, cols: int) -> None:
    """Write a dataset as an IDX pair (features quantized back to bytes)."""
    n, d = data.X.shape
    if rows * cols != d:
        raise DataError(f"rows*cols = {rows * cols} != feature dim {d}")
    pixels = np.clip(np.rint(data.X * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(data.y.astype(np.uint8).tobytes())


def load_csv(path, num_classes: int, header: bool = False) -> Dataset:
    """Rows of d features in [0,1] plus an integer label, comma-separated."""
    rows = []
    labels = []
    width = None
    with open(path, "r", encoding="utf-8") as f:
        lines = f.readlines()
    start = 0
    if header:
        if not lines:
            raise DataError(f"{path}: empty file")
        start = 1
    body = [(i + 1, ln) for i, ln in enumerate(lines)][start:]
    body = [(no, ln.strip()) for no, ln in body if ln.strip()]
    if not body:
        raise DataError(f"{path}: empty file")
    for no, ln in body:
        parts = ln.split(",")
        if width is None:
            width = len(parts)
            if width < 2:
                raise DataError(f"{path}:{no}: need at least one feature and a label")
        elif len(parts) != width:
            raise DataError(f"{path}:{no}: expected {width} fields, got {len(parts)}")
        try:
            feats = [float(p) for p in parts[:-1]]
            lab = int(parts[-1])
        except ValueError as exc:
            raise DataError(f"{path}:{no}: {exc}") from exc
        for j, v in enumerate(feats):
            if not (0.0 <= v <= 1.0):
                raise DataError(f"{path}:{no}: feature {j} = {v} outside [0,1]")
        if not (0 <= lab < num_classes):
            raise DataError(f"{path}:{no}: label {lab} outside [0,{num_classes})")
        rows.append(feats)
        labels.append(lab)
    return Dataset(np.array(rows), np.array(labels), num_classes)


def save_csv(data: Dataset, path, header: bool = False) -> None:
    """Write a dataset as CSV; float repr round-trips exactly."""
    with open(path, "w", encoding="utf-8") as f:
        if header:
            cols = [f"x{j}" for j in range(data.feature_dim)] + ["y"]
            f.write(",".join(cols) + "\n")
        for i in range(len(data)):
            feats = ",".join(repr(float(v)) for v in data.X[i])
            f.write(f"{feats},{int(data.y[i])}\n")
