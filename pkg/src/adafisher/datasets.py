"""Data ingestion: IDX (MNIST-format) files, labeled CSV tables and
deterministic synthetic generators for desk-scale runs."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, InputError
from .tensor import Rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def load_idx(path, expect: str):
    """Parse an IDX file; expect is 'images' or 'labels'.

    Images come back as (N, 1, H, W) float64 scaled to [0, 1];
    labels as (N,) int64.
    """
    if expect not in ("images", "labels"):
        raise InputError("expect must be 'images' or 'labels'")
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    wanted = IDX_IMAGES_MAGIC if expect == "images" else IDX_LABELS_MAGIC
    if magic != wanted:
        raise FormatError(f"{path}: magic 0x{magic:08x}, expected 0x{wanted:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise FormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    count = int(np.prod(dims))
    body = raw[header_len:]
    if len(body) != count:
        raise FormatError(f"{path}: expected {count} data bytes, found {len(body)}")
    data = np.frombuffer(body, dtype=np.uint8)
    if expect == "images":
        n, h, w = dims
        return data.reshape(n, 1, h, w).astype(np.float64) / 255.0
    return data.astype(np.int64)


def write_idx(path, array, kind: str) -> None:
    """Serialize images (N, H, W uint8) or labels (N,) to IDX bytes."""
    arr = np.asarray(array)
    if kind == "images":
        if arr.ndim != 3:
            raise InputError("images must be (N, H, W)")
        header = struct.pack(">IIII", IDX_IMAGES_MAGIC, *arr.shape)
    elif kind == "labels":
        if arr.ndim != 1:
            raise InputError("labels must be 1-D")
        header = struct.pack(">II", IDX_LABELS_MAGIC, arr.shape[0])
    else:
        raise InputError("kind must be 'images' or 'labels'")
    Path(path).write_bytes(header + arr.astype(np.uint8).tobytes())


def load_csv(path, schema: dict | None = None):
    """Numeric feature columns plus an integer label column.

    Schema keys: has_header (bool, default False), label_col (int, default -1).
    """
    schema = dict(schema or {})
    has_header = bool(schema.pop("has_header", False))
    label_col = int(schema.pop("label_col", -1))
    if schema:
        raise DataError(f"unknown schema keys: {sorted(schema)}")
    lines = Path(path).read_text().strip().splitlines()
    if has_header:
        lines = lines[1:]
    if not lines:
        raise DataError(f"{path}: no data rows")
    features, labels = [], []
    for r, line in enumerate(lines):
        cells = [c.strip() for c in line.split(",")]
        lc = label_col if label_col >= 0 else len(cells) + label_col
        if lc < 0 or lc >= len(cells):
            raise DataError(f"{path}: label column {label_col} out of range at row {r}")
        row = []
        label = 0
        for c, cell in enumerate(cells):
            try:
                if c == lc:
                    label = int(float(cell))
                else:
                    row.append(float(cell))
            except ValueError:
                raise DataError(f"{path}: non-numeric cell at row {r}, column {c}") from None
        features.append(row)
        labels.append(label)
    return np.asarray(features, dtype=np.float64), np.asarray(labels, dtype=np.int64)


def synth_dataset(kind: str, n: int, seed: int, **kw):
    """Deterministic synthetic datasets: blobs, moons or quadratic pairs."""
    if n <= 0:
        raise InputError("dataset size must be positive")
    rng = Rng(seed)
    if kind == "blobs":
        classes = int(kw.pop("classes", 2))
        dim = int(kw.pop("dim", 2))
        sep = float(kw.pop("sep", 6.0))
        noise = float(kw.pop("noise", 1.0))
        _reject_extras(kw)
        centers = rng.normal((classes, dim)) * sep
        labels = rng.integers(0, classes, size=n)
        x = centers[labels] + rng.normal((n, dim)) * noise
        return x, labels
    if kind == "moons":
        noise = float(kw.pop("noise", 0.1))
        _reject_extras(kw)
        half = n // 2
        t1 = rng.uniform((half,), 0, np.pi)
        t2 = rng.uniform((n - half,), 0, np.pi)
        x1 = np.stack([np.cos(t1), np.sin(t1)], axis=1)
        x2 = np.stack([1.0 - np.cos(t2), 0.5 - np.sin(t2)], axis=1)
        x = np.vstack([x1, x2]) + rng.normal((n, 2)) * noise
        y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(n - half, dtype=np.int64)])
        return x, y
    if kind == "quadratic":
        dim = int(kw.pop("dim", 20))
        out_dim = int(kw.pop("out_dim", dim))
        scale = float(kw.pop("scale", 1.0))
        _reject_extras(kw)
        a = rng.normal((out_dim, dim)) * scale
        x = rng.normal((n, dim))
        y = x @ a.T
        return x, y
    raise InputError(f"unknown synthetic dataset kind {kind!r}")


def _reject_extras(kw: dict) -> None:
    if kw:
        raise InputError(f"unknown dataset options: {sorted(kw)}")


def train_eval_split(x, y, seed: int, eval_frac: float = 0.2):
    """Deterministic 80/20 split by seeded shuffle."""
    n = x.shape[0]
    perm = Rng(seed).permutation(n)
    n_eval = max(1, int(round(n * eval_frac))) if n > 1 else 0
    eval_idx = perm[:n_eval]
    train_idx = perm[n_eval:]
    return x[train_idx], y[train_idx], x[eval_idx], y[eval_idx]
