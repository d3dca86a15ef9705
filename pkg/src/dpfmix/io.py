"""Matrix and dataset files.

Binary matrices use a small fixed header::

    b"DPFM" | version: u16 | rows: u32 | cols: u32 | rows*cols float64, row-major

all little-endian. A binary dataset file is a feature matrix immediately
followed by a label matrix. CSV datasets carry a header ``f0..f{p-1},y0..y{k-1}``
with an optional leading ``id`` column.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dpfmix.errors import IngestionError

MAGIC = b"DPFM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHII")


@dataclass(frozen=True, eq=False)
class FeatureDataset:
    """Features (n x p) with labels (n x k), optionally with row identifiers."""

    features: np.ndarray
    labels: np.ndarray
    ids: tuple | None = None

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64, ndmin=2)
        y = np.array(self.labels, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or y.ndim != 2:
            raise IngestionError("features and labels must be 2-d")
        if x.shape[0] != y.shape[0]:
            raise IngestionError(
                f"features have {x.shape[0]} rows but labels have {y.shape[0]}")
        for name, arr in (("features", x), ("labels", y)):
            bad = np.flatnonzero(~np.isfinite(arr).all(axis=1))
            if bad.size:
                raise IngestionError(f"non-finite {name} value in row {int(bad[0])}")
        if self.ids is not None and len(self.ids) != x.shape[0]:
            raise IngestionError("ids length does not match the number of rows")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        if self.ids is not None:
            object.__setattr__(self, "ids", tuple(self.ids))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def hard_labels(self) -> np.ndarray:
        return np.argmax(self.labels, axis=1)


def write_matrix(fh, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    if matrix.ndim != 2:
        raise ValueError("only 2-d matrices can be written")
    fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, *matrix.shape))
    fh.write(matrix.tobytes())


def read_matrix(fh, name: str = "<stream>") -> np.ndarray:
    head = fh.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise IngestionError(f"{name}: truncated matrix header")
    magic, version, rows, cols = _HEADER.unpack(head)
    if magic != MAGIC:
        raise IngestionError(f"{name}: bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise IngestionError(f"{name}: unsupported format version {version}")
    nbytes = rows * cols * 8
    body = fh.read(nbytes)
    if len(body) != nbytes:
        raise IngestionError(f"{name}: expected {rows}x{cols} values, file is truncated")
    matrix = np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(matrix).all(axis=1))
    if bad.size:
        raise IngestionError(f"{name}: non-finite value in row {int(bad[0])}")
    return matrix


def save_matrix(path, matrix: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_matrix(fh, matrix)


def load_matrix(path) -> np.ndarray:
    """Loads one matrix from a binary file or a headered numeric CSV."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    if _is_csv(path):
        return _read_csv(path)[1]
    with open(path, "rb") as fh:
        return read_matrix(fh, str(path))


def _is_csv(path: Path) -> bool:
    return path.suffix.lower() == ".csv"


def _read_csv(path: Path) -> tuple[list[str], np.ndarray, list | None]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise IngestionError(f"{path}: empty file or missing header")
        header = [h.strip() for h in header]
        rows = []
        for i, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"{path}: row {i} has {len(row)} fields, header has {len(header)}")
            try:
                values = [float(v) for v in row[1:]] if header[0] == "id" else [float(v) for v in row]
            except ValueError as exc:
                raise IngestionError(f"{path}: row {i}: {exc}") from None
            if not np.all(np.isfinite(values)):
                raise IngestionError(f"{path}: non-finite value in row {i}")
            rows.append((row[0], values) if header[0] == "id" else (None, values))
    width = len(header) - (header[0] == "id")
    values = np.array([v for _, v in rows], dtype=np.float64).reshape(len(rows), width)
    ids = [r for r, _ in rows] if header[0] == "id" else None
    return header, values, ids


def _split_header(path: Path, header: list[str]) -> tuple[int, int]:
    cols = header[1:] if header[0] == "id" else header
    p = sum(1 for c in cols if c.startswith("f"))
    k = len(cols) - p
    expected = [f"f{i}" for i in range(p)] + [f"y{j}" for j in range(k)]
    if cols != expected:
        raise IngestionError(f"{path}: malformed header, expected f0..f{p - 1},y0..y{k - 1}")
    return p, k


def load_dataset(path, format: str | None = None) -> FeatureDataset:
    """Reads a dataset; ``format`` is ``"csv"`` or ``"binary"`` (default: by suffix)."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    fmt = format or ("csv" if _is_csv(path) else "binary")
    if fmt == "csv":
        header, values, ids = _read_csv(path)
        p, k = _split_header(path, header)
        return FeatureDataset(values[:, :p], values[:, p:], ids)
    if fmt != "binary":
        raise IngestionError(f"unknown dataset format {fmt!r}")
    with open(path, "rb") as fh:
        x = read_matrix(fh, f"{path} (features)")
        y = read_matrix(fh, f"{path} (labels)")
        if fh.read(1):
            raise IngestionError(f"{path}: trailing bytes after label matrix")
    return FeatureDataset(x, y)


def save_dataset(data: FeatureDataset, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or ("csv" if _is_csv(path) else "binary")
    if fmt == "binary":
        with open(path, "wb") as fh:
            write_matrix(fh, data.features)
            write_matrix(fh, data.labels)
        return
    p, k = data.features.shape[1], data.labels.shape[1]
    header = [f"f{i}" for i in range(p)] + [f"y{j}" for j in range(k)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow((["id"] if data.ids is not None else []) + header)
        for i, (xr, yr) in enumerate(zip(data.features, data.labels)):
            row = [repr(float(v)) for v in xr] + [repr(float(v)) for v in yr]
            writer.writerow(([data.ids[i]] if data.ids is not None else []) + row)
