"""Rectangular first-order lattices, label images and the Potts statistic.

Labels are 1-based and stored row-major. Boundaries are free: edge and corner
pixels simply have fewer neighbours. The edge set is never materialised; it
is the "right + down" sweep over pixels.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels


class FormatError(ValueError):
    """A file does not follow one of the documented text/PGM layouts."""


@dataclass(frozen=True)
class Lattice:
    rows: int
    cols: int
    k: int = 2

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"lattice needs positive dimensions, got {self.rows}x{self.cols}")
        if self.k < 2:
            raise ValueError(f"need at least 2 labels, got k={self.k}")

    @property
    def n(self) -> int:
        return self.rows * self.cols

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def n_edges(self) -> int:
        return edge_count(self)


@dataclass(frozen=True, eq=False)
class LabelImage:
    """Potts state: a ``(rows, cols)`` array of labels in ``1..k``."""

    lattice: Lattice
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.labels, dtype=np.int64).reshape(self.lattice.shape)
        if arr.size and (arr.min() < 1 or arr.max() > self.lattice.k):
            raise ValueError(f"labels must lie in 1..{self.lattice.k}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)

    def __eq__(self, other):
        return (
            isinstance(other, LabelImage)
            and self.lattice == other.lattice
            and np.array_equal(self.labels, other.labels)
        )

    def with_labels(self, labels) -> "LabelImage":
        return LabelImage(self.lattice, labels)


@dataclass(frozen=True, eq=False)
class ObservedImage:
    """Pixel intensities ``y`` on a lattice (``k`` on the lattice is unused)."""

    lattice: Lattice
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64).reshape(self.lattice.shape).copy()
        if not np.all(np.isfinite(arr)):
            raise ValueError("observed values must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    def __eq__(self, other):
        return (
            isinstance(other, ObservedImage)
            and self.lattice.shape == other.lattice.shape
            and np.array_equal(self.values, other.values)
        )


def _check_index(lattice: Lattice, i: int) -> None:
    if not 0 <= i < lattice.n:
        raise IndexError(f"pixel index {i} outside 0..{lattice.n - 1}")


def neighbors(lattice: Lattice, i: int) -> list[int]:
    """First-order neighbours of pixel ``i`` (row-major index)."""
    _check_index(lattice, i)
    r, c = divmod(i, lattice.cols)
    out = []
    if r > 0:
        out.append(i - lattice.cols)
    if c > 0:
        out.append(i - 1)
    if c + 1 < lattice.cols:
        out.append(i + 1)
    if r + 1 < lattice.rows:
        out.append(i + lattice.cols)
    return out


def edge_count(lattice: Lattice) -> int:
    return lattice.rows * (lattice.cols - 1) + lattice.cols * (lattice.rows - 1)


def iter_edges(lattice: Lattice):
    """Yield each unique edge ``(i, j)`` once, right neighbour then down neighbour."""
    rows, cols = lattice.shape
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                yield i, i + 1
            if r + 1 < rows:
                yield i, i + cols


def sufficient_statistic(z: LabelImage | np.ndarray) -> int:
    """Number of like-labelled neighbour pairs, S(z)."""
    labels = z.labels if isinstance(z, LabelImage) else np.asarray(z, dtype=np.int64)
    return int(kernels.suff_stat(np.ascontiguousarray(labels, dtype=np.int64)))


def local_agreement(z: LabelImage, i: int, candidate: int) -> int:
    """How many neighbours of ``i`` carry label ``candidate``."""
    flat = z.labels.ravel()
    return int(sum(flat[j] == candidate for j in neighbors(z.lattice, i)))


def critical_beta(k: int) -> float:
    """Phase-transition point log(1 + sqrt(k)) of the 2-D k-state Potts model."""
    if k < 2:
        raise ValueError(f"critical_beta needs k >= 2, got {k}")
    return math.log1p(math.sqrt(k))


def random_labels(lattice: Lattice, rng: np.random.Generator) -> np.ndarray:
    """Uniform labels, drawn as ``floor(u*k)+1`` from ``rows*cols`` uniforms."""
    u = rng.random(lattice.n)
    return np.minimum((u * lattice.k).astype(np.int64) + 1, lattice.k).reshape(lattice.shape)


# ---------------------------------------------------------------------------
# text matrix and PGM I/O


def _format_value(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _read_matrix(path: Path, header_len: int):
    try:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise FormatError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != header_len:
        raise FormatError(f"{path}: expected {header_len} header fields, got {len(head)}")
    try:
        dims = [int(v) for v in head]
    except ValueError as exc:
        raise FormatError(f"{path}: non-integer header") from exc
    rows, cols = dims[0], dims[1]
    body = lines[1:]
    if len(body) != rows:
        raise FormatError(f"{path}: header says {rows} rows, found {len(body)}")
    data = []
    for ln in body:
        parts = ln.split()
        if len(parts) != cols:
            raise FormatError(f"{path}: row with {len(parts)} values, expected {cols}")
        data.append(parts)
    return dims, data


def save_label_image(z: LabelImage, path) -> None:
    lat = z.lattice
    lines = [f"{lat.rows} {lat.cols} {lat.k}"]
    lines += [" ".join(str(int(v)) for v in row) for row in z.labels]
    Path(path).write_text("\n".join(lines) + "\n")


def load_label_image(path) -> LabelImage:
    (rows, cols, k), data = _read_matrix(Path(path), 3)
    try:
        labels = np.array(data, dtype=np.int64)
        return LabelImage(Lattice(rows, cols, k), labels)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_observed_image(y: ObservedImage, path) -> None:
    lat = y.lattice
    lines = [f"{lat.rows} {lat.cols}"]
    lines += [" ".join(_format_value(v) for v in row) for row in y.values]
    Path(path).write_text("\n".join(lines) + "\n")


def load_observed_image(path, k: int = 2) -> ObservedImage:
    """Read a text matrix or a PGM (P2/P5) file, chosen by magic bytes."""
    path = Path(path)
    try:
        magic = path.open("rb").read(2)
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if magic in (b"P2", b"P5"):
        values = read_pgm(path)
        return ObservedImage(Lattice(*values.shape, k), values)
    (rows, cols), data = _read_matrix(path, 2)
    try:
        values = np.array(data, dtype=np.float64)
        return ObservedImage(Lattice(rows, cols, k), values)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


_PGM_TOKEN = re.compile(rb"(#[^\n]*\n)|(\s+)|([^\s#]+)")


def read_pgm(path) -> np.ndarray:
    """Load a greyscale PGM (ASCII P2 or binary P5, 8 or 16 bit) as float64."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = _PGM_TOKEN.match(raw, pos)
        if m is None:
            raise FormatError(f"{path}: truncated PGM header")
        pos = m.end()
        if m.group(3):
            tokens.append(m.group(3))
    magic = tokens[0]
    try:
        cols, rows, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if magic == b"P2":
        vals = raw[pos:].split()
        if len(vals) < rows * cols:
            raise FormatError(f"{path}: PGM has too few samples")
        arr = np.array(vals[: rows * cols], dtype=np.float64)
    elif magic == b"P5":
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = rows * cols * dtype.itemsize
        if len(raw) - pos < need:
            raise FormatError(f"{path}: PGM has too few samples")
        arr = np.frombuffer(raw, dtype=dtype, count=rows * cols, offset=pos).astype(np.float64)
    else:
        raise FormatError(f"{path}: not a P2/P5 PGM file")
    return arr.reshape(rows, cols)


def write_pgm(values: np.ndarray, path, maxval: int = 255, binary: bool = True) -> None:
    arr = np.asarray(values)
    rows, cols = arr.shape
    header = f"{'P5' if binary else 'P2'}\n{cols} {rows}\n{maxval}\n".encode()
    if binary:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        Path(path).write_bytes(header + arr.astype(dtype).tobytes())
    else:
        body = "\n".join(" ".join(str(int(v)) for v in row) for row in arr)
        Path(path).write_bytes(header + body.encode() + b"\n")
