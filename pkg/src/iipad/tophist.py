"""Intensity histograms on three orthogonal planes of a frame sequence.

For a sequence of ``n`` frames of ``S x S x 3`` pixels:

* ``XY``: row ``t`` holds the three channel histograms of frame ``t``;
* ``XT``: row ``s`` holds the histograms of the ``S x n`` plane at image row
  ``y = 2s``;
* ``YT``: row ``s`` holds the histograms of the ``S x n`` plane at image
  column ``x = 2s``.

Each row concatenates three 256-bin channel histograms (768 columns). A value
``v`` falls in bin ``floor(v * 255 + 0.5)``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, InvalidArgumentError
from .ingest import DEFAULT_FRAME_SIZE, DEFAULT_SEQUENCE_LENGTH, FrameSequence

PLANES = ("XY", "XT", "YT")
BINS = 256
CHANNELS = 3
NORMALIZATIONS = ("probability", "counts")

CACHE_MAGIC = b"IIHM"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sHHII")  # magic, version, plane index, rows, cols


@dataclass(frozen=True)
class HistogramMatrix:
    plane: str
    values: np.ndarray  # (rows, 768)
    normalization: str = "probability"

    def __post_init__(self):
        if self.plane not in PLANES:
            raise InvalidArgumentError(f"unknown plane {self.plane!r}")
        if self.normalization not in NORMALIZATIONS:
            raise InvalidArgumentError(f"unknown normalization {self.normalization!r}")
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[1] != CHANNELS * BINS:
            raise InvalidArgumentError(f"histogram matrix must be rows x 768, got {v.shape}")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def quantize(values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to bin indices 0..255."""
    v = np.asarray(values, dtype=np.float64)
    if v.size and (not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0):
        raise InvalidArgumentError("histogram input must lie in [0, 1]")
    return np.clip(np.floor(v * 255.0 + 0.5), 0, BINS - 1).astype(np.intp)


def histogram_256(plane_slice: np.ndarray, normalization: str = "counts") -> np.ndarray:
    """256-bin histogram of one 2-D plane."""
    if normalization not in NORMALIZATIONS:
        raise InvalidArgumentError(f"unknown normalization {normalization!r}")
    idx = quantize(plane_slice).ravel()
    h = np.bincount(idx, minlength=BINS).astype(np.float64)
    if normalization == "probability":
        h /= max(idx.size, 1)
    return h


def _check(seq: FrameSequence, n: int | None, size: int | None) -> np.ndarray:
    px = seq.pixels
    if n is not None and px.shape[0] != n:
        raise InvalidArgumentError(f"expected {n} frames, got {px.shape[0]}")
    if size is not None and px.shape[1:3] != (size, size):
        raise InvalidArgumentError(f"expected {size}x{size} frames, got {px.shape[1:3]}")
    return px


def _rows(slices: np.ndarray, normalization: str) -> np.ndarray:
    """Histograms of ``slices`` shaped (rows, pixels, 3) -> (rows, 768)."""
    if normalization not in NORMALIZATIONS:
        raise InvalidArgumentError(f"unknown normalization {normalization!r}")
    rows, pixels, _ = slices.shape
    idx = quantize(slices)
    # one bincount over (row, channel, bin) triples
    offset = (np.arange(rows)[:, None, None] * CHANNELS + np.arange(CHANNELS)) * BINS
    flat = (idx + offset).ravel()
    counts = np.bincount(flat, minlength=rows * CHANNELS * BINS).astype(np.float64)
    out = counts.reshape(rows, CHANNELS * BINS)
    if normalization == "probability":
        out /= pixels
    return out


def build_xy(
    seq: FrameSequence,
    normalization: str = "probability",
    n: int | None = DEFAULT_SEQUENCE_LENGTH,
    size: int | None = DEFAULT_FRAME_SIZE,
) -> HistogramMatrix:
    px = _check(seq, n, size)
    t = px.shape[0]
    return HistogramMatrix("XY", _rows(px.reshape(t, -1, CHANNELS), normalization), normalization)


def build_xt(
    seq: FrameSequence,
    normalization: str = "probability",
    n: int | None = DEFAULT_SEQUENCE_LENGTH,
    size: int | None = DEFAULT_FRAME_SIZE,
) -> HistogramMatrix:
    px = _check(seq, n, size)
    slices = px[:, ::2].transpose(1, 0, 2, 3)  # (rows y=2s, t, x, c)
    s = slices.shape[0]
    return HistogramMatrix("XT", _rows(slices.reshape(s, -1, CHANNELS), normalization), normalization)


def build_yt(
    seq: FrameSequence,
    normalization: str = "probability",
    n: int | None = DEFAULT_SEQUENCE_LENGTH,
    size: int | None = DEFAULT_FRAME_SIZE,
) -> HistogramMatrix:
    px = _check(seq, n, size)
    slices = px[:, :, ::2].transpose(2, 0, 1, 3)  # (cols x=2s, t, y, c)
    s = slices.shape[0]
    return HistogramMatrix("YT", _rows(slices.reshape(s, -1, CHANNELS), normalization), normalization)


BUILDERS = {"XY": build_xy, "XT": build_xt, "YT": build_yt}


def build_planes(
    seq: FrameSequence, planes=PLANES, normalization: str = "probability", **kwargs
) -> dict[str, HistogramMatrix]:
    unknown = set(planes) - set(PLANES)
    if unknown:
        raise InvalidArgumentError(f"unknown planes {sorted(unknown)}")
    return {p: BUILDERS[p](seq, normalization, **kwargs) for p in planes}


def save_matrix(h: HistogramMatrix, path: str | os.PathLike) -> None:
    """Cache layout: 16-byte header then row-major little-endian float32.

    Header: 4-byte magic ``IIHM``, uint16 version, uint16 plane index
    (0 XY, 1 XT, 2 YT), uint32 rows, uint32 cols. Normalization is not stored;
    probability and counts caches belong in different files.
    """
    rows, cols = h.shape
    header = _HEADER.pack(CACHE_MAGIC, CACHE_VERSION, PLANES.index(h.plane), rows, cols)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(h.values.astype("<f4").tobytes())
    os.replace(tmp, path)


def load_matrix(path: str | os.PathLike, normalization: str = "probability") -> HistogramMatrix:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read histogram cache {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated histogram cache header")
    magic, version, plane, rows, cols = _HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise FormatError(f"{path}: bad histogram cache magic {magic!r}")
    if version != CACHE_VERSION:
        raise FormatError(f"{path}: unsupported histogram cache version {version}")
    if plane >= len(PLANES):
        raise FormatError(f"{path}: bad plane index {plane}")
    if cols != CHANNELS * BINS or len(data) != _HEADER.size + 4 * rows * cols:
        raise FormatError(f"{path}: histogram cache size does not match header")
    values = np.frombuffer(data, "<f4", offset=_HEADER.size).reshape(rows, cols)
    return HistogramMatrix(PLANES[plane], values.astype(np.float64), normalization)
