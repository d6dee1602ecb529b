"""Frame loading, resizing, color conversion and the dataset manifest.

A clip is stored on disk as a directory of still PNG frames whose lexicographic
filename order is the temporal order. Frames are assumed to be pre-cropped to
the face region; no detector runs here. To turn a video into such a directory,
extract it losslessly first, e.g. ``ffmpeg -i clip.avi frames/%05d.png``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import cv2
import numpy as np

from .errors import InputError, InsufficientDataError, InvalidArgumentError

COLOR_SPACES = ("RGB", "HSV", "YCbCr")
LABELS = ("bona_fide", "attack")
MANIFEST_HEADER = "iipad-manifest v1"
DEFAULT_SEQUENCE_LENGTH = 75
DEFAULT_FRAME_SIZE = 150

# Full-range BT.601, rows give (Y, Cb - 0.5, Cr - 0.5).
_YCBCR_MATRIX = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Frame:
    """One H x W x 3 image with values in [0, 1]."""

    pixels: np.ndarray
    color_space: str = "RGB"

    def __post_init__(self):
        if self.color_space not in COLOR_SPACES:
            raise InvalidArgumentError(f"unknown color space {self.color_space!r}")
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidArgumentError(f"frame must be HxWx3, got shape {px.shape}")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]


@dataclass(frozen=True)
class FrameSequence:
    """An ordered stack of frames sharing size and color space.

    ``pixels`` has shape (n, H, W, 3).
    """

    pixels: np.ndarray
    color_space: str = "RGB"
    subject_id: str = ""
    label: str = "bona_fide"
    source: str = ""

    def __post_init__(self):
        if self.color_space not in COLOR_SPACES:
            raise InvalidArgumentError(f"unknown color space {self.color_space!r}")
        if self.label not in LABELS:
            raise InvalidArgumentError(f"unknown label {self.label!r}")
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 4 or px.shape[3] != 3 or px.shape[0] == 0:
            raise InvalidArgumentError(f"sequence must be n x H x W x 3, got {px.shape}")
        object.__setattr__(self, "pixels", _frozen(px))

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def __iter__(self) -> Iterator[Frame]:
        return iter(self.frames)

    @property
    def frames(self) -> list[Frame]:
        return [Frame(p, self.color_space) for p in self.pixels]

    def with_pixels(self, pixels: np.ndarray, color_space: str | None = None) -> "FrameSequence":
        return FrameSequence(
            pixels,
            color_space or self.color_space,
            self.subject_id,
            self.label,
            self.source,
        )


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    session: str
    label: str
    path: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise InvalidArgumentError(f"entry {self.path!r} has unknown label {self.label!r}")


@dataclass(frozen=True)
class DatasetManifest:
    """Dataset index; ``root`` is the directory entry paths are relative to."""

    entries: tuple[ManifestEntry, ...]
    root: Path = field(default_factory=Path)
    version: str = MANIFEST_HEADER

    @property
    def subjects(self) -> list[str]:
        return sorted({e.subject_id for e in self.entries})

    def for_subjects(self, subjects: Sequence[str]) -> list[ManifestEntry]:
        keep = set(subjects)
        return [e for e in self.entries if e.subject_id in keep]

    def resolve(self, entry: ManifestEntry) -> Path:
        return Path(self.root) / entry.path


def read_manifest(path: str | os.PathLike) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"manifest not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise InputError(f"{path}: missing header line {MANIFEST_HEADER!r}")
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise InputError(f"{path}:{lineno}: expected 4 tab-separated fields")
        try:
            entries.append(ManifestEntry(*parts))
        except InvalidArgumentError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from exc
    return DatasetManifest(tuple(entries), path.parent, MANIFEST_HEADER)


def write_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    rows = [MANIFEST_HEADER]
    rows += [f"{e.subject_id}\t{e.session}\t{e.label}\t{e.path}" for e in manifest.entries]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def _frame_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")


def read_png(path: str | os.PathLike) -> np.ndarray:
    """Decode an 8- or 16-bit PNG into an RGB float array in [0, 1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise InputError(f"cannot decode image {path}")
    if raw.dtype == np.uint8:
        img = raw.astype(np.float64) / 255.0
    elif raw.dtype == np.uint16:
        img = raw.astype(np.float64) / 65535.0
    else:
        raise InputError(f"{path}: unsupported sample type {raw.dtype}")
    if img.ndim == 2:
        return np.repeat(img[:, :, None], 3, axis=2)
    return img[:, :, 2::-1]  # BGR(A) -> RGB


def write_png(path: str | os.PathLike, rgb: np.ndarray, bit_depth: int = 8) -> None:
    """Write an H x W x 3 (or H x W) array in [0, 1] as PNG."""
    if bit_depth not in (8, 16):
        raise InvalidArgumentError("bit_depth must be 8 or 16")
    top = 255 if bit_depth == 8 else 65535
    q = np.rint(np.clip(rgb, 0.0, 1.0) * top).astype(np.uint8 if bit_depth == 8 else np.uint16)
    if q.ndim == 3:
        q = q[:, :, ::-1]
    if not cv2.imwrite(str(path), np.ascontiguousarray(q), [cv2.IMWRITE_PNG_COMPRESSION, 6]):
        raise InputError(f"cannot write image {path}")


def load_sequence(
    entry: ManifestEntry,
    n: int = DEFAULT_SEQUENCE_LENGTH,
    root: str | os.PathLike | None = None,
) -> FrameSequence:
    """Read the first ``n`` frames of a clip directory as an RGB sequence."""
    directory = Path(root) / entry.path if root is not None else Path(entry.path)
    if not directory.is_dir():
        raise InputError(f"frame directory not found: {directory}")
    files = _frame_files(directory)
    if len(files) < n:
        raise InsufficientDataError(
            f"{directory}: need {n} frames, found {len(files)}"
        )
    frames = [read_png(f) for f in files[:n]]
    if any(f.shape != frames[0].shape for f in frames):
        raise InputError(f"{directory}: frames differ in size")
    return FrameSequence(
        np.stack(frames),
        "RGB",
        subject_id=entry.subject_id,
        label=entry.label,
        source=str(directory),
    )


def save_sequence(seq: FrameSequence, directory: str | os.PathLike, bit_depth: int = 8) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(len(seq))))
    for t, px in enumerate(seq.pixels):
        write_png(directory / f"{t:0{width}d}.png", px, bit_depth)


def _resize_bilinear(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h == size and w == size:
        return img.copy()

    def axis(n_in):
        pos = np.linspace(0.0, n_in - 1, size)
        i0 = np.minimum(np.floor(pos).astype(int), max(n_in - 2, 0))
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    y0, y1, wy = axis(h)
    x0, x1, wx = axis(w)
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def normalize_frames(seq: FrameSequence, size: int = DEFAULT_FRAME_SIZE) -> FrameSequence:
    """Resize every frame to ``size`` x ``size``.

    Bilinear with the corner-aligned convention: output sample i sits at input
    coordinate ``i * (n_in - 1) / (size - 1)``, so corners map onto corners.
    """
    if size < 2:
        raise InvalidArgumentError(f"target size must be >= 2, got {size}")
    out = np.stack([_resize_bilinear(f, size) for f in seq.pixels])
    return seq.with_pixels(np.clip(out, 0.0, 1.0))


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    vmax = rgb.max(axis=-1)
    delta = vmax - rgb.min(axis=-1)
    s = np.divide(delta, vmax, out=np.zeros_like(vmax), where=vmax > 0)
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(
        vmax == r,
        (g - b) / safe,
        np.where(vmax == g, 2.0 + (b - r) / safe, 4.0 + (r - g) / safe),
    )
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    h[h >= 1.0] = 0.0
    return np.stack([h, s, vmax], axis=-1)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    out = rgb @ _YCBCR_MATRIX.T
    out[..., 1:] += 0.5
    return out


_CONVERTERS = {"HSV": rgb_to_hsv, "YCbCr": rgb_to_ycbcr, "RGB": np.array}


def _convert(pixels: np.ndarray, source: str, target: str) -> np.ndarray:
    if target not in _CONVERTERS:
        raise InvalidArgumentError(f"unsupported color space {target!r}")
    if source != "RGB":
        raise InvalidArgumentError(f"conversion expects RGB input, got {source}")
    return np.clip(_CONVERTERS[target](pixels), 0.0, 1.0)


def convert_color(frame: Frame, target: str) -> Frame:
    return Frame(_convert(frame.pixels, frame.color_space, target), target)


def convert_sequence(seq: FrameSequence, target: str) -> FrameSequence:
    return seq.with_pixels(_convert(seq.pixels, seq.color_space, target), target)
