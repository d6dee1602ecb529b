"""Shading/reflectance separation on top of the steerable pyramid.

Everything happens on log-luminance, where the multiplicative image model
``I = S * R`` becomes additive. Each oriented band is split between the two
layers by a weight derived from two correlations:

* ``c_shd``: band envelope against the gradient magnitude of the luminance
  smoothed past the band's own scale (structure that follows the coarse
  illumination field);
* ``c_ref``: band envelope against local chroma variation (luminance changes
  that coincide with a change of material colour).

The weights are ``sigmoid(k * (c_shd - c_ref))``; the lowpass residual always
belongs to shading and the highpass residual to reflectance, so the two log
layers add up to the input exactly. A scalar DC offset is then moved between
the layers to minimise the reflectance spread within chromaticity clusters.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..errors import InvalidArgumentError
from ..ingest import Frame, FrameSequence, write_png
from .pyramid import Pyramid, build_pyramid, collapse_pyramid

LUMINANCE_FLOOR = 1e-4
DEFAULT_SHARPNESS = 5.0
DC_LIMIT = float(np.log(2.0))
DC_TOLERANCE = 1e-4
CLUSTER_GRID = 4  # 4 x 4 = 16 chromaticity cells
_ZERO_STD = 1e-10


@dataclass(frozen=True)
class BandStatistics:
    """Per-band local measures and correlations, keyed by (scale, orientation).

    ``amplitude``, ``texture`` and ``hue`` hold cropped planes; ``c_shd`` and
    ``c_ref`` are (scales, orientations) arrays in [-1, 1].
    """

    amplitude: dict
    texture: dict
    hue: dict
    c_shd: np.ndarray
    c_ref: np.ndarray

    def weights(self, sharpness: float = DEFAULT_SHARPNESS, hard: bool = False) -> np.ndarray:
        """Fraction of each band assigned to shading."""
        diff = self.c_shd - self.c_ref
        if hard:
            return np.where(diff > 0, 1.0, np.where(diff < 0, 0.0, 0.5))
        return 0.5 * (1.0 + np.tanh(0.5 * sharpness * diff))


@dataclass(frozen=True)
class IntrinsicPair:
    shading: np.ndarray
    reflectance: np.ndarray
    reflectance_raw: np.ndarray  # before clamping to [0, 1]
    v_dc: float = 0.0
    band_weights: np.ndarray | None = None


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation over all pixels; 0 when either input is flat."""
    a = np.ravel(a) - np.mean(a)
    b = np.ravel(b) - np.mean(b)
    na = np.sqrt(np.dot(a, a) / a.size)
    nb = np.sqrt(np.dot(b, b) / b.size)
    if na <= _ZERO_STD or nb <= _ZERO_STD:
        return 0.0
    return float(np.clip(np.dot(a, b) / (a.size * na * nb), -1.0, 1.0))


def luminance_of(pixels: np.ndarray, color_space: str) -> np.ndarray:
    if color_space == "RGB":
        lum = pixels.mean(axis=-1)
    elif color_space == "HSV":
        lum = pixels[..., 2]
    elif color_space == "YCbCr":
        lum = pixels[..., 0]
    else:
        raise InvalidArgumentError(f"unknown color space {color_space!r}")
    return np.maximum(lum, LUMINANCE_FLOOR)


def chroma_of(pixels: np.ndarray, color_space: str) -> np.ndarray:
    """Two illumination-independent colour coordinates in [0, 1]."""
    if color_space == "RGB":
        total = np.maximum(pixels.sum(axis=-1), 3 * LUMINANCE_FLOOR)
        return np.stack([pixels[..., 0] / total, pixels[..., 1] / total], axis=-1)
    if color_space == "HSV":
        angle = 2 * np.pi * pixels[..., 0]
        sat = pixels[..., 1]
        return np.stack(
            [0.5 + 0.5 * sat * np.cos(angle), 0.5 + 0.5 * sat * np.sin(angle)], axis=-1
        )
    if color_space == "YCbCr":
        return pixels[..., 1:3].copy()
    raise InvalidArgumentError(f"unknown color space {color_space!r}")


def _local_var(x: np.ndarray, sigma: float) -> np.ndarray:
    x = x - x.mean()
    m = _smooth(x, sigma)
    return np.maximum(_smooth(x * x, sigma) - m * m, 0.0)


def _scale_sigma(scale: int) -> float:
    """Envelope window (full-resolution pixels) for bands of ``scale``."""
    return float(2 ** (scale + 1))


def _smooth(x: np.ndarray, sigma: float) -> np.ndarray:
    return ndimage.gaussian_filter(x, sigma, mode="reflect", truncate=3.0)


def compute_band_statistics(
    p: Pyramid,
    chroma: np.ndarray,
    luminance: np.ndarray | None = None,
    with_texture: bool = True,
) -> BandStatistics:
    """Local amplitude/texture/hue measures and shading/reflectance correlations.

    Scale ``s`` is analysed on the pixel grid subsampled by ``p.stride(s)``;
    bands are band-limited, so the subsampling is exact for them. Measures are
    returned on that grid. ``luminance`` is the (log) plane the pyramid was
    built from and is recovered by collapsing ``p`` when omitted.
    """
    chroma = np.asarray(chroma, dtype=np.float64)
    if chroma.shape != (*p.shape, 2):
        raise InvalidArgumentError(f"chroma must be {(*p.shape, 2)}, got {chroma.shape}")
    if luminance is None:
        luminance = collapse_pyramid(p)

    amp, tex, hue = {}, {}, {}
    c_shd = np.zeros((p.scales, p.orientations))
    c_ref = np.zeros_like(c_shd)
    for s in range(p.scales):
        d = p.stride(s)
        sigma = _scale_sigma(s) / d
        pre = luminance if d == 1 else _smooth(luminance, d / 2)
        smooth = _smooth(pre[::d, ::d], 2 * sigma)
        gy, gx = np.gradient(smooth)
        lum_mag = np.hypot(gx, gy)
        ch = chroma[::d, ::d]
        hm = np.sqrt(_local_var(ch[..., 0], sigma) + _local_var(ch[..., 1], sigma))
        for k in range(p.orientations):
            band = p.decimated(s, k)
            energy = _smooth(band * band, sigma)
            am = np.sqrt(energy)
            amp[s, k] = am
            hue[s, k] = hm
            if with_texture:
                mean = _smooth(band, sigma)
                tex[s, k] = np.maximum(energy - mean * mean, 0.0)
            c_shd[s, k] = pearson(am, lum_mag)
            c_ref[s, k] = pearson(am, hm)
    return BandStatistics(amp, tex, hue, c_shd, c_ref)


def reconstruct_shading_reflectance(
    p: Pyramid,
    stats: BandStatistics,
    sharpness: float = DEFAULT_SHARPNESS,
    hard_gate: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Split the pyramid into log-shading and log-reflectance planes.

    Shading receives ``w * band`` plus the lowpass residual; reflectance
    receives ``(1 - w) * band`` plus the highpass residual.
    """
    w = stats.weights(sharpness, hard_gate)
    shading = collapse_pyramid(p, weights=w, highpass_weight=0.0, lowpass_weight=1.0)
    reflectance = collapse_pyramid(p, weights=1.0 - w, highpass_weight=1.0, lowpass_weight=0.0)
    return shading, reflectance


def _cluster_index(chroma: np.ndarray) -> np.ndarray:
    cells = np.clip((chroma * CLUSTER_GRID).astype(int), 0, CLUSTER_GRID - 1)
    return (cells[..., 0] * CLUSTER_GRID + cells[..., 1]).ravel()


def cluster_variance_objective(log_shading: np.ndarray, frame: Frame):
    """Return ``f(v)``: mean within-cluster variance of ``I / exp(log_shading + v)``.

    Clusters are the 16 cells of a uniform grid over the frame's chromaticity.
    """
    pixels = frame.pixels
    labels = _cluster_index(chroma_of(pixels, frame.color_space))
    base = pixels / np.exp(log_shading)[..., None]
    flat = base.reshape(-1, 3)
    n = np.bincount(labels, minlength=CLUSTER_GRID**2).astype(float)
    occupied = n > 0
    s1 = np.stack([np.bincount(labels, flat[:, c], CLUSTER_GRID**2) for c in range(3)], 1)
    s2 = np.stack([np.bincount(labels, flat[:, c] ** 2, CLUSTER_GRID**2) for c in range(3)], 1)
    # sum of squared deviations at v = 0; a shift of v scales deviations by exp(-v)
    ss = np.maximum(s2[occupied] - s1[occupied] ** 2 / n[occupied, None], 0.0).sum()
    total = flat.size

    def objective(v: float) -> float:
        return float(np.exp(-2.0 * v) * ss / total)

    return objective


def golden_section(f, lo: float, hi: float, tol: float = DC_TOLERANCE) -> float:
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def dc_offset(log_shading: np.ndarray, frame: Frame, limit: float = DC_LIMIT) -> float:
    """DC value moved from reflectance into shading, within ``[-limit, limit]``.

    Flat objectives (no within-cluster variation at all) return 0.
    """
    f = cluster_variance_objective(log_shading, frame)
    candidates = [0.0, golden_section(f, -limit, limit), -limit, limit]
    values = [f(v) for v in candidates]
    if max(values) <= 1e-18:
        return 0.0
    best = min(values)
    ties = [v for v, fv in zip(candidates, values) if fv <= best * (1 + 1e-12)]
    return min(ties, key=lambda v: (abs(v), v))


def optimize_dc(
    log_shading: np.ndarray, log_reflectance: np.ndarray, frame: Frame
) -> tuple[np.ndarray, np.ndarray]:
    v = dc_offset(log_shading, frame)
    return log_shading + v, log_reflectance - v


def decompose(
    frame: Frame,
    scales: int = 3,
    orientations: int = 4,
    sharpness: float = DEFAULT_SHARPNESS,
    hard_gate: bool = False,
) -> IntrinsicPair:
    """Factor a frame into achromatic shading and colour reflectance."""
    pixels = frame.pixels
    log_lum = np.log(luminance_of(pixels, frame.color_space))
    pyr = build_pyramid(log_lum, scales, orientations)
    stats = compute_band_statistics(
        pyr, chroma_of(pixels, frame.color_space), log_lum, with_texture=False
    )
    # reflectance is recovered by division below, so only shading is synthesised
    w = stats.weights(sharpness, hard_gate)
    log_s = collapse_pyramid(pyr, weights=w, highpass_weight=0.0, lowpass_weight=1.0)
    v = dc_offset(log_s, frame)
    shading = np.exp(log_s + v)
    raw = pixels / shading[..., None]
    return IntrinsicPair(
        shading,
        np.clip(raw, 0.0, 1.0),
        raw,
        v,
        w,
    )


def decompose_sequence(seq: FrameSequence, **options) -> FrameSequence:
    """Replace every frame with its clamped reflectance."""
    out = np.stack([decompose(f, **options).reflectance for f in seq.frames])
    return seq.with_pixels(out)


def dump_debug(pair: IntrinsicPair, directory: str | os.PathLike, stem: str) -> None:
    """Write shading/reflectance as 16-bit PNGs plus a key=value sidecar.

    Shading is divided by its maximum before quantisation; the divisor is
    recorded as ``shading_scale``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    scale = float(pair.shading.max())
    write_png(directory / f"{stem}_shading.png", pair.shading / scale, bit_depth=16)
    write_png(directory / f"{stem}_reflectance.png", pair.reflectance, bit_depth=16)
    lines = [f"v_dc={pair.v_dc!r}", f"shading_scale={scale!r}"]
    if pair.band_weights is not None:
        for (s, k), w in np.ndenumerate(pair.band_weights):
            lines.append(f"weight_{s}_{k}={float(w)!r}")
    (directory / f"{stem}_intrinsic.txt").write_text("\n".join(lines) + "\n")
