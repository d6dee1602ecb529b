"""Undecimated steerable pyramid built in the Fourier domain.

The plane is mirror-extended to twice its size before transforming, so the
periodic boundary implied by the FFT is continuous. Every band keeps the full
extended size; nothing is subsampled, which keeps reconstruction exact for any
even or odd input shape.

The filters form a Parseval tiling of the frequency plane::

    |H0|^2 + sum_{s,k} |B_s A_k|^2 + |L|^2 = 1

where ``H0`` is the highpass residual, ``B_s`` the radial band of scale ``s``,
``A_k`` the angular window of orientation ``k`` and ``L`` the lowpass residual.
Analysis multiplies by the filter, synthesis by its conjugate, so
``collapse_pyramid(build_pyramid(x)) == x`` up to rounding.

Band ``s`` is supported below radius ``pi / 2**s``, which :meth:`Pyramid.decimated`
exploits to produce exactly subsampled copies straight from the spectrum.
"""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np

from ..errors import InvalidArgumentError, InvalidStateError


def _transition(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """C1 raised-cosine pair (hi, lo) with hi**2 + lo**2 == 1 over t in [0, 1]."""
    phase = np.pi / 4 * (1 - np.cos(np.pi * np.clip(t, 0.0, 1.0)))
    return np.sin(phase), np.cos(phase)


def _readonly(*arrays):
    for a in arrays:
        a.flags.writeable = False


@lru_cache(maxsize=8)
def filter_bank(rows: int, cols: int, scales: int, orientations: int):
    """Filters on the ``rfft2`` grid of a rows x cols plane.

    Returns (highpass, bands, lowpass) where ``bands[s][k]`` is complex.
    Cached and shared read-only.
    """
    fy = 2 * np.pi * np.fft.fftfreq(rows)[:, None]
    fx = 2 * np.pi * np.fft.rfftfreq(cols)[None, :]
    radius = np.hypot(fx, fy)
    angle = np.arctan2(fy, fx)
    with np.errstate(divide="ignore"):
        log_rad = np.log2(radius / np.pi)  # 0 at Nyquist, -inf at DC

    hi0, lo = _transition(log_rad + 1)

    order = orientations - 1
    norm = np.sqrt(
        2.0 ** (2 * order) * factorial(order) ** 2 / (orientations * factorial(2 * order))
    )
    # (-i)**order keeps every band filter Hermitian, hence every band real
    phase = (-1j) ** order
    angular = [
        phase * norm * np.cos(angle - np.pi * k / orientations) ** order
        for k in range(orientations)
    ]

    bands = []
    for s in range(scales):
        hi, lo_s = _transition(log_rad + s + 2)
        radial = lo * hi
        lo = lo * lo_s
        bands.append(tuple(radial * a for a in angular))

    _readonly(hi0, lo, *[f for row in bands for f in row])
    return hi0, tuple(bands), lo


@lru_cache(maxsize=8)
def band_power(rows: int, cols: int, scales: int, orientations: int):
    """Squared magnitudes of :func:`filter_bank`; band array is (scales, orientations, ...)."""
    hi0, bank, lo = filter_bank(rows, cols, scales, orientations)
    power = np.array([[(f * np.conj(f)).real for f in row] for row in bank])
    hi_pow, lo_pow = hi0**2, lo**2
    _readonly(power, hi_pow, lo_pow)
    return hi_pow, power, lo_pow


def _extend(plane: np.ndarray) -> np.ndarray:
    top = np.concatenate([plane, plane[::-1]], axis=0)
    return np.concatenate([top, top[:, ::-1]], axis=1)


class Pyramid:
    """Band coefficients on the mirror-extended grid.

    ``bands[s][k]`` is scale ``s`` (0 = finest), orientation ``k``; orientation
    ``k`` is tuned to frequency direction ``k * pi / K``. A pyramid returned by
    :func:`build_pyramid` keeps the input spectrum and materialises band planes
    on first access; one assembled from explicit planes has no spectrum.
    """

    def __init__(
        self,
        bands,
        highpass: np.ndarray,
        lowpass: np.ndarray,
        shape: tuple[int, int],
        spectrum: np.ndarray | None = None,
        grid: tuple[int, int] | None = None,
        counts: tuple[int, int] | None = None,
    ):
        self._bands = None if bands is None else tuple(tuple(row) for row in bands)
        self._highpass = highpass
        self._lowpass = lowpass
        self.shape = tuple(shape)
        self.spectrum = spectrum
        if self._bands is not None:
            self.grid = tuple(highpass.shape)
            self.scales = len(self._bands)
            self.orientations = len(self._bands[0]) if self._bands else 0
        else:
            self.grid = tuple(grid)
            self.scales, self.orientations = counts

    def _filters(self):
        return filter_bank(*self.grid, self.scales, self.orientations)

    def _synth(self, filt: np.ndarray) -> np.ndarray:
        return np.fft.irfft2(self.spectrum * filt, s=self.grid)

    @property
    def bands(self):
        if self._bands is None:
            _, bank, _ = self._filters()
            self._bands = tuple(tuple(self._synth(f) for f in row) for row in bank)
        return self._bands

    @property
    def highpass(self) -> np.ndarray:
        if self._highpass is None:
            self._highpass = self._synth(self._filters()[0])
        return self._highpass

    @property
    def lowpass(self) -> np.ndarray:
        if self._lowpass is None:
            self._lowpass = self._synth(self._filters()[2])
        return self._lowpass

    def crop(self, plane: np.ndarray) -> np.ndarray:
        h, w = self.shape
        return plane[:h, :w]

    def stride(self, scale: int) -> int:
        """Largest exact subsampling factor (<= 2**scale) for a band of ``scale``."""
        d = 1
        rows, cols = self.grid
        while d < 2**scale and rows % (2 * d) == 0 and cols % (2 * d) == 0:
            d *= 2
        return d

    def decimated(self, scale: int, orientation: int) -> np.ndarray:
        """Band ``(scale, orientation)`` sampled every ``stride(scale)`` pixels, cropped.

        Equal to ``crop(bands[scale][orientation])[::d, ::d]`` up to rounding.
        """
        d = self.stride(scale)
        if self.spectrum is None or self._bands is not None:
            return self.crop(self.bands[scale][orientation])[::d, ::d]
        filt = self._filters()[1][scale][orientation]
        if d == 1:
            return self.crop(self._synth(filt))
        rows, cols = self.grid
        r, c = rows // d, cols // d
        keep_rows = np.round(np.fft.fftfreq(r) * r).astype(int) % rows
        small = (self.spectrum[keep_rows, : c // 2 + 1]) * filt[keep_rows, : c // 2 + 1]
        plane = np.fft.irfft2(small, s=(r, c)) / (d * d)
        h, w = self.shape
        return plane[: -(-h // d), : -(-w // d)]

    def replace(self, bands=None, highpass=None, lowpass=None) -> "Pyramid":
        return Pyramid(
            self.bands if bands is None else bands,
            self.highpass if highpass is None else highpass,
            self.lowpass if lowpass is None else lowpass,
            self.shape,
        )

    def scaled(self, factor: float) -> "Pyramid":
        return Pyramid(
            [[b * factor for b in row] for row in self.bands],
            self.highpass * factor,
            self.lowpass * factor,
            self.shape,
            None if self.spectrum is None else self.spectrum * factor,
        )


def build_pyramid(luminance: np.ndarray, scales: int = 3, orientations: int = 4) -> Pyramid:
    x = np.asarray(luminance, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgumentError(f"expected a 2-D plane, got shape {x.shape}")
    if scales < 1 or orientations < 1:
        raise InvalidArgumentError("scales and orientations must be >= 1")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("plane contains non-finite values")
    ext = _extend(x)
    spec = np.fft.rfft2(ext)
    return Pyramid(None, None, None, x.shape, spec, ext.shape, (scales, orientations))


def collapse_pyramid(
    p: Pyramid,
    weights: np.ndarray | None = None,
    highpass_weight: float = 1.0,
    lowpass_weight: float = 1.0,
) -> np.ndarray:
    """Synthesise the plane from (optionally re-weighted) pyramid coefficients.

    ``weights`` holds one scalar per band, shape (scales, orientations).
    """
    rows, cols = p.grid
    if weights is None:
        weights = np.ones((p.scales, p.orientations))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (p.scales, p.orientations):
        raise InvalidStateError(f"weights shape {weights.shape} does not match pyramid")

    if p.spectrum is not None:
        # bands are spectrum * filter, so the synthesis sum folds into one gain
        hi_pow, power, lo_pow = band_power(rows, cols, p.scales, p.orientations)
        gain = highpass_weight * hi_pow + lowpass_weight * lo_pow
        gain = gain + np.tensordot(weights, power, axes=2)
        return p.crop(np.fft.irfft2(p.spectrum * gain, s=(rows, cols)))

    planes = [p.highpass, p.lowpass] + [b for row in p.bands for b in row]
    if any(b.shape != (rows, cols) for b in planes):
        raise InvalidStateError("pyramid planes differ in shape")
    if any(len(row) != p.orientations for row in p.bands):
        raise InvalidStateError("ragged orientation count across scales")
    hi0, bank, lo = filter_bank(rows, cols, p.scales, p.orientations)
    acc = highpass_weight * np.fft.rfft2(p.highpass) * hi0
    acc += lowpass_weight * np.fft.rfft2(p.lowpass) * lo
    for (s, k), w in np.ndenumerate(weights):
        acc += w * np.fft.rfft2(p.bands[s][k]) * np.conj(bank[s][k])
    return p.crop(np.fft.irfft2(acc, s=(rows, cols)))
