"""Synthetic Lambertian face-like sequences with known albedo and illumination.

A "face" is an elliptical patch of textured albedo laid on a flat field of the
same base tone. Every frame is rendered as::

    I_t = A * L_t + k * L_t**p

with ``A`` the (H, W, 3) albedo, ``L_t`` a smooth achromatic illumination field
and the second term an achromatic specular lobe (``k = 0`` for skin). Two
material classes differ in albedo texture and specular gain:

* ``skin_like``: strong high-frequency, partly chromatic albedo texture and no
  specular lobe;
* ``mask_like``: nearly uniform albedo and a specular lobe that amplifies the
  frame-to-frame illumination changes.

All constants live in :class:`SynthParams`.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InputError, InvalidArgumentError
from .ingest import (
    DatasetManifest,
    FrameSequence,
    ManifestEntry,
    save_sequence,
    write_manifest,
)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.tsv"


@dataclass(frozen=True)
class MaterialClass:
    tag: str
    texture_amplitude: float  # per-channel std of the albedo texture
    specular_gain: float  # k in k * L**p
    specular_exponent: float  # p; illumination sensitivity of the lobe
    label: str


SKIN_LIKE = MaterialClass("skin_like", 0.15, 0.0, 4.0, "bona_fide")
MASK_LIKE = MaterialClass("mask_like", 0.02, 0.3, 4.0, "attack")
MATERIALS = {m.tag: m for m in (SKIN_LIKE, MASK_LIKE)}


@dataclass(frozen=True)
class SynthParams:
    size: int = 150
    frames: int = 75
    texture_sigma: float = 1.0  # Gaussian blur (pixels) of the texture noise
    chroma_share: float = 0.6  # weight of the per-channel texture component
    ellipse_axes: tuple[float, float] = (0.36, 0.44)  # semi-axes / size (x, y)
    tone_red: tuple[float, float] = (0.50, 0.65)
    tone_green_ratio: tuple[float, float] = (0.70, 0.82)
    tone_blue_ratio: tuple[float, float] = (0.55, 0.70)
    light_mean: float = 0.62
    light_drift: float = 0.10  # amplitude of the slow drift of the mean level
    light_slope: float = 0.25  # peak-to-peak change across the frame
    light_jitter: float = 0.02  # per-frame mean jitter (std)
    light_range: tuple[float, float] = (0.2, 0.85)
    albedo_floor: float = 0.01


@dataclass(frozen=True)
class GroundTruth:
    albedo: np.ndarray  # (H, W, 3)
    illumination: np.ndarray  # (n, H, W)
    rendered: np.ndarray  # (n, H, W, 3), before clamping to [0, 1]
    material: MaterialClass
    clamped_fraction: float


def subject_tone(rng: np.random.Generator, params: SynthParams = SynthParams()) -> np.ndarray:
    r = rng.uniform(*params.tone_red)
    g = r * rng.uniform(*params.tone_green_ratio)
    b = r * rng.uniform(*params.tone_blue_ratio)
    return np.array([r, g, b])


def _unit_noise(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    n = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return (n - n.mean()) / n.std()


def _ellipse_mask(params: SynthParams) -> np.ndarray:
    n = params.size
    c = (n - 1) / 2
    y, x = np.mgrid[0:n, 0:n]
    ax, ay = params.ellipse_axes
    return ((x - c) / (ax * n)) ** 2 + ((y - c) / (ay * n)) ** 2 <= 1.0


def make_albedo(
    material: MaterialClass,
    tone: np.ndarray,
    rng: np.random.Generator,
    params: SynthParams = SynthParams(),
) -> np.ndarray:
    shape = (params.size, params.size)
    shared = _unit_noise(rng, shape, params.texture_sigma)
    per_channel = np.stack([_unit_noise(rng, shape, params.texture_sigma) for _ in range(3)], -1)
    a = params.chroma_share
    texture = np.sqrt(1 - a * a) * shared[..., None] + a * per_channel
    inside = _ellipse_mask(params)[..., None]
    albedo = tone + material.texture_amplitude * texture * inside
    return np.maximum(albedo, params.albedo_floor)


def illumination_schedule(rng: np.random.Generator, params: SynthParams = SynthParams()) -> np.ndarray:
    """Smooth linear-gradient fields whose direction and mean drift over time."""
    n, t = params.size, np.arange(params.frames)
    phase = rng.uniform(0, 2 * np.pi)
    theta0 = rng.uniform(0, 2 * np.pi)
    turn = rng.uniform(-np.pi / 2, np.pi / 2)
    mean = (
        params.light_mean
        + params.light_drift * np.sin(2 * np.pi * t / params.frames + phase)
        + params.light_jitter * rng.standard_normal(params.frames)
    )
    theta = theta0 + turn * t / max(params.frames - 1, 1)
    coords = (np.arange(n) - (n - 1) / 2) / (n - 1)
    y, x = np.meshgrid(coords, coords, indexing="ij")
    ramp = np.cos(theta)[:, None, None] * x + np.sin(theta)[:, None, None] * y
    light = mean[:, None, None] + params.light_slope * ramp
    return np.clip(light, *params.light_range)


def render(albedo: np.ndarray, light: np.ndarray, material: MaterialClass) -> np.ndarray:
    lobe = material.specular_gain * light**material.specular_exponent
    return albedo[None] * light[..., None] + lobe[..., None]


def gen_sequence(
    material: MaterialClass | str,
    seed,
    tone: np.ndarray | None = None,
    params: SynthParams = SynthParams(),
    subject_id: str = "",
    light: np.ndarray | None = None,
) -> tuple[FrameSequence, GroundTruth]:
    """Render one clip. ``seed`` is anything accepted by ``numpy.random.default_rng``.

    ``tone`` defaults to a tone drawn from the same stream; ``light`` overrides
    the illumination schedule (shape (frames, size, size)).
    """
    if isinstance(material, str):
        if material not in MATERIALS:
            raise InvalidArgumentError(f"unknown material class {material!r}")
        material = MATERIALS[material]
    if material.texture_amplitude < 0 or material.specular_gain < 0:
        raise InvalidArgumentError("material parameters must be non-negative")
    rng = np.random.default_rng(seed)
    if tone is None:
        tone = subject_tone(rng, params)
    albedo = make_albedo(material, np.asarray(tone, dtype=float), rng, params)
    if light is None:
        light = illumination_schedule(rng, params)
    rendered = render(albedo, light, material)
    clamped = float(np.mean((rendered < 0) | (rendered > 1)))
    if clamped > 0:
        log.debug("%s: %.4f%% of samples clamped", material.tag, 100 * clamped)
    seq = FrameSequence(np.clip(rendered, 0.0, 1.0), "RGB", subject_id, material.label)
    return seq, GroundTruth(albedo, light, rendered, material, clamped)


def gen_dataset(
    out_dir: str | os.PathLike,
    num_subjects: int = 6,
    videos_per_subject: int = 15,
    seed: int = 0,
    params: SynthParams = SynthParams(),
) -> DatasetManifest:
    """Write a synthetic dataset and its manifest under ``out_dir``.

    Each subject gets two thirds bona fide (skin_like) clips split over sessions
    1 and 2 and one third attack (mask_like) clips in session 3, all sharing a
    subject-specific base tone.
    """
    if num_subjects < 3:
        raise InvalidArgumentError(f"need at least 3 subjects, got {num_subjects}")
    if videos_per_subject < 2:
        raise InvalidArgumentError("need at least 2 videos per subject")
    out = Path(out_dir)
    bona = (2 * videos_per_subject) // 3
    entries = []
    for subj in range(num_subjects):
        sid = f"s{subj + 1:02d}"
        tone = subject_tone(np.random.default_rng([seed, subj]), params)
        for vid in range(videos_per_subject):
            if vid < bona:
                material, session = SKIN_LIKE, "1" if vid < (bona + 1) // 2 else "2"
            else:
                material, session = MASK_LIKE, "3"
            seq, _ = gen_sequence(material, [seed, subj, vid], tone, params, sid)
            rel = f"{sid}/v{vid + 1:02d}"
            try:
                save_sequence(seq, out / rel)
            except OSError as exc:
                raise InputError(f"cannot write {out / rel}: {exc}") from exc
            entries.append(ManifestEntry(sid, session, material.label, rel))
    manifest = DatasetManifest(tuple(entries), out)
    try:
        write_manifest(manifest, out / MANIFEST_NAME)
    except OSError as exc:
        raise InputError(f"cannot write {out / MANIFEST_NAME}: {exc}") from exc
    return manifest
