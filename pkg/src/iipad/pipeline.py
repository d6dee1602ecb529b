"""End-to-end wiring: configuration, cached featurisation, training and scoring.

Featurisation turns one clip into three histogram matrices::

    load first n frames -> resize -> colour conversion
        -> (optional) intrinsic decomposition, keep reflectance -> XY/XT/YT

and caches the matrices per clip under a directory named after a hash of every
option that influences them, so changing e.g. the colour space never reuses
stale matrices.
"""

from __future__ import annotations

import hashlib
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import cnn1d
from .classify import C_GRID, SvmModel, concat_features, load_model, parse_planes, save_model, train_svm
from .errors import FormatError, InputError, InvalidArgumentError
from .ingest import (
    COLOR_SPACES,
    DatasetManifest,
    ManifestEntry,
    convert_sequence,
    load_sequence,
    normalize_frames,
)
from .intrinsic.decompose import decompose_sequence
from .tophist import NORMALIZATIONS, PLANES, HistogramMatrix, build_planes, load_matrix, save_matrix

log = logging.getLogger(__name__)

CACHE_FORMAT = 1


# ---------------------------------------------------------------- config


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise InvalidArgumentError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    """Every option of a run. Defaults: HSV, planes XT+YT, intrinsic on."""

    color_space: str = "HSV"
    planes: tuple[str, ...] = ("XT", "YT")
    intrinsic: bool = True
    normalization: str = "probability"
    frames: int = 75
    size: int = 150
    scales: int = 3
    orientations: int = 4
    sharpness: float = 5.0
    hard_gate: bool = False
    feature_mode: str = "mean"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32
    epochs: int = 300
    patience: int = 3
    svm_c: float = 1.0
    tune_c: bool = False
    standardize: bool = True
    seed: int = 0
    workers: int = 0  # 0 = one per available core

    def __post_init__(self):
        if self.color_space not in COLOR_SPACES:
            raise InvalidArgumentError(f"unknown color space {self.color_space!r}")
        object.__setattr__(self, "planes", parse_planes(self.planes))
        if self.normalization not in NORMALIZATIONS:
            raise InvalidArgumentError(f"unknown normalization {self.normalization!r}")
        if self.feature_mode not in cnn1d.FEATURE_MODES:
            raise InvalidArgumentError(f"unknown feature mode {self.feature_mode!r}")
        if self.frames < 1 or self.size < 2 or self.scales < 1 or self.orientations < 1:
            raise InvalidArgumentError("frames, size, scales and orientations must be positive")
        if self.svm_c <= 0 or self.workers < 0:
            raise InvalidArgumentError("svm_c must be positive and workers non-negative")
        self.train_config()  # validates the optimiser fields

    def train_config(self, seed: int | None = None) -> cnn1d.TrainConfig:
        return cnn1d.TrainConfig(
            self.learning_rate,
            self.momentum,
            self.weight_decay,
            self.batch_size,
            self.epochs,
            self.seed if seed is None else seed,
            self.patience if self.patience > 0 else None,
        )

    def with_overrides(self, **overrides) -> "RunConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def resolved_workers(self) -> int:
        return self.workers or os.cpu_count() or 1

    def feature_key(self) -> str:
        """Hash of the options that determine cached histogram matrices."""
        parts = [
            f"format={CACHE_FORMAT}",
            f"color_space={self.color_space}",
            f"intrinsic={self.intrinsic}",
            f"normalization={self.normalization}",
            f"frames={self.frames}",
            f"size={self.size}",
        ]
        if self.intrinsic:
            parts += [
                f"scales={self.scales}",
                f"orientations={self.orientations}",
                f"sharpness={self.sharpness!r}",
                f"hard_gate={self.hard_gate}",
            ]
        return hashlib.sha1("\n".join(parts).encode()).hexdigest()[:16]

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: dict[str, str], base: "RunConfig | None" = None) -> "RunConfig":
        base = base or cls()
        types = {f.name: f.type for f in fields(cls)}
        parsed = {}
        for key, text in values.items():
            if key not in types:
                raise InvalidArgumentError(f"unknown config key {key!r}")
            current = getattr(base, key)
            try:
                if isinstance(current, bool):
                    parsed[key] = _parse_bool(text)
                elif isinstance(current, int):
                    parsed[key] = int(text)
                elif isinstance(current, float):
                    parsed[key] = float(text)
                elif isinstance(current, tuple):
                    parsed[key] = parse_planes(text)
                else:
                    parsed[key] = text.strip()
            except ValueError as exc:
                raise InvalidArgumentError(f"bad value for {key}: {text!r}") from exc
        return replace(base, **parsed)


def read_config(path: str | os.PathLike, base: RunConfig | None = None) -> RunConfig:
    """Parse a ``key=value`` file; blank lines and ``#`` comments are ignored."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return RunConfig.from_mapping(values, base)


def write_config_echo(cfg: RunConfig, directory: str | os.PathLike, name: str = "config.txt") -> Path:
    path = Path(directory) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(cfg.to_text(), encoding="utf-8")
    return path


# ---------------------------------------------------------------- features


def sequence_matrices(seq, cfg: RunConfig) -> dict[str, HistogramMatrix]:
    """All three plane matrices of an RGB sequence under ``cfg``."""
    seq = normalize_frames(seq, cfg.size)
    seq = convert_sequence(seq, cfg.color_space)
    if cfg.intrinsic:
        seq = decompose_sequence(
            seq,
            scales=cfg.scales,
            orientations=cfg.orientations,
            sharpness=cfg.sharpness,
            hard_gate=cfg.hard_gate,
        )
    return build_planes(seq, PLANES, cfg.normalization, n=cfg.frames, size=cfg.size)


def _cache_stem(entry: ManifestEntry) -> str:
    return entry.path.replace("\\", "/").strip("/").replace("/", "__")


@dataclass
class FeatureCache:
    root: Path
    cfg: RunConfig

    @property
    def directory(self) -> Path:
        return Path(self.root) / self.cfg.feature_key()

    def paths(self, entry: ManifestEntry) -> dict[str, Path]:
        stem = _cache_stem(entry)
        return {p: self.directory / f"{stem}.{p}.iihm" for p in PLANES}

    def load(self, entry: ManifestEntry) -> dict[str, HistogramMatrix] | None:
        paths = self.paths(entry)
        if not all(p.is_file() for p in paths.values()):
            return None
        return {p: load_matrix(path, self.cfg.normalization) for p, path in paths.items()}

    def store(self, entry: ManifestEntry, matrices: dict[str, HistogramMatrix]) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        echo = self.directory / "config.txt"
        if not echo.exists():
            echo.write_text(self.cfg.to_text(), encoding="utf-8")
        for plane, path in self.paths(entry).items():
            save_matrix(matrices[plane], path)


def _compute(args) -> dict[str, HistogramMatrix]:
    entry, root, cfg = args
    seq = load_sequence(entry, cfg.frames, root)
    return sequence_matrices(seq, cfg)


@dataclass
class FeaturizeStats:
    computed: int = 0
    cached: int = 0


def featurize(
    manifest: DatasetManifest,
    cfg: RunConfig,
    cache_root: str | os.PathLike | None = None,
    force: bool = False,
    stats: FeaturizeStats | None = None,
) -> dict[str, dict[str, HistogramMatrix]]:
    """Histogram matrices for every manifest entry, keyed by entry path.

    With ``cache_root`` matrices are read from / written to the cache; cached
    files with a bad header raise :class:`FormatError`.
    """
    stats = stats if stats is not None else FeaturizeStats()
    cache = FeatureCache(Path(cache_root), cfg) if cache_root is not None else None
    out: dict[str, dict[str, HistogramMatrix]] = {}
    todo: list[ManifestEntry] = []
    for entry in manifest.entries:
        hit = None if (cache is None or force) else cache.load(entry)
        if hit is not None:
            out[entry.path] = hit
            stats.cached += 1
        else:
            todo.append(entry)
    jobs = [(e, manifest.root, cfg) for e in todo]
    workers = min(cfg.resolved_workers(), max(len(jobs), 1))

    def collect(results):
        # store each clip as soon as it is done so an interrupted run keeps its work
        for entry, matrices in zip(todo, results):
            if cache is not None:
                cache.store(entry, matrices)
            out[entry.path] = matrices
            stats.computed += 1

    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            collect(pool.map(_compute, jobs))
    else:
        collect(map(_compute, jobs))
    log.info("featurize: %d computed, %d from cache", stats.computed, stats.cached)
    return out


# ---------------------------------------------------------------- training


def derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class ModelBundle:
    cfg: RunConfig
    networks: dict[str, cnn1d.Network]
    svm: SvmModel
    threshold: float
    meta: dict = field(default_factory=dict)

    def features(self, matrices: dict[str, HistogramMatrix]) -> np.ndarray:
        feats = [cnn1d.extract_feature(self.networks[p], matrices[p], self.cfg.feature_mode) for p in self.cfg.planes]
        return concat_features(feats, self.cfg.planes).values

    def score(self, matrices: dict[str, HistogramMatrix]) -> float:
        return float(self.svm.decision(self.features(matrices)))

    def decide(self, score: float) -> str:
        return "bona_fide" if score >= self.threshold else "attack"


def train_plane_network(
    plane: str,
    train: Sequence[tuple[HistogramMatrix, str]],
    dev: Sequence[tuple[HistogramMatrix, str]] | None,
    cfg: RunConfig,
    seed: int,
) -> cnn1d.TrainResult:
    net = cnn1d.init_network(derived_seed(seed, 0, PLANES.index(plane)), plane=plane)
    tc = cfg.train_config(derived_seed(seed, 1, PLANES.index(plane)))

    def report(r: cnn1d.EpochRecord):
        log.info(
            "plane %s epoch %d: train loss %.4f acc %.3f dev loss %s",
            plane,
            r.epoch,
            r.train_loss,
            r.train_accuracy,
            "-" if r.dev_loss is None else f"{r.dev_loss:.4f}",
        )

    return cnn1d.train(net, train, tc, dev=dev, on_epoch=report)


def fit_bundle(
    matrices: dict[str, dict[str, HistogramMatrix]],
    train_entries: Sequence[ManifestEntry],
    dev_entries: Sequence[ManifestEntry],
    cfg: RunConfig,
    seed: int,
) -> tuple[ModelBundle, dict]:
    """Train plane networks and the SVM on ``train_entries``; pick C (optionally)
    and the threshold on ``dev_entries``. Returns the bundle and dev statistics.
    """
    from .eval import ScoreSet, auc, eer

    networks = {}
    epochs = {}
    for plane in cfg.planes:
        train = [(matrices[e.path][plane], e.label) for e in train_entries]
        dev = [(matrices[e.path][plane], e.label) for e in dev_entries]
        result = train_plane_network(plane, train, dev, cfg, seed)
        networks[plane] = result.network
        epochs[plane] = result.best_epoch or len(result.history)

    probe = ModelBundle(cfg, networks, None, 0.0)  # type: ignore[arg-type]
    x_train = np.stack([probe.features(matrices[e.path]) for e in train_entries])
    x_dev = np.stack([probe.features(matrices[e.path]) for e in dev_entries])
    y_train = [e.label for e in train_entries]
    dev_labels = [e.label for e in dev_entries]

    grid = C_GRID if cfg.tune_c else (cfg.svm_c,)
    best = None
    for c in grid:
        svm = train_svm(x_train, y_train, c, cfg.standardize)
        dev_set = ScoreSet(svm.decision(x_dev), dev_labels)
        dev_eer, tau = eer(dev_set)
        if best is None or dev_eer < best[0]:
            best = (dev_eer, tau, svm, dev_set)
    dev_eer, tau, svm, dev_set = best
    bundle = ModelBundle(cfg, networks, svm, tau, {"epochs": epochs})
    return bundle, {"dev_eer": dev_eer, "dev_auc": auc(dev_set), "feature_dim": x_train.shape[1]}


def split_halves(subjects: Iterable[str]) -> tuple[list[str], list[str]]:
    """Sorted subjects dealt alternately into (first half, second half)."""
    ordered = sorted(subjects)
    return ordered[0::2], ordered[1::2]


# ---------------------------------------------------------------- bundles


def save_bundle(bundle: ModelBundle, directory: str | os.PathLike) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for plane, net in bundle.networks.items():
        cnn1d.save_network(net, directory / f"cnn_{plane}.iinn")
    save_model(bundle.svm, directory / "svm.iisv")
    write_config_echo(bundle.cfg, directory)
    (directory / "threshold.txt").write_text(f"threshold={bundle.threshold!r}\n", encoding="utf-8")


def load_bundle(directory: str | os.PathLike) -> ModelBundle:
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"model bundle not found: {directory}")
    cfg = read_config(directory / "config.txt")
    networks = {p: cnn1d.load_network(directory / f"cnn_{p}.iinn") for p in cfg.planes}
    for plane, net in networks.items():
        if net.plane != plane:
            raise FormatError(f"{directory / f'cnn_{plane}.iinn'}: holds plane {net.plane}")
    svm = load_model(directory / "svm.iisv")
    try:
        text = (directory / "threshold.txt").read_text(encoding="utf-8").strip()
        key, value = text.split("=", 1)
        if key != "threshold":
            raise ValueError(key)
        threshold = float(value)
    except (OSError, ValueError) as exc:
        raise FormatError(f"{directory / 'threshold.txt'}: unreadable threshold") from exc
    return ModelBundle(cfg, networks, svm, threshold)


def score_clip(bundle: ModelBundle, clip_dir: str | os.PathLike) -> float:
    entry = ManifestEntry("", "", "bona_fide", str(clip_dir))
    seq = load_sequence(entry, bundle.cfg.frames)
    return bundle.score(sequence_matrices(seq, bundle.cfg))
