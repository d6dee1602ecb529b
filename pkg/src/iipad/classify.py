"""Plane-feature concatenation and a linear SVM trained by dual coordinate descent.

The SVM minimises the L2-regularised hinge loss::

    P(w, b) = 0.5 * (|w|^2 + b^2) + C * sum_i max(0, 1 - y_i * (w . z_i + b))

over standardised features ``z``. The bias is the weight of an appended
constant-1 feature; like the other weights it is regularised, which keeps the
dual a box-constrained quadratic solvable one coordinate at a time.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cnn1d import PlaneFeature
from .errors import DimensionError, FormatError, InputError, InvalidArgumentError
from .tophist import PLANES

FEATURE_DIM = 768
DEFAULT_C = 1.0
C_GRID = (0.01, 0.1, 1.0, 10.0)
DEFAULT_TOLERANCE = 1e-6
MAX_PASSES = 10_000

MODEL_MAGIC = b"IISV"
MODEL_VERSION = 1
_MODEL_HEAD = struct.Struct("<4sHHI")  # magic, version, standardised flag, dims


def parse_planes(selection: str | Iterable[str]) -> tuple[str, ...]:
    """Normalise a plane selection to the fixed order XY, XT, YT.

    Accepts an iterable of tags or a string such as ``"XT,YT"`` or ``"XT-YT"``.
    """
    if isinstance(selection, str):
        selection = [p for p in selection.replace("-", ",").split(",") if p.strip()]
    chosen = {p.strip().upper() for p in selection}
    unknown = chosen - set(PLANES)
    if unknown or not chosen:
        raise InvalidArgumentError(f"invalid plane selection {sorted(chosen)}")
    return tuple(p for p in PLANES if p in chosen)


@dataclass(frozen=True)
class FeatureVector:
    planes: tuple[str, ...]
    values: np.ndarray


def concat_features(features: Sequence[PlaneFeature], selection) -> FeatureVector:
    """Concatenate the selected plane features in the order XY, XT, YT."""
    planes = parse_planes(selection)
    by_plane: dict[str, PlaneFeature] = {}
    for f in features:
        if f.plane in by_plane:
            raise InvalidArgumentError(f"duplicate feature for plane {f.plane}")
        by_plane[f.plane] = f
    missing = [p for p in planes if p not in by_plane]
    if missing:
        raise InvalidArgumentError(f"no feature supplied for planes {missing}")
    return FeatureVector(planes, np.concatenate([by_plane[p].values for p in planes]))


def _signs(labels) -> np.ndarray:
    out = []
    for y in labels:
        if isinstance(y, str):
            if y not in ("bona_fide", "attack"):
                raise InvalidArgumentError(f"unknown label {y!r}")
            out.append(1.0 if y == "bona_fide" else -1.0)
        elif y in (1, True):
            out.append(1.0)
        elif y in (-1, 0, False):
            out.append(-1.0)
        else:
            raise InvalidArgumentError(f"unknown label {y!r}")
    return np.array(out)


def _matrix(features) -> np.ndarray:
    rows = [f.values if isinstance(f, FeatureVector) else np.asarray(f, dtype=float) for f in features]
    if not rows:
        raise InvalidArgumentError("no training vectors")
    if any(r.shape != rows[0].shape or r.ndim != 1 for r in rows):
        raise DimensionError("feature vectors differ in length")
    x = np.stack(rows).astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("feature vectors contain non-finite values")
    return x


@dataclass(frozen=True)
class SvmModel:
    w: np.ndarray
    b: float
    C: float
    mean: np.ndarray
    scale: np.ndarray
    standardized: bool = True
    passes: int = 0
    gap: float = 0.0

    @property
    def dims(self) -> int:
        return self.w.size

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale

    def decision(self, x: np.ndarray) -> np.ndarray:
        """Scores for rows of ``x`` (raw feature space)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dims:
            raise DimensionError(f"model expects {self.dims} features, got {x.shape[-1]}")
        return self.standardize(x) @ self.w + self.b

    def negated(self) -> "SvmModel":
        return SvmModel(-self.w, -self.b, self.C, self.mean, self.scale, self.standardized)


def primal_objective(w: np.ndarray, b: float, z: np.ndarray, y: np.ndarray, C: float) -> float:
    margins = 1.0 - y * (z @ w + b)
    return 0.5 * (w @ w + b * b) + C * np.maximum(margins, 0.0).sum()


def fit_standardization(x: np.ndarray, enabled: bool = True) -> tuple[np.ndarray, np.ndarray]:
    if not enabled:
        return np.zeros(x.shape[1]), np.ones(x.shape[1])
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale <= 0] = 1.0
    return mean, scale


def dual_coordinate_descent(
    z: np.ndarray,
    y: np.ndarray,
    C: float,
    tol: float = DEFAULT_TOLERANCE,
    max_passes: int = MAX_PASSES,
) -> tuple[np.ndarray, float, int, float]:
    """Solve the bias-augmented hinge SVM; returns (w, b, passes, duality gap).

    Coordinates are visited in index order every pass, so results are
    deterministic. Stops when the primal-dual gap is at most ``tol``.
    """
    n, d = z.shape
    xa = np.hstack([z, np.ones((n, 1))])
    q = np.einsum("ij,ij->i", xa, xa)
    alpha = np.zeros(n)
    w = np.zeros(d + 1)
    gap = np.inf
    passes = 0
    for passes in range(1, max_passes + 1):
        for i in range(n):
            g = y[i] * (w @ xa[i]) - 1.0
            new = min(max(alpha[i] - g / q[i], 0.0), C)
            delta = new - alpha[i]
            if delta != 0.0:
                alpha[i] = new
                w += delta * y[i] * xa[i]
        dual = alpha.sum() - 0.5 * (w @ w)
        primal = primal_objective(w[:d], w[d], z, y, C)
        gap = primal - dual
        if gap <= tol:
            break
    return w[:d].copy(), float(w[d]), passes, float(gap)


def train_svm(
    features,
    labels,
    C: float = DEFAULT_C,
    standardize: bool = True,
    tol: float = DEFAULT_TOLERANCE,
    max_passes: int = MAX_PASSES,
) -> SvmModel:
    """Fit a linear SVM; ``labels`` are ``bona_fide``/``attack`` or +1/-1."""
    if not C > 0:
        raise InvalidArgumentError(f"C must be positive, got {C}")
    x = _matrix(features)
    y = _signs(labels)
    if y.size != x.shape[0]:
        raise InvalidArgumentError("features and labels differ in count")
    if len(set(y)) < 2:
        raise InvalidArgumentError("training set must contain both classes")
    mean, scale = fit_standardization(x, standardize)
    z = (x - mean) / scale
    w, b, passes, gap = dual_coordinate_descent(z, y, C, tol, max_passes)
    return SvmModel(w, b, float(C), mean, scale, standardize, passes, gap)


def score(model: SvmModel, x) -> float:
    """Signed decision value ``w . standardize(x) + b``; higher means bona fide."""
    values = x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=np.float64)
    if values.ndim != 1:
        raise DimensionError("score expects a single feature vector")
    return float(model.decision(values))


def save_model(model: SvmModel, path: str | os.PathLike) -> None:
    """Layout: header ``<4sHHI>`` (magic ``IISV``, version, standardised flag,
    dims) followed by little-endian float64 mean[dims], scale[dims], w[dims],
    b and C.
    """
    head = _MODEL_HEAD.pack(MODEL_MAGIC, MODEL_VERSION, int(model.standardized), model.dims)
    body = np.concatenate([model.mean, model.scale, model.w, [model.b, model.C]]).astype("<f8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(head + body.tobytes())
    os.replace(tmp, path)


def load_model(path: str | os.PathLike) -> SvmModel:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read SVM model {path}: {exc}") from exc
    if len(data) < _MODEL_HEAD.size:
        raise FormatError(f"{path}: truncated SVM model header")
    magic, version, flag, dims = _MODEL_HEAD.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise FormatError(f"{path}: bad SVM model magic {magic!r}")
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported SVM model version {version}")
    if len(data) != _MODEL_HEAD.size + 8 * (3 * dims + 2):
        raise FormatError(f"{path}: SVM model size does not match header")
    v = np.frombuffer(data, "<f8", offset=_MODEL_HEAD.size).astype(np.float64)
    mean, scale, w = v[:dims], v[dims : 2 * dims], v[2 * dims : 3 * dims]
    if np.any(scale <= 0):
        raise FormatError(f"{path}: non-positive standardisation scale")
    return SvmModel(w.copy(), float(v[-2]), float(v[-1]), mean.copy(), scale.copy(), bool(flag))
