"""ISO/IEC 30107-3 style metrics and the leave-one-subject-out protocol.

Scores are oriented so that bona fide presentations score high. At threshold
``tau`` an attack is accepted (an APCER error) when ``score >= tau`` and a bona
fide presentation is rejected (a BPCER error) when ``score < tau``.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidArgumentError
from .ingest import LABELS, DatasetManifest

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoreSet:
    scores: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).ravel()
        labels = tuple(self.labels)
        if s.size == 0:
            raise InvalidArgumentError("empty score set")
        if s.size != len(labels):
            raise InvalidArgumentError("scores and labels differ in count")
        if not np.all(np.isfinite(s)):
            raise InvalidArgumentError("scores must be finite")
        if any(l not in LABELS for l in labels):
            raise InvalidArgumentError("labels must be bona_fide or attack")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", labels)

    @property
    def is_bona(self) -> np.ndarray:
        return np.array([l == "bona_fide" for l in self.labels])

    def split(self) -> tuple[np.ndarray, np.ndarray]:
        """(bona fide scores, attack scores); both must be non-empty."""
        mask = self.is_bona
        bona, attack = self.scores[mask], self.scores[~mask]
        if bona.size == 0 or attack.size == 0:
            raise InvalidArgumentError("score set needs both bona fide and attack samples")
        return bona, attack

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, str]]) -> "ScoreSet":
        return cls(np.array([p[0] for p in pairs], dtype=float), tuple(p[1] for p in pairs))


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """-inf, the midpoints between consecutive distinct scores, +inf."""
    u = np.unique(scores)
    return np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2, [np.inf]])


def error_rates(s: ScoreSet, thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(FAR, FRR) at each threshold: attacks with score >= tau, bona fide with score < tau."""
    bona, attack = s.split()
    bona, attack = np.sort(bona), np.sort(attack)
    far = (attack.size - np.searchsorted(attack, thresholds, side="left")) / attack.size
    frr = np.searchsorted(bona, thresholds, side="left") / bona.size
    return far, frr


def eer(s: ScoreSet) -> tuple[float, float]:
    """(EER, threshold) minimising |FAR - FRR|; exact ties go to the smaller threshold."""
    taus = candidate_thresholds(s.scores)
    far, frr = error_rates(s, taus)
    gap = np.abs(far - frr)
    i = int(np.flatnonzero(gap == gap.min())[0])  # taus ascend, so first = smallest
    return float((far[i] + frr[i]) / 2), float(taus[i])


def auc(s: ScoreSet) -> float:
    """P(bona fide score > attack score) with ties counted as one half."""
    bona, attack = s.split()
    ranks = rankdata(np.concatenate([bona, attack]))
    nb, na = bona.size, attack.size
    u = ranks[:nb].sum() - nb * (nb + 1) / 2
    return float(u / (nb * na))


def apcer_bpcer(s: ScoreSet, tau: float) -> tuple[float, float, float]:
    """(APCER, BPCER, ACER) at threshold ``tau``."""
    bona, attack = s.split()
    apcer = float(np.count_nonzero(attack >= tau) / attack.size)
    bpcer = float(np.count_nonzero(bona < tau) / bona.size)
    return apcer, bpcer, (apcer + bpcer) / 2


def roc_points(s: ScoreSet) -> list[tuple[float, float, float]]:
    taus = candidate_thresholds(s.scores)
    far, frr = error_rates(s, taus)
    return list(zip(taus.tolist(), far.tolist(), frr.tolist()))


# ---------------------------------------------------------------- protocol


@dataclass
class FoldRecord:
    test_subject: str
    train_subjects: tuple[str, ...]
    dev_subjects: tuple[str, ...]
    dev_eer: float
    dev_auc: float
    threshold: float
    apcer: float
    bpcer: float
    acer: float
    eer: float
    auc: float
    feature_dim: int
    test_scores: ScoreSet | None = field(default=None, repr=False)


METRICS = ("apcer", "bpcer", "acer", "eer", "auc", "dev_eer", "dev_auc")


@dataclass
class EvalReport:
    folds: list[FoldRecord]

    @property
    def aggregate(self) -> dict[str, float]:
        return {m: float(np.mean([getattr(f, m) for f in self.folds])) for m in METRICS}

    def table(self) -> str:
        head = f"{'test':>8} {'train':>5} {'dev':>4} {'tau':>10} {'APCER':>7} {'BPCER':>7} {'ACER':>7} {'EER':>7} {'AUC':>7}"
        lines = [head, "-" * len(head)]
        for f in self.folds:
            lines.append(
                f"{f.test_subject:>8} {len(f.train_subjects):>5} {len(f.dev_subjects):>4} "
                f"{f.threshold:>10.4g} {f.apcer:>7.4f} {f.bpcer:>7.4f} {f.acer:>7.4f} {f.eer:>7.4f} {f.auc:>7.4f}"
            )
        agg = self.aggregate
        lines.append("-" * len(head))
        lines.append(
            f"{'mean':>8} {'':>5} {'':>4} {'':>10} {agg['apcer']:>7.4f} {agg['bpcer']:>7.4f} "
            f"{agg['acer']:>7.4f} {agg['eer']:>7.4f} {agg['auc']:>7.4f}"
        )
        return "\n".join(lines)

    def to_keyvalue(self) -> str:
        """``fold.<i>.<field>=<value>`` lines then ``aggregate.<metric>=<value>``.

        Subject lists are comma separated; floats use ``repr`` so files are
        reproducible byte for byte.
        """
        lines = [f"folds={len(self.folds)}"]
        for i, f in enumerate(self.folds):
            for fd in fields(FoldRecord):
                if fd.name == "test_scores":
                    continue
                v = getattr(f, fd.name)
                if isinstance(v, tuple):
                    v = ",".join(v)
                elif isinstance(v, float):
                    v = repr(v)
                lines.append(f"fold.{i}.{fd.name}={v}")
        for k, v in self.aggregate.items():
            lines.append(f"aggregate.{k}={v!r}")
        return "\n".join(lines) + "\n"

    def roc_csv(self) -> str:
        rows = ["fold,test_subject,threshold,far,frr"]
        for i, f in enumerate(self.folds):
            if f.test_scores is None:
                continue
            try:
                points = roc_points(f.test_scores)
            except InvalidArgumentError:
                continue
            rows += [f"{i},{f.test_subject},{t!r},{a!r},{r!r}" for t, a, r in points]
        return "\n".join(rows) + "\n"

    def write(self, directory: str | os.PathLike, stem: str = "report") -> dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "table": directory / f"{stem}.txt",
            "keyvalue": directory / f"{stem}.kv",
            "roc": directory / f"{stem}_roc.csv",
        }
        paths["table"].write_text(self.table() + "\n", encoding="utf-8")
        paths["keyvalue"].write_text(self.to_keyvalue(), encoding="utf-8")
        paths["roc"].write_text(self.roc_csv(), encoding="utf-8")
        return paths


def fold_splits(subjects: Sequence[str]) -> list[tuple[str, list[str], list[str]]]:
    """(test, train, dev) per subject; the rest are sorted and dealt alternately."""
    from .pipeline import split_halves

    ordered = sorted(set(subjects))
    if len(ordered) < 3:
        raise InvalidArgumentError(f"LOOCV needs at least 3 subjects, got {len(ordered)}")
    out = []
    for test in ordered:
        train, dev = split_halves(s for s in ordered if s != test)
        out.append((test, train, dev))
    return out


def _metric(fn, s: ScoreSet, default: float = float("nan")):
    try:
        return fn(s)
    except InvalidArgumentError:
        return default


def loocv(
    manifest: DatasetManifest,
    cfg,
    cache_root: str | os.PathLike | None = None,
    checkpoint_dir: str | os.PathLike | None = None,
    matrices: dict | None = None,
) -> EvalReport:
    """Leave one subject out: train on one half of the others, tune on the other.

    Test EER/AUC are NaN for a test subject that has only one class.
    ``checkpoint_dir`` receives one model bundle per fold.
    """
    from .pipeline import featurize, fit_bundle

    splits = fold_splits(manifest.subjects)
    if matrices is None:
        matrices = featurize(manifest, cfg, cache_root)
    folds = []
    for index, (test, train_subj, dev_subj) in enumerate(splits):
        train_entries = manifest.for_subjects(train_subj)
        dev_entries = manifest.for_subjects(dev_subj)
        test_entries = manifest.for_subjects([test])
        bundle, dev_stats = fit_bundle(matrices, train_entries, dev_entries, cfg, seed=_fold_seed(cfg.seed, index))
        if checkpoint_dir is not None:
            from .pipeline import save_bundle

            save_bundle(bundle, Path(checkpoint_dir) / f"fold_{index:02d}_{test}")
        test_set = ScoreSet(
            np.array([bundle.score(matrices[e.path]) for e in test_entries]),
            tuple(e.label for e in test_entries),
        )
        mask = test_set.is_bona
        apcer = float(np.mean(test_set.scores[~mask] >= bundle.threshold)) if (~mask).any() else 0.0
        bpcer = float(np.mean(test_set.scores[mask] < bundle.threshold)) if mask.any() else 0.0
        record = FoldRecord(
            test,
            tuple(train_subj),
            tuple(dev_subj),
            float(dev_stats["dev_eer"]),
            float(dev_stats["dev_auc"]),
            float(bundle.threshold),
            apcer,
            bpcer,
            (apcer + bpcer) / 2,
            float(_metric(lambda s: eer(s)[0], test_set)),
            float(_metric(auc, test_set)),
            int(dev_stats["feature_dim"]),
            test_set,
        )
        log.info(
            "fold %d (test %s): APCER %.4f BPCER %.4f ACER %.4f AUC %.4f",
            index, test, record.apcer, record.bpcer, record.acer, record.auc,
        )
        folds.append(record)
    return EvalReport(folds)


def _fold_seed(seed: int, index: int) -> int:
    from .pipeline import derived_seed

    return derived_seed(seed, 1000 + index)
