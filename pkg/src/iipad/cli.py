"""Command-line entry point: ``iipad {synth,featurize,train,eval,score}``.

Exit codes: 0 success, 2 usage or invalid configuration, 3 data problems
(missing/corrupt inputs, dimension mismatches), 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import InputError, InvalidArgumentError, TrainingDivergedError, DimensionError
from .ingest import read_manifest

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("iipad")


def _add_run_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (override --config)")
    g.add_argument("--config", type=Path, help="key=value configuration file")
    g.add_argument("--color-space", dest="color_space", choices=("RGB", "HSV", "YCbCr"))
    g.add_argument("--planes", help="comma separated subset of XY,XT,YT")
    g.add_argument("--no-intrinsic", dest="intrinsic", action="store_false", default=None,
                   help="histogram the converted frames directly")
    g.add_argument("--intrinsic", dest="intrinsic", action="store_true", default=None)
    g.add_argument("--normalization", choices=("probability", "counts"))
    g.add_argument("--hard-gate", dest="hard_gate", action="store_true", default=None,
                   help="hard band assignment instead of the logistic weight")
    g.add_argument("--feature-mode", dest="feature_mode", choices=("mean", "max"))
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", dest="batch_size", type=int)
    g.add_argument("--patience", type=int, help="0 disables early stopping")
    g.add_argument("--lr", dest="learning_rate", type=float)
    g.add_argument("--svm-c", dest="svm_c", type=float)
    g.add_argument("--tune-c", dest="tune_c", action="store_true", default=None)
    g.add_argument("--no-standardize", dest="standardize", action="store_false", default=None)
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int, help="parallel featurisation processes (0 = all cores)")


_RUN_KEYS = (
    "color_space", "planes", "intrinsic", "normalization", "hard_gate", "feature_mode",
    "epochs", "batch_size", "patience", "learning_rate", "svm_c", "tune_c", "standardize",
    "seed", "workers",
)


def _run_config(args):
    from .pipeline import RunConfig, read_config

    cfg = read_config(args.config) if args.config else RunConfig()
    overrides = {k: getattr(args, k) for k in _RUN_KEYS}
    return cfg.with_overrides(**overrides)


def _manifest(args):
    return read_manifest(args.manifest)


def _cache_root(args, manifest) -> Path:
    return args.cache if args.cache else Path(manifest.root) / ".iipad-cache"


def cmd_synth(args) -> int:
    from .synth import MANIFEST_NAME, gen_dataset

    manifest = gen_dataset(args.out, args.subjects, args.videos, args.seed)
    (Path(args.out) / "synth_config.txt").write_text(
        f"subjects={args.subjects}\nvideos={args.videos}\nseed={args.seed}\n", encoding="utf-8"
    )
    print(f"wrote {len(manifest.entries)} sequences; manifest {Path(args.out) / MANIFEST_NAME}")
    return EXIT_OK


def cmd_featurize(args) -> int:
    from .pipeline import FeatureCache, FeaturizeStats, featurize

    cfg = _run_config(args)
    manifest = _manifest(args)
    root = _cache_root(args, manifest)
    stats = FeaturizeStats()
    featurize(manifest, cfg, root, force=args.force, stats=stats)
    directory = FeatureCache(root, cfg).directory
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    print(f"cache {directory}: {stats.computed} computed, {stats.cached} cached")
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import featurize, fit_bundle, save_bundle, split_halves

    cfg = _run_config(args)
    manifest = _manifest(args)
    train_subj, dev_subj = split_halves(manifest.subjects)
    if not dev_subj:
        raise InvalidArgumentError("training needs at least 2 subjects")
    matrices = featurize(manifest, cfg, _cache_root(args, manifest))
    bundle, stats = fit_bundle(
        matrices, manifest.for_subjects(train_subj), manifest.for_subjects(dev_subj), cfg, cfg.seed
    )
    save_bundle(bundle, args.out)
    print(f"feature length {stats['feature_dim']}; dev EER {stats['dev_eer']:.4f}; "
          f"threshold {bundle.threshold!r}; bundle {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .eval import loocv
    from .pipeline import write_config_echo

    cfg = _run_config(args)
    manifest = _manifest(args)
    out = Path(args.out)
    ckpt = out / "checkpoints" if args.checkpoints else None
    report = loocv(manifest, cfg, _cache_root(args, manifest), ckpt)
    paths = report.write(out)
    write_config_echo(cfg, out)
    dims = sorted({f.feature_dim for f in report.folds})
    log.info("feature length %s", ",".join(map(str, dims)))
    print(report.table())
    print(f"feature length {','.join(map(str, dims))}")
    print(f"aggregate ACER {report.aggregate['acer']:.4f}  AUC {report.aggregate['auc']:.4f}")
    print(f"report {paths['keyvalue']}")
    return EXIT_OK


def cmd_score(args) -> int:
    from .pipeline import load_bundle, score_clip

    bundle = load_bundle(args.bundle)
    s = score_clip(bundle, args.clip)
    print(f"score={s!r}")
    print(f"threshold={bundle.threshold!r}")
    print(f"decision={bundle.decide(s)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iipad", description="Face-mask presentation attack detection")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--subjects", type=int, default=6)
    p.add_argument("--videos", type=int, default=15, help="clips per subject")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="compute and cache histogram matrices")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--cache", type=Path, help="cache root (default: <manifest dir>/.iipad-cache)")
    p.add_argument("--force", action="store_true", help="recompute even when cached")
    _add_run_options(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a model bundle on a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="bundle directory")
    p.add_argument("--cache", type=Path)
    _add_run_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="leave-one-subject-out evaluation")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="report directory")
    p.add_argument("--cache", type=Path)
    p.add_argument("--checkpoints", action="store_true", help="save every fold's model bundle")
    _add_run_options(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score one clip directory with a bundle")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--clip", type=Path, required=True)
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except InvalidArgumentError as exc:
        if isinstance(exc, DimensionError):
            print(f"iipad: dimension error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"iipad: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"iipad: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"iipad: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
