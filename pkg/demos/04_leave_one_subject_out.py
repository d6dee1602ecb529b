"""The evaluation protocol on a small synthetic dataset, through the CLI.

Run:  python3 demos/04_leave_one_subject_out.py [--out DIR] [--subjects 3] [--videos 6]

Story: each subject in turn is held out for testing; the remaining subjects
are split into a training half (CNNs and SVM) and a development half (the
equal-error-rate threshold). The held-out subject is then scored at that
threshold. The same commands work on any dataset with a manifest.
"""

import argparse
import tempfile
from pathlib import Path

from iipad import cli


def run(argv):
    print("$ iipad " + " ".join(argv))
    code = cli.main(argv)
    if code != 0:
        raise SystemExit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path(tempfile.mkdtemp(prefix="iipad-loso-")))
    parser.add_argument("--subjects", type=int, default=3)
    parser.add_argument("--videos", type=int, default=6)
    parser.add_argument("--epochs", type=int, default=2)
    args = parser.parse_args()

    data = args.out / "data"
    manifest = data / "manifest.tsv"
    run(["synth", "--out", str(data), "--subjects", str(args.subjects), "--videos", str(args.videos), "--seed", "3"])
    print(manifest.read_text().splitlines()[0], "...", f"{len(manifest.read_text().splitlines()) - 1} clips")

    # intrinsic features are computed once and cached beside the manifest
    run(["featurize", "--manifest", str(manifest)])
    run(["eval", "--manifest", str(manifest), "--out", str(args.out / "report"), "--epochs", str(args.epochs),
         "--checkpoints"])
    run(["eval", "--manifest", str(manifest), "--out", str(args.out / "report_no_intrinsic"),
         "--epochs", str(args.epochs), "--no-intrinsic"])

    bundle = next((args.out / "report" / "checkpoints").iterdir())
    run(["score", "--bundle", str(bundle), "--clip", str(data / "s01" / "v01")])
    print(f"\nreports: {args.out / 'report'} and {args.out / 'report_no_intrinsic'}")


if __name__ == "__main__":
    main()
