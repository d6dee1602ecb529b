import hashlib
import subprocess
import sys

import numpy as np
import pytest

from iipad import cli
from iipad.errors import InvalidArgumentError
from iipad.ingest import DatasetManifest, read_manifest
from iipad.pipeline import RunConfig, featurize, read_config, sequence_matrices
from iipad.synth import gen_sequence

FAST = ["--no-intrinsic", "--epochs", "2", "--batch-size", "4", "--workers", "1"]


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth") / "d"
    assert cli.main(["synth", "--subjects", "3", "--videos", "3", "--seed", "7", "--out", str(root)]) == 0
    return root


@pytest.fixture(scope="module")
def bundle(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle") / "b"
    args = ["train", "--manifest", str(dataset / "manifest.tsv"), "--out", str(out)] + FAST
    assert cli.main(args) == 0
    return out


def test_config_file_parsing(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\ncolor_space = YCbCr\nplanes=XY-XT  # trailing\n\nintrinsic=false\nsvm_c=0.5\n")
    cfg = read_config(p)
    assert cfg.color_space == "YCbCr" and cfg.planes == ("XY", "XT")
    assert cfg.intrinsic is False and cfg.svm_c == 0.5 and cfg.epochs == 300
    echo = tmp_path / "echo.txt"
    echo.write_text(cfg.to_text())
    assert read_config(echo) == cfg
    p.write_text("colour=HSV\n")
    with pytest.raises(InvalidArgumentError):
        read_config(p)
    p.write_text("epochs=many\n")
    with pytest.raises(InvalidArgumentError):
        read_config(p)


def test_defaults_are_the_best_configuration():
    cfg = RunConfig()
    assert (cfg.color_space, cfg.planes, cfg.intrinsic) == ("HSV", ("XT", "YT"), True)
    assert (cfg.learning_rate, cfg.momentum, cfg.weight_decay) == (1e-3, 0.9, 5e-4)


def test_cache_key_tracks_feature_options():
    a = RunConfig()
    assert a.feature_key() == RunConfig(epochs=3, svm_c=9.0, planes="XY").feature_key()
    assert a.feature_key() != RunConfig(intrinsic=False).feature_key()
    assert a.feature_key() != RunConfig(color_space="RGB").feature_key()


def test_missing_out_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["synth", "--subjects", "3"])
    assert exc.value.code == 2
    done = subprocess.run([sys.executable, "-m", "iipad", "eval", "--manifest", "m.tsv"], capture_output=True)
    assert done.returncode == 2 and b"--out" in done.stderr


def test_synth_command(dataset, tmp_path):
    manifest = read_manifest(dataset / "manifest.tsv")
    assert len(manifest.entries) == 9
    again = tmp_path / "d"
    assert cli.main(["synth", "--subjects", "3", "--videos", "3", "--seed", "7", "--out", str(again)]) == 0
    assert tree_digest(again) == tree_digest(dataset)


def test_featurize_caches(dataset, tmp_path, capsys):
    args = ["featurize", "--manifest", str(dataset / "manifest.tsv"), "--cache", str(tmp_path)] + FAST
    assert cli.main(args) == 0
    assert "9 computed, 0 cached" in capsys.readouterr().out
    assert cli.main(args) == 0
    assert "0 computed, 9 cached" in capsys.readouterr().out
    assert cli.main(args + ["--force"]) == 0
    assert "9 computed, 0 cached" in capsys.readouterr().out


def test_corrupt_cache_is_a_data_error(dataset, tmp_path, capsys):
    args = ["featurize", "--manifest", str(dataset / "manifest.tsv"), "--cache", str(tmp_path)] + FAST
    assert cli.main(args) == 0
    victim = sorted((tmp_path).rglob("*.iihm"))[0]
    victim.write_bytes(b"JUNK" + victim.read_bytes()[4:])
    assert cli.main(args) == 3
    assert victim.name in capsys.readouterr().err


def test_intrinsic_changes_cached_matrices(dataset, tmp_path):
    manifest = read_manifest(dataset / "manifest.tsv")
    one = DatasetManifest(manifest.entries[:1], manifest.root)
    on = featurize(one, RunConfig(workers=1), tmp_path)
    off = featurize(one, RunConfig(intrinsic=False, workers=1), tmp_path)
    path = one.entries[0].path
    for plane in ("XY", "XT", "YT"):
        assert not np.array_equal(on[path][plane].values, off[path][plane].values)
    dirs = sorted(d.name for d in tmp_path.iterdir())
    assert len(dirs) == 2


def test_sequence_matrices_shapes():
    seq, _ = gen_sequence("skin_like", 0)
    mats = sequence_matrices(seq, RunConfig(intrinsic=False))
    assert {p: m.values.shape for p, m in mats.items()} == {p: (75, 768) for p in ("XY", "XT", "YT")}


def test_score_bona_fide_clip(bundle, tmp_path, capsys):
    # a fresh clip from the same subject tone, never seen in training
    from iipad.ingest import save_sequence
    from iipad.synth import subject_tone

    tone = subject_tone(np.random.default_rng([7, 0]))
    clip = tmp_path / "clip"
    save_sequence(gen_sequence("skin_like", [99, 1], tone=tone)[0], clip)
    assert cli.main(["score", "--bundle", str(bundle), "--clip", str(clip)]) == 0
    out = capsys.readouterr().out
    assert "decision=bona_fide" in out
    assert (bundle / "config.txt").exists()


def test_dimension_mismatch(bundle, dataset, tmp_path, capsys):
    broken = tmp_path / "b"
    broken.mkdir()
    for p in bundle.iterdir():
        (broken / p.name).write_bytes(p.read_bytes())
    text = (broken / "config.txt").read_text().replace("planes=XT,YT", "planes=XT")
    (broken / "config.txt").write_text(text)
    clip = dataset / "s01" / "v01"
    assert cli.main(["score", "--bundle", str(broken), "--clip", str(clip)]) == 3
    assert "dimension" in capsys.readouterr().err


def test_tampered_checkpoint_magic(bundle, dataset, tmp_path, capsys):
    broken = tmp_path / "b"
    broken.mkdir()
    for p in bundle.iterdir():
        (broken / p.name).write_bytes(p.read_bytes())
    raw = (broken / "cnn_XT.iinn").read_bytes()
    (broken / "cnn_XT.iinn").write_bytes(b"XXXX" + raw[4:])
    assert cli.main(["score", "--bundle", str(broken), "--clip", str(dataset / "s01" / "v01")]) == 3
    assert "cnn_XT.iinn" in capsys.readouterr().err


def test_eval_plane_choice_and_seed(dataset, tmp_path, capsys):
    m = str(dataset / "manifest.tsv")
    base = ["eval", "--manifest", m, "--cache", str(tmp_path / "cache")] + FAST
    assert cli.main(base + ["--out", str(tmp_path / "xy"), "--planes", "XY"]) == 0
    assert "feature length 768" in capsys.readouterr().out
    assert cli.main(base + ["--out", str(tmp_path / "xtyt"), "--planes", "XT,YT"]) == 0
    out = capsys.readouterr().out
    assert "feature length 1536" in out and "aggregate ACER" in out
    assert cli.main(base + ["--out", str(tmp_path / "again"), "--planes", "XT,YT"]) == 0
    assert cli.main(base + ["--out", str(tmp_path / "seed"), "--planes", "XT,YT", "--seed", "5"]) == 0
    same = [(tmp_path / d / "report.kv").read_bytes() for d in ("xtyt", "again", "seed")]
    assert same[0] == same[1] and same[0] != same[2]
    assert (tmp_path / "xtyt" / "config.txt").exists() and (tmp_path / "xtyt" / "report_roc.csv").exists()
