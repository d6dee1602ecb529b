import math

import numpy as np
import pytest

from iipad.errors import FormatError, InvalidArgumentError
from iipad.ingest import FrameSequence
from iipad.tophist import (
    HistogramMatrix,
    build_planes,
    build_xt,
    build_xy,
    build_yt,
    histogram_256,
    load_matrix,
    save_matrix,
)


def brute_hist(values):
    h = [0] * 256
    for v in np.ravel(values).tolist():
        b = math.floor(v * 255 + 0.5)
        h[min(max(b, 0), 255)] += 1
    return np.array(h, dtype=float)


def brute_plane(px, plane):
    n, H, W, _ = px.shape
    rows = []
    if plane == "XY":
        slices = [px[t] for t in range(n)]
    elif plane == "XT":
        slices = [px[:, y] for y in range(0, H, 2)]
    else:
        slices = [px[:, :, x] for x in range(0, W, 2)]
    for sl in slices:
        rows.append(np.concatenate([brute_hist(sl[..., c]) for c in range(3)]))
    return np.array(rows)


def random_seq(seed):
    rng = np.random.default_rng(seed)
    # mix uniform values with exact bin edges to exercise the rounding rule
    px = rng.random((75, 150, 150, 3))
    edges = (np.arange(256) + 0.5) / 255
    mask = rng.random(px.shape) < 0.05
    px[mask] = np.clip(rng.choice(edges, mask.sum()), 0, 1)
    return FrameSequence(px)


def test_histogram_single_bin_mass():
    h = histogram_256(np.zeros((150, 150)))
    assert h[0] == 22500 and h[1:].sum() == 0
    h = histogram_256(np.ones((150, 150)))
    assert h[255] == 22500 and h[:255].sum() == 0


def test_histogram_matches_brute_force():
    x = np.random.default_rng(0).random((40, 30))
    np.testing.assert_array_equal(histogram_256(x), brute_hist(x))


def test_histogram_rejects_out_of_range():
    with pytest.raises(InvalidArgumentError):
        histogram_256(np.array([[0.5, 1.01]]))
    with pytest.raises(InvalidArgumentError):
        histogram_256(np.array([[-1e-9]]))


@pytest.mark.parametrize("seed", [0])
@pytest.mark.parametrize("builder,plane", [(build_xy, "XY"), (build_xt, "XT"), (build_yt, "YT")])
def test_planes_match_brute_force(seed, builder, plane):
    seq = random_seq(seed)
    h = builder(seq, "counts")
    assert h.shape == (75, 768)
    np.testing.assert_array_equal(h.values, brute_plane(seq.pixels, plane))


def test_constant_half_frames_land_in_bin_128():
    seq = FrameSequence(np.full((75, 150, 150, 3), 0.5))
    h = build_xy(seq, "counts").values
    assert np.all(h == h[0])
    for c in range(3):
        assert h[0, c * 256 + 128] == 22500


def test_xy_rows_follow_frames():
    seq = random_seq(3)
    perm = np.random.default_rng(0).permutation(75)
    a = build_xy(seq, "counts").values
    b = build_xy(seq.with_pixels(seq.pixels[perm]), "counts").values
    np.testing.assert_array_equal(b, a[perm])
    px = seq.pixels.copy()
    px[5] = 0.0
    c = build_xy(seq.with_pixels(px), "counts").values
    np.testing.assert_array_equal(np.delete(c, 5, 0), np.delete(a, 5, 0))


def test_temporally_constant_sequence():
    frame = np.random.default_rng(4).random((150, 150, 3))
    seq = FrameSequence(np.repeat(frame[None], 75, 0))
    xt = build_xt(seq, "counts").values
    for s in (0, 10, 74):
        single = np.concatenate([brute_hist(frame[2 * s, :, c]) for c in range(3)])
        np.testing.assert_array_equal(xt[s], 75 * single)


def test_time_ramp_gives_uniform_xt_histograms():
    levels = np.arange(75) / 74
    seq = FrameSequence(np.broadcast_to(levels[:, None, None, None], (75, 150, 150, 3)).copy())
    xt = build_xt(seq, "counts").values
    bins = np.floor(levels * 255 + 0.5).astype(int)
    assert len(set(bins)) == 75
    expected = np.zeros(256)
    expected[bins] = 150
    for c in range(3):
        np.testing.assert_array_equal(xt[:, c * 256 : (c + 1) * 256], np.tile(expected, (75, 1)))


def test_mass_conservation_and_probability_mode():
    seq = random_seq(5)
    for builder, pixels in ((build_xy, 22500), (build_xt, 11250), (build_yt, 11250)):
        counts = builder(seq, "counts").values
        assert np.all(counts.sum(1) == 3 * pixels)
        prob = builder(seq, "probability").values
        np.testing.assert_array_equal(prob, counts / pixels)
        np.testing.assert_allclose(prob.reshape(75, 3, 256).sum(-1), 1.0, atol=1e-9)
        assert prob.min() >= 0


def test_small_perturbations_move_each_pixel_at_most_one_bin():
    seq = random_seq(6)
    rng = np.random.default_rng(7)
    shifted = np.clip(seq.pixels + rng.uniform(-1 / 513, 1 / 513, seq.pixels.shape), 0, 1)
    a = build_xy(seq, "counts").values
    b = build_xy(seq.with_pixels(shifted), "counts").values
    assert np.all(np.abs(a - b).sum(1) <= 2 * 3 * 22500)


def test_wrong_shape_rejected():
    with pytest.raises(InvalidArgumentError):
        build_xy(FrameSequence(np.zeros((74, 150, 150, 3))))
    with pytest.raises(InvalidArgumentError):
        build_xt(FrameSequence(np.zeros((75, 100, 150, 3))))


def test_cache_round_trip_and_corruption(tmp_path):
    h = build_planes(random_seq(8), ("YT",))["YT"]
    save_matrix(h, tmp_path / "a.iihm")
    raw = (tmp_path / "a.iihm").read_bytes()
    assert raw[:4] == b"IIHM" and len(raw) == 16 + 4 * 75 * 768
    back = load_matrix(tmp_path / "a.iihm")
    assert back.plane == "YT"
    np.testing.assert_array_equal(back.values, h.values.astype(np.float32))
    (tmp_path / "b.iihm").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        load_matrix(tmp_path / "b.iihm")
    (tmp_path / "c.iihm").write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        load_matrix(tmp_path / "c.iihm")


def test_matrix_validation():
    with pytest.raises(InvalidArgumentError):
        HistogramMatrix("XZ", np.zeros((75, 768)))
    with pytest.raises(InvalidArgumentError):
        HistogramMatrix("XY", np.zeros((75, 767)))
