import itertools

import numpy as np
import pytest

from vpaseg.volume import (
    DegenerateVolumeError,
    ErrorSplit,
    LabelVolume,
    Volume,
    dice,
    mse_split,
    normalize_max_one,
    one_hot,
    resample,
)


def test_volume_validates_spacing_and_freezes_data():
    v = Volume(np.zeros((2, 3, 4)), (1.0, 2.0, 0.5))
    assert v.dims == (2, 3, 4)
    assert v.data.dtype == np.float32
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1.0
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))


def test_label_volume_rejects_values_above_k():
    LabelVolume(np.full((2, 2, 2), 5))
    with pytest.raises(ValueError):
        LabelVolume(np.full((2, 2, 2), 6))


def test_normalize_linear_scaling():
    out = normalize_max_one(np.array([0.0, 2.0, 4.0]).reshape(1, 1, 3))
    np.testing.assert_array_equal(out.ravel(), [0.0, 0.5, 1.0])


def test_normalize_already_unit_max_is_identity():
    v = Volume(np.array([0.25, 1.0, 0.5]).reshape(3, 1, 1), (1.0, 1.0, 2.0))
    out = normalize_max_one(v)
    np.testing.assert_array_equal(out.data, v.data)
    assert out.spacing == v.spacing


def test_normalize_random_preserves_ratios(rng):
    x = rng.uniform(0.1, 7.0, (8, 8, 8)).astype(np.float32)
    out = normalize_max_one(x)
    assert out.max() == 1.0
    oracle = x.astype(np.float64) / x.astype(np.float64).max()
    np.testing.assert_allclose(out, oracle, rtol=1e-6)
    i, j = (1, 2, 3), (7, 0, 5)
    assert out[i] / out[j] == pytest.approx(x[i] / x[j], rel=1e-6)


def test_normalize_idempotent(rng):
    once = normalize_max_one(rng.uniform(0, 3, (5, 5, 5)))
    np.testing.assert_array_equal(normalize_max_one(once), once)


@pytest.mark.parametrize("bad", [np.zeros((2, 2, 2)), np.full((2, 2, 2), -1.0), np.array([[[1.0, np.nan]]])])
def test_normalize_degenerate(bad):
    with pytest.raises(DegenerateVolumeError, match="degenerate volume"):
        normalize_max_one(bad)


@pytest.mark.parametrize("method", ["cubic_spline", "linear", "nearest"])
def test_resample_identity_is_bitwise(method, rng):
    v = Volume(rng.uniform(0, 1, (5, 6, 7)), (1.0, 1.5, 2.0))
    out = resample(v, v.dims, v.spacing, method)
    assert out.data.tobytes() == v.data.tobytes()


@pytest.mark.parametrize("method", ["cubic_spline", "linear", "nearest"])
def test_resample_constant_field_interior(method):
    v = Volume(np.full((8, 8, 8), 0.7), (1.0, 1.0, 1.0))
    out = resample(v, (11, 13, 9), (0.6, 0.5, 0.8), method)
    # interior: every tap of the kernel lies inside the source
    inner = out.data[3:-4, 3:-4, 3:-4]
    np.testing.assert_allclose(inner, 0.7, rtol=1e-6)


def _trilinear_oracle(src, x, y, z):
    x0, y0, z0 = int(np.floor(x)), int(np.floor(y)), int(np.floor(z))
    total = 0.0
    for dx, dy, dz in itertools.product((0, 1), repeat=3):
        xi, yi, zi = x0 + dx, y0 + dy, z0 + dz
        w = (1 - abs(x - xi)) * (1 - abs(y - yi)) * (1 - abs(z - zi))
        inside = all(0 <= a < n for a, n in zip((xi, yi, zi), src.shape))
        total += w * (src[xi, yi, zi] if inside else 0.0)
    return total


def test_resample_linear_upsample_matches_trilinear_oracle():
    g = np.indices((4, 4, 4)).astype(np.float64)
    ramp = 0.1 * g[0] + 0.2 * g[1] + 0.05 * g[2]
    out = resample(Volume(ramp, (1.0, 1.0, 1.0)), (8, 8, 8), (0.5, 0.5, 0.5), "linear").data
    for i, j, k in itertools.product(range(8), repeat=3):
        expect = _trilinear_oracle(ramp, i / 2, j / 2, k / 2)
        assert out[i, j, k] == pytest.approx(expect, abs=1e-5)


def test_resample_nearest_exact_at_grid_points(rng):
    lab = LabelVolume(rng.integers(0, 6, (6, 6, 6)))
    out = resample(lab, (12, 12, 12), (0.5, 0.5, 0.5), "nearest")
    np.testing.assert_array_equal(out.labels[::2, ::2, ::2], lab.labels)


def test_one_hot_background_is_zero_vector():
    oh = one_hot(np.array([[[0, 3]]]), 5)
    np.testing.assert_array_equal(oh[0, 0, 0], np.zeros(5))
    np.testing.assert_array_equal(oh[0, 0, 1], [0, 0, 1, 0, 0])
    with pytest.raises(ValueError):
        one_hot(np.array([[[6]]]), 5)


def test_mse_split_perfect_prediction():
    lab = np.array([0, 1, 2, 5]).reshape(1, 2, 2)
    split = mse_split(one_hot(lab, 5, np.float64), lab)
    assert (split.foreground_mse, split.background_mse, split.total_mse) == (0.0, 0.0, 0.0)


def test_mse_split_zero_output_gives_one_over_k():
    lab = np.zeros((4, 4, 4), np.uint8)
    lab[1:3, 1:3, 1:3] = 2
    split = mse_split(np.zeros((4, 4, 4, 5)), lab)
    assert split.foreground_mse == pytest.approx(1 / 5)
    assert split.background_mse == 0.0


def test_mse_split_matches_double_loop_oracle(rng):
    k = 4
    lab = rng.integers(0, k + 1, (6, 6, 6))
    out = rng.normal(size=(6, 6, 6, k))
    fg_sum = bg_sum = 0.0
    n_fg = n_bg = 0
    for idx in itertools.product(range(6), repeat=3):
        err = 0.0
        for c in range(k):
            t = 1.0 if lab[idx] == c + 1 else 0.0
            err += (out[idx][c] - t) ** 2
        err /= k
        if lab[idx]:
            fg_sum += err
            n_fg += 1
        else:
            bg_sum += err
            n_bg += 1
    split = mse_split(out, lab)
    assert split.foreground_mse == pytest.approx(fg_sum / n_fg, abs=1e-7)
    assert split.background_mse == pytest.approx(bg_sum / n_bg, abs=1e-7)
    assert split.total_mse == pytest.approx((fg_sum + bg_sum) / (n_fg + n_bg), abs=1e-7)
    assert split.recombined() == pytest.approx(split.total_mse, rel=1e-6)


def test_mse_split_absent_component_is_none():
    lab = np.ones((2, 2, 2), np.uint8)
    split = mse_split(np.zeros((2, 2, 2, 5)), lab)
    assert split.background_mse is None
    assert split.foreground_mse is not None
    assert isinstance(split, ErrorSplit)


def test_mse_split_total_invariant_under_voxel_permutation(rng):
    lab = rng.integers(0, 6, (4, 4, 4))
    out = rng.normal(size=(4, 4, 4, 5))
    perm = rng.permutation(64)
    a = mse_split(out, lab).total_mse
    b = mse_split(out.reshape(64, 5)[perm].reshape(4, 4, 4, 5), lab.reshape(64)[perm].reshape(4, 4, 4)).total_mse
    assert a == pytest.approx(b, rel=1e-12)


def test_dice_edge_cases():
    a = np.zeros((3, 3, 3), bool)
    assert dice(a, a) == 1.0
    b = a.copy()
    b[0, 0, 0] = True
    assert dice(a, b) == 0.0
    assert dice(b, b) == 1.0
