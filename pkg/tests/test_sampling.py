import numpy as np
import pytest

from vpaseg.sampling import catmull_rom_weights, sample_cubic, sample_linear, sample_nearest


def test_catmull_rom_weights_partition_of_unity(rng):
    t = rng.uniform(0, 1, 100)
    w = catmull_rom_weights(t)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(catmull_rom_weights(np.array([0.0]))[0], [0, 1, 0, 0], atol=1e-15)


def test_cubic_interpolates_grid_points(rng):
    a = rng.normal(size=(6, 6, 6))
    coords = np.stack(np.meshgrid(*[np.arange(6.0)] * 3, indexing="ij"), -1)
    np.testing.assert_allclose(sample_cubic(a, coords), a, atol=1e-12)


def test_cubic_reproduces_linear_ramp_inside():
    g = np.indices((8, 8, 8)).astype(np.float64)
    ramp = 0.5 * g[0] - 0.25 * g[1] + g[2]
    pts = np.array([[2.3, 3.7, 4.1], [3.5, 3.5, 3.5], [4.9, 2.2, 3.0]])
    expect = 0.5 * pts[:, 0] - 0.25 * pts[:, 1] + pts[:, 2]
    np.testing.assert_allclose(sample_cubic(ramp, pts), expect, atol=1e-12)


def test_linear_out_of_bounds_reads_zero():
    a = np.ones((4, 4, 4))
    assert sample_linear(a, np.array([[10.0, 0, 0]]))[0] == 0.0
    # halfway off the edge: one tap is outside
    assert sample_linear(a, np.array([[3.5, 1.0, 1.0]]))[0] == pytest.approx(0.5)


def test_nearest_rounds_half_up_and_fills():
    a = np.arange(27).reshape(3, 3, 3)
    assert sample_nearest(a, np.array([[0.5, 0.0, 0.0]]))[0] == a[1, 0, 0]
    assert sample_nearest(a, np.array([[0.49, 0.0, 0.0]]))[0] == a[0, 0, 0]
    assert sample_nearest(a, np.array([[-0.6, 0.0, 0.0]]), fill=99)[0] == 99
