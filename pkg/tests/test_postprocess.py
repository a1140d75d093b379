from collections import deque

import numpy as np
import pytest

from vpaseg.postprocess import NoBrainFoundError, build_mask, finalize, largest_component


def flood_fill_largest(binary):
    """Reference: BFS over 6-neighbours, seeds visited in x-fastest order."""
    nx, ny, nz = binary.shape
    seen = np.zeros_like(binary, bool)
    best, best_size = None, 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if not binary[x, y, z] or seen[x, y, z]:
                    continue
                comp = []
                q = deque([(x, y, z)])
                seen[x, y, z] = True
                while q:
                    p = q.popleft()
                    comp.append(p)
                    for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                        n = (p[0] + d[0], p[1] + d[1], p[2] + d[2])
                        if all(0 <= n[i] < binary.shape[i] for i in range(3)) and binary[n] and not seen[n]:
                            seen[n] = True
                            q.append(n)
                if len(comp) > best_size:
                    best, best_size = comp, len(comp)
    out = np.zeros_like(binary, bool)
    if best:
        out[tuple(np.array(best).T)] = True
    return out


def test_two_blobs_keep_larger():
    out = np.zeros((12, 12, 12, 1))
    out[1:3, 1:3, 1:3] = 1.0  # 8 voxels
    out[1, 1, 3] = 1.0
    out[1, 2, 3] = 1.0  # 10 voxels total
    out[8:9, 8:9, 8:11] = 1.0  # 3 voxels
    mask = build_mask(out)
    assert mask.sum() == 10 and not mask[8, 8, 8]


def test_threshold_arithmetic():
    out = np.zeros((3, 3, 3, 2))
    out[1, 1, 1] = (0.3, 0.3)
    assert build_mask(out)[1, 1, 1]
    out[1, 1, 1] = (0.2, 0.2)
    with pytest.raises(NoBrainFoundError, match="no brain found"):
        build_mask(out)


def test_clamping_before_sum():
    out = np.zeros((3, 3, 3, 2))
    out[0, 0, 0] = (1.0, -5.0)
    out[2, 2, 2] = (0.4, 0.0)
    out[2, 2, 1] = (0.4, 0.0)
    # without clamping the first voxel would sum to -4
    assert build_mask(out)[0, 0, 0]


def test_diagonal_blobs_are_separate():
    b = np.zeros((4, 4, 4), bool)
    b[0, 0, 0] = b[1, 1, 0] = b[1, 1, 1] = True
    lc = largest_component(b)
    assert lc.sum() == 2 and not lc[0, 0, 0]


def test_tie_goes_to_lowest_x_fastest_index():
    b = np.zeros((6, 6, 6), bool)
    b[4, 0, 0] = True  # flat index 4
    b[0, 2, 0] = True  # flat index 12
    lc = largest_component(b)
    assert lc[4, 0, 0] and not lc[0, 2, 0]


def test_largest_component_vs_flood_fill_random():
    r = np.random.default_rng(7)
    for _ in range(1000):
        b = r.random((8, 8, 8)) < r.uniform(0.15, 0.4)
        if not b.any():
            continue
        assert np.array_equal(largest_component(b), flood_fill_largest(b))


def test_finalize_matches_scalar_oracle_random():
    r = np.random.default_rng(11)
    for _ in range(200):
        out = r.uniform(-0.3, 0.6, (8, 8, 8, 5))
        img = r.uniform(0, 1, (8, 8, 8)).astype(np.float32)
        res = finalize(img, out)
        binary = np.zeros((8, 8, 8), bool)
        for idx in np.ndindex(8, 8, 8):
            binary[idx] = sum(min(max(v, 0.0), 1.0) for v in out[idx]) >= 0.5
        mask = flood_fill_largest(binary)
        assert np.array_equal(res.brain_mask, mask)
        for idx in np.ndindex(8, 8, 8):
            clamped = [min(max(v, 0.0), 1.0) for v in out[idx]]
            expect = clamped.index(max(clamped)) + 1 if mask[idx] else 0
            assert res.label[idx] == expect
        assert np.array_equal(res.skull_stripped, np.where(mask, img, 0))
        assert not res.prob_maps[~mask].any()


def test_one_hot_and_tie_rule():
    out = np.zeros((5, 5, 5, 5))
    out[1:4, 1:4, 1:4, 2] = 1.0
    out[2, 2, 2] = 0.2
    res = finalize(np.ones((5, 5, 5)), out)
    assert res.label[1, 1, 1] == 3
    assert res.label[2, 2, 2] == 1
    assert res.label[0, 0, 0] == 0


def test_idempotent_mask():
    r = np.random.default_rng(2)
    out = r.uniform(0, 0.3, (8, 8, 8, 5))
    img = r.uniform(size=(8, 8, 8))
    first = finalize(img, out)
    second = finalize(first.skull_stripped, out)
    assert np.array_equal(first.brain_mask, second.brain_mask)


def test_monotone_threshold_set():
    r = np.random.default_rng(3)
    out = r.uniform(0, 0.2, (6, 6, 6, 3))
    before = np.clip(out, 0, 1).sum(-1) >= 0.5
    out[2, 3, 4, 1] += 0.4
    after = np.clip(out, 0, 1).sum(-1) >= 0.5
    assert np.all(after >= before)


def test_argmax_uses_output_precision():
    out = np.zeros((2, 2, 2, 3))
    out[..., 0] = 0.6
    out[..., 2] = 0.6 + 2e-8  # equal once rounded to float32
    res = finalize(np.ones((2, 2, 2), np.float32), out)
    assert (res.label == 3).all()
