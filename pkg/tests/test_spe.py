import numpy as np
import pytest

from protomil.spe import encode_position, encode_positions, fuse


def test_origin_d4_exact():
    np.testing.assert_array_equal(encode_position((0, 0), 4),
                                  [0.0, 1.0, 0.0, 1.0])


def test_x2_d4():
    out = encode_position((2, 0), 4)
    np.testing.assert_allclose(out, [np.sin(2.0), np.cos(2.0), 0.0, 1.0],
                               atol=1e-12)
    np.testing.assert_allclose(out[:2], [0.90930, -0.41615], atol=1e-5)


def test_two_frequencies_d8():
    out = encode_position((1, 1), 8)
    # rate(j=0) = 1, rate(j=1) = 10000**(-4/8) = 0.01
    axis = [np.sin(1.0), np.cos(1.0), np.sin(0.01), np.cos(0.01)]
    np.testing.assert_allclose(out[:4], axis, atol=1e-12)
    np.testing.assert_allclose(out[4:], axis, atol=1e-12)


def test_rejects_bad_dim():
    with pytest.raises(ValueError, match="divisible by 4"):
        encode_position((1, 2), 6)


def test_deterministic_bit_exact():
    a = encode_positions(np.array([[3.0, 9.0], [14.0, 2.0]]), 16)
    b = encode_positions(np.array([[3.0, 9.0], [14.0, 2.0]]), 16)
    np.testing.assert_array_equal(a, b)


def test_bounded():
    coords = np.random.default_rng(0).integers(0, 200, size=(100, 2))
    out = encode_positions(coords.astype(float), 32)
    assert np.all(out >= -1.0) and np.all(out <= 1.0)


def test_axis_independence():
    base = encode_position((7, 3), 16)
    moved = encode_position((7, 11), 16)
    np.testing.assert_array_equal(base[:8], moved[:8])
    assert np.abs(base[8:] - moved[8:]).max() > 0


def test_injective_on_desk_grid():
    # Exhaustive over [0, 50]^2 at D=8: distinct coords stay separated.
    side = np.arange(51.0)
    coords = np.stack(np.meshgrid(side, side, indexing="ij"),
                      axis=-1).reshape(-1, 2)
    emb = encode_positions(coords, 8)
    min_gap = np.inf
    for start in range(0, emb.shape[0], 256):
        block = emb[start:start + 256]
        diff = np.abs(block[:, None, :] - emb[None, :, :]).max(axis=-1)
        for i in range(block.shape[0]):
            diff[i, start + i] = np.inf
        min_gap = min(min_gap, diff.min())
    assert min_gap > 1e-6


def test_fuse_zero_embeddings():
    f = np.random.default_rng(1).normal(size=(5, 8))
    np.testing.assert_array_equal(fuse(f, np.zeros_like(f)), f)


def test_fuse_zero_features():
    s = encode_positions(np.array([[1.0, 2.0]]), 8)
    np.testing.assert_array_equal(fuse(np.zeros_like(s), s), s)


def test_fuse_with_origin_embedding():
    out = fuse(np.ones((1, 4)), encode_position((0, 0), 4)[None, :])
    np.testing.assert_array_equal(out, [[1.0, 2.0, 1.0, 2.0]])


def test_fuse_rejects_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        fuse(np.zeros((2, 4)), np.zeros((3, 4)))
