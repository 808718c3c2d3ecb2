import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from knitwork._validation import ContractError
from knitwork.encoding import CoordinateBatch, FourierEncoding, encode, pixel_centers


def test_zero_projection_gives_unit_cos_zero_sin():
    enc = FourierEncoding.from_projection(np.zeros((4, 2)))
    out = enc.features(CoordinateBatch.grid(3, 3))
    np.testing.assert_array_equal(out, np.hstack([np.ones((9, 4)), np.zeros((9, 4))]))


def test_single_frequency_half_position():
    enc = FourierEncoding.from_projection([[1.0, 0.0]])
    out = enc.features(np.array([[0.5, 0.123]]))
    np.testing.assert_allclose(out, [[-1.0, 0.0]], atol=1e-15)


def test_grid_encoding_shape_and_range():
    enc = FourierEncoding(128, 10.0, seed=3)
    out = encode(CoordinateBatch.grid(16, 16), enc).data
    assert out.shape == (256, 256)
    assert out.min() >= -1.0 and out.max() <= 1.0


def test_no_duplicate_rows_on_64_grid():
    out = FourierEncoding(128, 10.0, seed=0).features(CoordinateBatch.grid(64, 64))
    assert len(np.unique(out.round(12), axis=0)) == 64 * 64


def test_same_seed_same_projection_and_read_only():
    a, b = FourierEncoding(8, 2.0, seed=5), FourierEncoding(8, 2.0, seed=5)
    np.testing.assert_array_equal(a.projection, b.projection)
    assert not np.array_equal(a.projection, FourierEncoding(8, 2.0, seed=6).projection)
    with pytest.raises(ValueError):
        a.projection[0, 0] = 1.0


def test_projection_statistics():
    proj = FourierEncoding(20000, 10.0, seed=1).projection
    assert abs(proj.mean()) < 0.2
    assert proj.std() == pytest.approx(10.0, rel=0.02)


def test_normalized_pixel_centers():
    batch = CoordinateBatch(np.array([[0, 0], [3, 1]]), (4, 2))
    np.testing.assert_allclose(batch.normalized, [[0.125, 0.25], [0.875, 0.75]])
    assert pixel_centers(2, 2).shape == (4, 2)


def test_batch_validation():
    with pytest.raises(ContractError):
        CoordinateBatch(np.array([[0, 0], [0, 0]]), (2, 2))
    with pytest.raises(ContractError):
        CoordinateBatch(np.array([[2, 0]]), (2, 2))


def test_margin_contract():
    enc = FourierEncoding(4, 1.0)
    enc.features(np.array([[1.01, 0.5]]), margin=0.02)
    with pytest.raises(ContractError):
        enc.features(np.array([[1.01, 0.5]]))
    with pytest.raises(ContractError):
        enc.features(np.empty((0, 2)))


@given(st.integers(1, 9), st.integers(1, 9))
def test_grid_roundtrip_property(h, w):
    batch = CoordinateBatch.grid(h, w)
    again = CoordinateBatch.from_flat(batch.flat, (h, w))
    np.testing.assert_array_equal(batch.indices, again.indices)
    pos = batch.normalized
    assert pos.min() > 0 and pos.max() < 1
