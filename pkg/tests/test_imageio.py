import logging

import numpy as np
import pytest
from PIL import Image

from knitwork._validation import ContractError
from knitwork.imageio import (
    ImageIOError,
    Rect,
    add_gaussian_noise,
    cut_hole,
    degrade,
    downsample,
    load_mask_png,
    load_png,
    make_kernel,
    save_png,
)


def test_white_pixel(tmp_path):
    path = tmp_path / "w.png"
    Image.fromarray(np.full((1, 1), 255, np.uint8)).save(path)
    np.testing.assert_array_equal(load_png(path), [[[1.0]]])


def test_round_trip_bit_exact(tmp_path, rng):
    raw = rng.integers(0, 256, size=(13, 7, 3), dtype=np.uint8)
    path = tmp_path / "r.png"
    save_png(raw / 255.0, path)
    back = load_png(path)
    np.testing.assert_array_equal(np.rint(back * 255).astype(np.uint8), raw)
    save_png(back, path)
    np.testing.assert_array_equal(load_png(path), back)


def test_truncated_and_missing(tmp_path):
    path = tmp_path / "t.png"
    save_png(np.zeros((20, 20, 3)), path)
    path.write_bytes(path.read_bytes()[:30])
    with pytest.raises(ImageIOError, match="t.png"):
        load_png(path)
    with pytest.raises(ImageIOError):
        load_png(tmp_path / "missing.png")


def test_sixteen_bit_rescaled(tmp_path, caplog):
    path = tmp_path / "d.png"
    Image.fromarray(np.full((2, 2), 65535, np.uint16)).save(path)
    with caplog.at_level(logging.WARNING):
        img = load_png(path)
    assert img.shape == (2, 2, 1) and np.allclose(img, 1.0)
    assert "16-bit" in caplog.text


def test_mask_png(tmp_path):
    m = np.zeros((4, 5))
    m[1, 2] = 1.0
    save_png(m[:, :, None], tmp_path / "m.png")
    np.testing.assert_array_equal(load_mask_png(tmp_path / "m.png"), m > 0)


def test_delta_downsample_is_subsampling(rng):
    img = rng.random((12, 12, 3))
    np.testing.assert_array_equal(downsample(img, make_kernel("delta", 2), 2), img[::2, ::2])
    np.testing.assert_array_equal(degrade(img, "downsample", kernel="delta", factor=3), img[1::3, 1::3])
    with pytest.raises(ContractError):
        downsample(img[:4, :4], make_kernel("round-gauss", 4), 4)


def test_kernels_normalized():
    for name in ("delta", "round-gauss", "diag-gauss"):
        assert make_kernel(name, 4).sum() == pytest.approx(1.0)
    with pytest.raises(ContractError):
        make_kernel("box", 2)


def _anisotropy(img):
    gy, gx = np.gradient(img[:, :, 0])
    tensor = np.array([[(gy * gy).sum(), (gy * gx).sum()], [(gy * gx).sum(), (gx * gx).sum()]])
    lo, hi = np.linalg.eigvalsh(tensor)
    return hi / lo


def test_diagonal_kernel_smears_anisotropically():
    img = np.zeros((64, 64, 1))
    img[28:36, 28:36] = 1.0  # axis-aligned edges only
    diag = _anisotropy(downsample(img, make_kernel("diag-gauss", 4), 4))
    round_ = _anisotropy(downsample(img, make_kernel("round-gauss", 4), 4))
    assert diag / round_ > 1.5


def test_noise(rng):
    img = np.full((256, 256, 1), 0.5)
    np.testing.assert_array_equal(add_gaussian_noise(img, 0), img)
    noisy = add_gaussian_noise(img, 10, seed=4)
    assert abs((noisy - img).std() / (10 / 255) - 1) < 0.05
    np.testing.assert_array_equal(noisy, add_gaussian_noise(img, 10, seed=4))
    strong = add_gaussian_noise(img, 200, seed=1)
    assert strong.min() >= 0.0 and strong.max() <= 1.0


def test_rect_and_hole(rng):
    assert Rect.parse("1,2,3,4") == Rect(1, 2, 3, 4)
    with pytest.raises(ContractError):
        Rect.parse("1,2,3")
    sq = Rect.centered_square((64, 64), 0.02)
    assert sq.height == sq.width == 9 and (sq.row, sq.col) == (27, 27)
    img = rng.random((10, 10, 3))
    out, known = cut_hole(img, Rect(2, 3, 4, 2))
    assert (~known).sum() == 8 and np.all(out[~known] == 0)
    with pytest.raises(ContractError):
        Rect(8, 8, 4, 4).mask((10, 10))
