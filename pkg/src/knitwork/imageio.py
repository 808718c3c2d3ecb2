"""PNG input/output and synthetic degradations."""

import logging
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from ._validation import ContractError, KnitworkError, check_image
from .patching import reflect_index

log = logging.getLogger(__name__)


class ImageIOError(KnitworkError, OSError):
    pass


def load_png(path):
    """Read a PNG into an H x W x C float64 array in [0, 1] (C is 1 or 3).

    Alpha channels are dropped; 16-bit data is rescaled with a warning.
    """
    path = os.fspath(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                log.warning("%s: 16-bit image rescaled to [0, 1]", path)
                arr = np.asarray(im, dtype=np.float64) / 65535.0
                return np.clip(arr, 0.0, 1.0)[:, :, None]
            if mode in ("L", "1"):
                arr = np.asarray(im.convert("L"))
                return arr[:, :, None].astype(np.float64) / 255.0
            if mode == "LA":
                arr = np.asarray(im.convert("L"))
                return arr[:, :, None].astype(np.float64) / 255.0
            arr = np.asarray(im.convert("RGB"))
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise ImageIOError(f"cannot read PNG {path!r}: {exc}") from exc
    return arr.astype(np.float64) / 255.0


def to_uint8(img):
    """Clamp to [0, 1] and quantize with round-half-to-even."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.rint(arr * 255.0).astype(np.uint8)


def save_png(img, path):
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    try:
        Image.fromarray(arr).save(os.fspath(path), format="PNG")
    except OSError as exc:
        raise ImageIOError(f"cannot write PNG {path!r}: {exc}") from exc


def load_mask_png(path):
    """Boolean mask; nonzero pixels (in any channel) are True."""
    return load_png(path).max(axis=2) > 0


# -- kernels --------------------------------------------------------------------

KERNELS = ("delta", "round-gauss", "diag-gauss")


def _gauss2d(cov, size):
    r = size // 2
    y, x = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    pts = np.stack([y, x], axis=-1)
    inv = np.linalg.inv(cov)
    k = np.exp(-0.5 * np.einsum("...i,ij,...j->...", pts, inv, pts))
    return k / k.sum()


def make_kernel(name, factor):
    """Named downsampling kernel for scale ``factor``.

    ``round-gauss`` is isotropic with sigma ``factor / 2``;
    ``diag-gauss`` has sigma ``factor`` along the 45-degree diagonal and
    ``factor / 4`` across it.
    """
    if name == "delta":
        return np.ones((1, 1))
    if name == "round-gauss":
        s = factor / 2.0
        return _gauss2d(np.eye(2) * s * s, 2 * int(np.ceil(3 * s)) + 1)
    if name == "diag-gauss":
        major, minor = float(factor), factor / 4.0
        rot = np.array([[1.0, -1.0], [1.0, 1.0]]) / np.sqrt(2.0)
        cov = rot @ np.diag([major**2, minor**2]) @ rot.T
        return _gauss2d(cov, 2 * int(np.ceil(3 * major)) + 1)
    raise ContractError(f"unknown kernel {name!r}; choose from {KERNELS}")


def convolve_reflect(img, kernel):
    """True 2-D convolution of each channel with reflected borders."""
    img = np.asarray(img, dtype=np.float64)
    k = np.asarray(kernel, dtype=np.float64)
    h, w = img.shape[:2]
    if k.shape[0] > h or k.shape[1] > w:
        raise ContractError(f"kernel {k.shape} larger than image {h}x{w}")
    ry, rx = k.shape[0] // 2, k.shape[1] // 2
    rows = reflect_index(np.arange(-ry, h + ry), h)
    cols = reflect_index(np.arange(-rx, w + rx), w)
    padded = img[rows][:, cols]
    win = np.lib.stride_tricks.sliding_window_view(padded, k.shape, axis=(0, 1))
    return np.einsum("hwcyx,yx->hwc", win, k[::-1, ::-1])


def downsample(img, kernel, factor):
    """Convolve with ``kernel`` then keep every ``factor``-th pixel starting
    at ``(factor - 1) // 2``."""
    img = check_image(img)
    if factor < 1:
        raise ContractError(f"factor must be >= 1, got {factor}")
    blurred = convolve_reflect(img, kernel)
    s = (factor - 1) // 2
    return np.clip(blurred[s::factor, s::factor], 0.0, 1.0)


def add_gaussian_noise(img, sigma, seed=0):
    """Add N(0, (sigma/255)^2) noise and clamp; ``sigma`` is in 8-bit units."""
    img = check_image(img)
    if sigma < 0:
        raise ContractError(f"noise sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    return np.clip(img + rng.normal(0.0, sigma / 255.0, size=img.shape), 0.0, 1.0)


@dataclass(frozen=True)
class Rect:
    row: int
    col: int
    height: int
    width: int

    @classmethod
    def parse(cls, text):
        try:
            r, c, h, w = (int(v) for v in text.split(","))
        except ValueError:
            raise ContractError(f"hole must be 'row,col,height,width', got {text!r}") from None
        return cls(r, c, h, w)

    @classmethod
    def centered_square(cls, shape, fill_ratio):
        """Square hole of area closest to ``fill_ratio`` of the image, centered."""
        h, w = shape
        side = max(1, int(round(np.sqrt(fill_ratio * h * w))))
        return cls((h - side) // 2, (w - side) // 2, side, side)

    @property
    def area(self):
        return self.height * self.width

    def mask(self, shape):
        """Known-pixel mask: False inside the rectangle."""
        h, w = shape
        if self.height < 0 or self.width < 0:
            raise ContractError(f"hole has negative size: {self}")
        if self.row < 0 or self.col < 0 or self.row + self.height > h or self.col + self.width > w:
            raise ContractError(f"hole {self} exceeds the {h}x{w} image")
        known = np.ones((h, w), dtype=bool)
        known[self.row : self.row + self.height, self.col : self.col + self.width] = False
        return known


def cut_hole(img, rect):
    """Zero the rectangle; returns ``(image, known_mask)``."""
    img = check_image(img)
    known = rect.mask(img.shape[:2])
    out = img.copy()
    out[~known] = 0.0
    return out, known


def degrade(img, op, **kwargs):
    """Dispatch ``"downsample"``, ``"noise"`` or ``"hole"``."""
    if op == "downsample":
        kernel = kwargs["kernel"]
        factor = kwargs["factor"]
        if isinstance(kernel, str):
            kernel = make_kernel(kernel, factor)
        return downsample(img, kernel, factor)
    if op == "noise":
        return add_gaussian_noise(img, kwargs["sigma"], kwargs.get("seed", 0))
    if op == "hole":
        return cut_hole(img, kwargs["rect"])
    raise ContractError(f"unknown degradation {op!r}")
