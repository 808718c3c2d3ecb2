"""Multi-scale patch stacks, their masks, and cross-patch shift geometry.

A stack for pixel ``x`` holds, for every scale ``f``, the ``p x p`` grid of
samples centered on ``x`` with stride ``f``. Scales above one sample a
Gaussian-blurred copy of the image. Flattened stacks use the element order
``(scale, row offset, col offset, channel)``.

Borders use mirror reflection without repeating the edge sample (numpy's
``"reflect"``).
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import ContractError, check_image


def reflect_index(i, n):
    """Map integer positions onto ``[0, n)`` by mirror reflection."""
    i = np.asarray(i)
    if n == 1:
        return np.zeros_like(i)
    period = 2 * (n - 1)
    i = np.abs(i) % period
    return np.where(i >= n, period - i, i)


def gaussian_kernel1d(sigma, truncate=4.0):
    """Normalized 1-D Gaussian taps with radius ``int(truncate * sigma + 0.5)``."""
    if sigma < 0:
        raise ContractError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return np.ones(1)
    radius = int(truncate * sigma + 0.5)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img, sigma):
    """Separable Gaussian filter with reflected borders; ``sigma=0`` is a copy."""
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    if sigma < 0:
        raise ContractError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        out = img.copy()
    else:
        k = gaussian_kernel1d(sigma)
        r = len(k) // 2
        h, w = img.shape[:2]
        offs = np.arange(-r, r + 1)
        rows = reflect_index(np.arange(h)[:, None] + offs[None, :], h)
        tmp = np.einsum("hkwc,k->hwc", img[rows], k)
        cols = reflect_index(np.arange(w)[:, None] + offs[None, :], w)
        out = np.einsum("hwkc,k->hwc", tmp[:, cols], k)
    return out[:, :, 0] if squeeze else out


@dataclass(frozen=True)
class PatchSpec:
    """Patch geometry: odd size ``p``, increasing integer scales starting at 1.

    ``blur_sigmas`` defaults to ``0.5 * f`` for every scale ``f > 1`` and 0
    for scale 1.
    """

    patch_size: int = 3
    scales: tuple = (1, 2, 4)
    blur_sigmas: tuple = field(default=None)

    def __post_init__(self):
        p = int(self.patch_size)
        scales = tuple(int(s) for s in self.scales)
        if p < 1 or p % 2 == 0:
            raise ContractError(f"patch_size must be a positive odd integer, got {p}")
        if not scales or scales[0] != 1:
            raise ContractError(f"scales must start at 1, got {scales}")
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ContractError(f"scales must be strictly increasing, got {scales}")
        if self.blur_sigmas is None:
            sigmas = tuple(0.0 if f == 1 else 0.5 * f for f in scales)
        else:
            sigmas = tuple(float(s) for s in self.blur_sigmas)
            if len(sigmas) != len(scales):
                raise ContractError("blur_sigmas needs one entry per scale")
        object.__setattr__(self, "patch_size", p)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "blur_sigmas", sigmas)

    @property
    def n_scales(self):
        return len(self.scales)

    @property
    def radius(self):
        return (self.patch_size - 1) // 2

    def stack_size(self, channels):
        return self.n_scales * self.patch_size**2 * channels

    def offsets(self):
        r = self.radius
        d = np.arange(-r, r + 1)
        di, dj = np.meshgrid(d, d, indexing="ij")
        return di.ravel(), dj.ravel()


def _scale_images(img, spec):
    return [img if s == 0 else gaussian_blur(img, s) for s in spec.blur_sigmas]


def _taps(indices, shape, spec, f):
    """Reflected (N, p*p) row and column tap positions at scale ``f``."""
    di, dj = spec.offsets()
    h, w = shape
    rows = reflect_index(indices[:, :1] + f * di[None, :], h)
    cols = reflect_index(indices[:, 1:] + f * dj[None, :], w)
    return rows, cols


def _grid_indices(shape):
    rows, cols = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    return np.stack([rows.ravel(), cols.ravel()], axis=1)


def extract_stacks(img, spec, indices=None):
    """Flattened ground-truth stacks, shape (N, S * p * p * C).

    ``indices`` is an (N, 2) array of pixel (row, col); all pixels of the
    image in row-major order when omitted.
    """
    img = check_image(img)
    h, w, c = img.shape
    indices = _grid_indices((h, w)) if indices is None else np.asarray(indices).reshape(-1, 2)
    parts = []
    for f, scaled in zip(spec.scales, _scale_images(img, spec)):
        rows, cols = _taps(indices, (h, w), spec, f)
        parts.append(scaled[rows, cols])  # (N, p*p, C)
    stacks = np.stack(parts, axis=1)  # (N, S, p*p, C)
    return stacks.reshape(len(indices), -1)


def extract_stack(img, coord, spec):
    """Ground-truth stack at a single pixel, shape (S, p, p, C)."""
    img = check_image(img)
    r, c = coord
    if not (0 <= r < img.shape[0] and 0 <= c < img.shape[1]):
        raise ContractError(f"pixel {coord} outside image of shape {img.shape[:2]}")
    flat = extract_stacks(img, spec, np.array([[r, c]]))
    p = spec.patch_size
    return flat.reshape(spec.n_scales, p, p, img.shape[2])


def _erode(known, radius):
    """True where every pixel in the (2r+1)^2 reflected box is known."""
    if radius == 0:
        return known.copy()
    h, w = known.shape
    d = np.arange(-radius, radius + 1)
    rows = reflect_index(np.arange(h)[:, None] + d[None, :], h)
    cols = reflect_index(np.arange(w)[:, None] + d[None, :], w)
    by_row = known[rows].all(axis=1)  # (H, W)
    return by_row[:, cols].all(axis=2)


def extract_mask_stacks(known, spec, channels, indices=None):
    """Binary masks matching :func:`extract_stacks`.

    An element is 1 when every pixel in its footprint is known. The
    footprint at scale ``f`` is the box of half-width ``f // 2`` around the
    tap, which contains the f x f sampling cell.
    """
    known = np.asarray(known).astype(bool)
    h, w = known.shape
    indices = _grid_indices((h, w)) if indices is None else np.asarray(indices).reshape(-1, 2)
    parts = []
    for f in spec.scales:
        eroded = _erode(known, f // 2)
        rows, cols = _taps(indices, (h, w), spec, f)
        parts.append(eroded[rows, cols])
    m = np.stack(parts, axis=1)  # (N, S, p*p)
    m = np.repeat(m[:, :, :, None], channels, axis=3)
    return m.reshape(len(indices), -1).astype(np.float64)


def extract_mask_stack(known_mask, coord, spec, channels=1):
    p = spec.patch_size
    flat = extract_mask_stacks(known_mask, spec, channels, np.array([coord]))
    return flat.reshape(spec.n_scales, p, p, channels)


@dataclass(frozen=True)
class ShiftMap:
    """Per stack element: the grid shift pairing it with a central reference.

    Element ``i`` of the stack predicted at ``x + shifts[i]`` covers pixel
    ``x``; ``center[i]`` is the index of the scale-1 central element with
    the same channel.
    """

    shifts: np.ndarray  # (D, 2)
    center: np.ndarray  # (D,)
    scale_index: np.ndarray  # (D,)
    channel: np.ndarray  # (D,)

    @property
    def unique_shifts(self):
        return np.unique(self.shifts, axis=0)

    def in_bounds(self, indices, shape):
        """(N, D) boolean: whether ``x + shifts[i]`` lies inside the grid."""
        tgt = np.asarray(indices)[:, None, :] + self.shifts[None, :, :]
        return (
            (tgt[..., 0] >= 0) & (tgt[..., 0] < shape[0]) & (tgt[..., 1] >= 0) & (tgt[..., 1] < shape[1])
        )


def shift_map(spec, channels=1):
    """Shift geometry for the cross-patch consistency term.

    For scale ``f`` and in-patch offset ``(di, dj)`` the shift is
    ``(-f * di, -f * dj)``.
    """
    p = spec.patch_size
    di, dj = spec.offsets()
    shifts, center, scale_index, channel = [], [], [], []
    center_base = (spec.radius * p + spec.radius) * channels
    for s, f in enumerate(spec.scales):
        for k in range(p * p):
            for c in range(channels):
                shifts.append((-f * di[k], -f * dj[k]))
                center.append(center_base + c)
                scale_index.append(s)
                channel.append(c)
    return ShiftMap(
        shifts=np.array(shifts, dtype=np.int64).reshape(-1, 2),
        center=np.array(center, dtype=np.int64),
        scale_index=np.array(scale_index, dtype=np.int64),
        channel=np.array(channel, dtype=np.int64),
    )
