"""Random Fourier feature encoding of pixel coordinates."""

from dataclasses import dataclass

import numpy as np

from ._validation import ContractError, DimensionError
from .tensor import Tensor


@dataclass(frozen=True)
class CoordinateBatch:
    """Integer pixel indices on an H x W grid.

    ``indices`` is an (N, 2) array of (row, col). Normalized positions are
    pixel centers, ``((row + 0.5) / H, (col + 0.5) / W)``.
    """

    indices: np.ndarray
    shape: tuple

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1, 2)
        h, w = self.shape
        if len(idx) and (idx.min() < 0 or np.any(idx[:, 0] >= h) or np.any(idx[:, 1] >= w)):
            raise ContractError(f"pixel indices fall outside the {h}x{w} grid")
        flat = idx[:, 0] * w + idx[:, 1]
        if len(np.unique(flat)) != len(flat):
            raise ContractError("coordinate batch contains duplicate pixels")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "shape", (int(h), int(w)))

    @classmethod
    def grid(cls, height, width):
        rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
        return cls(np.stack([rows.ravel(), cols.ravel()], axis=1), (height, width))

    @classmethod
    def from_flat(cls, flat, shape):
        flat = np.asarray(flat, dtype=np.int64)
        return cls(np.stack([flat // shape[1], flat % shape[1]], axis=1), shape)

    def __len__(self):
        return len(self.indices)

    @property
    def flat(self):
        return self.indices[:, 0] * self.shape[1] + self.indices[:, 1]

    @property
    def normalized(self):
        h, w = self.shape
        return np.stack(
            [(self.indices[:, 0] + 0.5) / h, (self.indices[:, 1] + 0.5) / w], axis=1
        )


def pixel_centers(height, width):
    """Normalized (u, v) centers of every pixel of an H x W grid, row-major."""
    return CoordinateBatch.grid(height, width).normalized


class FourierEncoding:
    """Fixed Gaussian random projection followed by cos/sin.

    Parameters
    ----------
    n_frequencies : int
        Number of projection rows; the feature width is twice this.
    sigma : float
        Standard deviation of the projection entries.
    seed : int or numpy SeedSequence
    """

    def __init__(self, n_frequencies=128, sigma=10.0, seed=0):
        if n_frequencies < 1:
            raise ContractError("n_frequencies must be positive")
        self.n_frequencies = int(n_frequencies)
        self.sigma = float(sigma)
        rng = np.random.default_rng(seed)
        proj = rng.normal(0.0, self.sigma, size=(self.n_frequencies, 2))
        proj.setflags(write=False)
        self.projection = proj

    @property
    def n_features(self):
        return 2 * self.n_frequencies

    @classmethod
    def from_projection(cls, projection):
        enc = cls.__new__(cls)
        proj = np.array(projection, dtype=np.float64)
        if proj.ndim != 2 or proj.shape[1] != 2:
            raise DimensionError(f"projection must be m x 2, got {proj.shape}")
        proj.setflags(write=False)
        enc.projection = proj
        enc.n_frequencies = proj.shape[0]
        enc.sigma = float("nan")
        return enc

    def features(self, coords, margin=None, dtype=np.float64):
        """Return the (N, 2m) feature array for ``coords``.

        ``coords`` is a :class:`CoordinateBatch` or an (N, 2) array of
        normalized positions. Positions may leave [0, 1] by at most
        ``margin`` (one pixel of the batch grid by default for a
        CoordinateBatch, zero for raw arrays).
        """
        if isinstance(coords, CoordinateBatch):
            pos = coords.normalized
            if margin is None:
                margin = 1.0 / min(coords.shape)
        else:
            pos = np.asarray(coords, dtype=np.float64)
            margin = 0.0 if margin is None else margin
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise DimensionError(f"coordinates must be N x 2, got {pos.shape}")
        if len(pos) == 0:
            raise ContractError("empty coordinate batch")
        if pos.min() < -margin or pos.max() > 1.0 + margin:
            raise ContractError(
                f"normalized coordinates must lie in [0, 1] (margin {margin:g}); "
                f"got [{pos.min():.4g}, {pos.max():.4g}]"
            )
        phase = 2.0 * np.pi * pos @ self.projection.T
        return np.concatenate([np.cos(phase), np.sin(phase)], axis=1).astype(dtype, copy=False)

    def encode(self, coords, margin=None, dtype=np.float64):
        """Like :meth:`features` but wrapped in a constant :class:`Tensor`."""
        return Tensor(self.features(coords, margin, dtype))


def encode(coords, enc, margin=None):
    return enc.encode(coords, margin)
