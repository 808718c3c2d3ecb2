"""Exception types and input validation helpers shared across the package."""

import numpy as np


class KnitworkError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(KnitworkError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(KnitworkError, ValueError):
    """A documented precondition was violated."""


class TrainingError(KnitworkError, RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message, batch=None, dump_path=None):
        super().__init__(message)
        self.batch = batch
        self.dump_path = dump_path


def check_image(img, name="image"):
    """Return `img` as a float64 H x W x C array with C in {1, 3}.

    Grayscale 2-D input gains a trailing channel axis. Values must lie in
    [0, 1].
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise DimensionError(
            f"{name} must have shape (H, W), (H, W, 1) or (H, W, 3); got {arr.shape}"
        )
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimensionError(f"{name} is empty: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ContractError(
            f"{name} values must lie in [0, 1]; got [{arr.min():.4g}, {arr.max():.4g}]"
        )
    return arr


def check_mask(mask, shape, name="mask"):
    """Return a boolean H x W mask; nonzero entries are True."""
    arr = np.asarray(mask)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.shape != tuple(shape):
        raise DimensionError(f"{name} shape {arr.shape} does not match image grid {tuple(shape)}")
    return arr != 0


def check_same_shape(a, b, what="operands"):
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"{what} have different shapes: {np.shape(a)} vs {np.shape(b)}")


def resolve_dtype(dtype):
    dt = np.dtype(dtype)
    if dt not in (np.float32, np.float64):
        raise ContractError(f"dtype must be float32 or float64, got {dt}")
    return dt
