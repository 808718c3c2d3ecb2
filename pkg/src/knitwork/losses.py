"""Generator and discriminator objectives.

All reconstruction-type terms sum over coordinates (no batch mean); the
batch size is held fixed during a run instead.
"""

from dataclasses import asdict, dataclass

import numpy as np

from ._validation import ContractError, DimensionError
from .tensor import Tensor, abs as t_abs, as_tensor, clip, gather, log, square

BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0  # cross-patch consistency
    beta: float = 1.0  # reconstructed pixel
    gamma: float = 0.1  # adversarial
    delta: float = 10.0  # downsampling (super-resolution only)

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ContractError(f"loss weight {name} must be non-negative, got {value}")


@dataclass
class LossReport:
    step: int = 0
    recon: float = 0.0
    xpatch: float = 0.0
    pixel: float = 0.0
    gen_bce: float = 0.0
    disc_bce: float = 0.0
    total_g: float = 0.0
    down: float = 0.0

    FIELDS = ("step", "recon", "xpatch", "pixel", "gen_bce", "disc_bce", "total_g", "down")

    def row(self):
        return [self.step] + [repr(float(getattr(self, f))) for f in self.FIELDS[1:]]

    def is_finite(self):
        return all(np.isfinite(getattr(self, f)) for f in self.FIELDS[1:])


def _const(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def patch_recon_loss(pred, truth, mask=None):
    """Masked squared error per coordinate divided by the stack length, summed."""
    pred = as_tensor(pred)
    truth = _const(truth, pred)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise DimensionError(f"prediction {pred.shape} and truth {truth.shape} must be equal N x D")
    err = square(pred - truth)
    if mask is not None:
        mask = _const(mask, pred)
        if mask.shape != pred.shape:
            raise DimensionError(f"mask {mask.shape} does not match prediction {pred.shape}")
        err = err * mask
    return err.sum() / pred.shape[1]


def cross_patch_pairs(indices, shape, shifts, rows=None):
    """Flat gather positions for the cross-patch terms.

    Parameters
    ----------
    indices : (U, 2) int array
        Pixel of each prediction row.
    shape : (H, W)
    shifts : ShiftMap
    rows : int array, optional
        Prediction rows acting as the reference coordinates ``x``. All
        rows by default.

    Returns
    -------
    (neighbor_pos, center_pos, element) arrays; positions index the
    flattened (U, D) prediction matrix. Terms whose ``x + s`` is outside
    the grid, or has no prediction row, are dropped, as are zero shifts
    (an element compared with its own coordinate's center).
    """
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, 2)
    h, w = shape
    d = len(shifts.center)
    lookup = np.full(h * w, -1, dtype=np.int64)
    lookup[indices[:, 0] * w + indices[:, 1]] = np.arange(len(indices))
    rows = np.arange(len(indices)) if rows is None else np.asarray(rows, dtype=np.int64)
    x = indices[rows]
    tgt = x[:, None, :] + shifts.shifts[None, :, :]  # (N, D, 2)
    valid = (tgt[..., 0] >= 0) & (tgt[..., 0] < h) & (tgt[..., 1] >= 0) & (tgt[..., 1] < w)
    valid &= np.any(shifts.shifts != 0, axis=1)[None, :]
    nb = np.full(valid.shape, -1, dtype=np.int64)
    nb[valid] = lookup[tgt[..., 0][valid] * w + tgt[..., 1][valid]]
    keep = nb >= 0
    elem = np.broadcast_to(np.arange(d), keep.shape)[keep]
    neighbor_pos = nb[keep] * d + elem
    center_pos = np.broadcast_to(rows[:, None], keep.shape)[keep] * d + shifts.center[elem]
    return neighbor_pos, center_pos, elem


def cross_patch_loss(pred, indices, shape, shifts, rows=None, scale_weights=None):
    """Squared disagreement between each stack element and the sharp center
    prediction for the pixel it covers, summed over reference coordinates."""
    pred = as_tensor(pred)
    if pred.ndim != 2 or pred.shape[1] != len(shifts.center):
        raise DimensionError(f"predictions {pred.shape} do not match a {len(shifts.center)}-element stack")
    nb, ct, elem = cross_patch_pairs(indices, shape, shifts, rows)
    if len(nb) == 0:
        return (pred.sum() * 0.0)
    diff = square(gather(pred, nb) - gather(pred, ct))
    if scale_weights is not None:
        wts = np.asarray(scale_weights, dtype=pred.dtype)[shifts.scale_index[elem]]
        diff = diff * wts
    return diff.sum()


def pixel_loss(colors, target, mask=None):
    """Sum of absolute color errors, optionally restricted to masked rows."""
    colors = as_tensor(colors)
    target = _const(target, colors)
    if colors.shape != target.shape:
        raise DimensionError(f"colors {colors.shape} and target {target.shape} differ")
    err = t_abs(colors - target)
    if mask is not None:
        m = np.asarray(mask, dtype=colors.dtype)
        if m.ndim == 1:
            m = m[:, None]
        err = err * m
    return err.sum()


def _bce(scores, target):
    s = clip(scores, BCE_EPS, 1.0 - BCE_EPS)
    if target == 0.0:
        return -log(1.0 - s).mean()
    if target == 1.0:
        return -log(s).mean()
    return -(log(s) * target + log(1.0 - s) * (1.0 - target)).mean()


def disc_loss(real_scores, fake_scores, smoothing=0.1):
    """Mean BCE on real scores (target ``1 - smoothing``) plus mean BCE on
    fake scores (target 0)."""
    if not 0.0 <= smoothing < 1.0:
        raise ContractError(f"smoothing must be in [0, 1), got {smoothing}")
    return _bce(as_tensor(real_scores), 1.0 - smoothing) + _bce(as_tensor(fake_scores), 0.0)


def gen_adv_loss(fake_scores, form="nonsat"):
    """Generator adversarial term.

    ``"nonsat"`` is the mean of ``-log D(fake)``; ``"minimax"`` is the mean
    of ``log(1 - D(fake))``, which is negative by construction.
    """
    fake = clip(as_tensor(fake_scores), BCE_EPS, 1.0 - BCE_EPS)
    if form == "nonsat":
        return -log(fake).mean()
    if form == "minimax":
        return log(1.0 - fake).mean()
    raise ContractError(f"unknown adversarial form {form!r}")


def total_generator_loss(parts, weights):
    """Weighted sum of the generator terms.

    ``parts`` maps any of ``recon``, ``xpatch``, ``pixel``, ``gen_bce`` and
    ``down`` to scalar tensors or floats; missing terms count as zero.
    Returns ``(total, LossReport)``.
    """
    coeff = {"recon": 1.0, "xpatch": weights.alpha, "pixel": weights.beta, "gen_bce": weights.gamma, "down": weights.delta}
    unknown = set(parts) - set(coeff)
    if unknown:
        raise ContractError(f"unknown loss terms {sorted(unknown)}")
    report = LossReport()
    total = None
    for name in ("recon", "xpatch", "pixel", "gen_bce", "down"):
        if name not in parts:
            continue
        term = parts[name]
        value = float(term.item() if isinstance(term, Tensor) else term)
        setattr(report, name, value)
        if coeff[name] == 0.0:
            continue
        contrib = term * coeff[name] if coeff[name] != 1.0 else term
        total = contrib if total is None else total + contrib
    if total is None:
        total = Tensor(0.0)
    elif not isinstance(total, Tensor):
        total = Tensor(float(total))
    report.total_g = sum(coeff[n] * getattr(report, n) for n in coeff)
    return total, report
