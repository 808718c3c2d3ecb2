"""Finite-difference and loop oracles shared by the test modules."""

import os

import numpy as np

from knitwork.imageio import load_png
from knitwork.tensor import Tensor

DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")


def crop(name):
    return load_png(os.path.join(DATA, name))


def numeric_grad(fn, arrays, index, h=1e-6):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. ``arrays[index]``."""
    base = arrays[index]
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = base[i]
        base[i] = orig + h
        hi = fn(*arrays)
        base[i] = orig - h
        lo = fn(*arrays)
        base[i] = orig
        grad[i] = (hi - lo) / (2 * h)
    return grad


def rel_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


def check_grad(build, arrays, h=1e-6):
    """Largest relative error between autodiff and finite differences.

    ``build`` maps Tensors to a scalar Tensor; every array gets checked.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(*tensors).backward()

    def value(*arrs):
        return build(*(Tensor(a) for a in arrs)).item()

    worst = 0.0
    for k, t in enumerate(tensors):
        num = numeric_grad(value, arrays, k, h)
        worst = max(worst, rel_error(t.grad, num))
    return worst


def loop_extract(img, r, c, spec, blurred):
    """Scalar-loop stack extraction with reflected taps."""
    h, w, ch = img.shape
    half = spec.patch_size // 2
    out = []
    for s, f in enumerate(spec.scales):
        src = blurred[s]
        for di in range(-half, half + 1):
            for dj in range(-half, half + 1):
                rr, cc = reflect(r + f * di, h), reflect(c + f * dj, w)
                for k in range(ch):
                    out.append(src[rr, cc, k])
    return np.array(out)


def reflect(i, n):
    if n == 1:
        return 0
    while i < 0 or i >= n:
        i = -i if i < 0 else 2 * (n - 1) - i
    return i
