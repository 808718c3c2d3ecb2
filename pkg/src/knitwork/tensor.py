"""Dense tensors with tape-based reverse-mode differentiation, plus Adam.

Every differentiable operation records a closure mapping the output
gradient to operand gradients. :meth:`Tensor.backward` walks the recorded
graph in reverse topological order, accumulates gradients, and then
releases the tape.

Broadcasting follows numpy rules; operand gradients are summed back to the
operand shape.
"""

import contextlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ._validation import ContractError, DimensionError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def frozen(params):
    """Temporarily exclude `params` from gradient computation.

    Gradients still flow *through* operations using these tensors.
    """
    params = list(params)
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag


def _as_array(data, dtype=None):
    if isinstance(data, np.ndarray):
        if dtype is not None:
            return data.astype(dtype, copy=False)
        if data.dtype in (np.float32, np.float64):
            return data
        return data.astype(np.float64)
    return np.asarray(data, dtype=dtype or np.float64)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a} and {b}") from None


class Tensor:
    """An n-dimensional float array that can take part in differentiation.

    Parameters
    ----------
    data : array_like
        Values. float32 and float64 arrays keep their dtype; anything else
        becomes float64.
    requires_grad : bool
        Whether :meth:`backward` should populate ``grad`` for this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- basic properties -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- graph plumbing ---------------------------------------------------

    def backward(self):
        """Populate ``grad`` on every tensor this scalar depends on."""
        if self.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor requiring grad")

        # iterative post-order: a node is emitted after all of its inputs
        order = []
        visited = {id(self)}
        stack = [(self, iter(self._parents))]
        while stack:
            node, parents = stack[-1]
            for parent in parents:
                if parent.requires_grad and id(parent) not in visited:
                    visited.add(id(parent))
                    stack.append((parent, iter(parent._parents)))
                    break
            else:
                stack.pop()
                order.append(node)

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            node.grad = g
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.dtype != parent.data.dtype:
                    pg = pg.astype(parent.data.dtype)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._parents = ()
            node._backward = None

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


_DETACHED = Tensor(0.0)


def _wrap(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _result(data, parents, backward):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        # inputs that were frozen at construction stay out of the graph even
        # if they are unfrozen before backward() runs
        out._parents = tuple(p if p.requires_grad else _DETACHED for p in parents)
        out._backward = backward
    return out


# -- elementwise ------------------------------------------------------------


def add(a, b):
    a = a if isinstance(a, Tensor) else _wrap(a, b)
    b = _wrap(b, a)
    _broadcast_shape(a.shape, b.shape)

    def bw(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b):
    a = a if isinstance(a, Tensor) else _wrap(a, b)
    b = _wrap(b, a)
    _broadcast_shape(a.shape, b.shape)

    def bw(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.shape) if b.requires_grad else None,
        )

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b):
    a = a if isinstance(a, Tensor) else _wrap(a, b)
    b = _wrap(b, a)
    _broadcast_shape(a.shape, b.shape)

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _result(a.data * b.data, (a, b), bw)


def div(a, b):
    a = a if isinstance(a, Tensor) else _wrap(a, b)
    b = _wrap(b, a)
    _broadcast_shape(a.shape, b.shape)
    out = a.data / b.data

    def bw(g):
        return (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
        )

    return _result(out, (a, b), bw)


def relu(x):
    pos = x.data > 0
    return _result(np.maximum(x.data, 0), (x,), lambda g: (g * pos,))


def leaky_relu(x, slope=0.2):
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return _result(x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x):
    s = expit(x.data)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),))


def square(x):
    return _result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def abs(x):  # noqa: A001 - mirrors numpy naming
    sign = np.sign(x.data)
    return _result(np.abs(x.data), (x,), lambda g: (g * sign,))


def log(x):
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(x):
    e = np.exp(x.data)
    return _result(e, (x,), lambda g: (g * e,))


def clip(x, lo, hi):
    """Clamp values; gradient passes only where the input is inside [lo, hi]."""
    inside = (x.data >= lo) & (x.data <= hi)
    return _result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "square": square,
    "abs": abs,
}


def elementwise(op, *operands, **kwargs):
    """Dispatch an elementwise operation by name (``"relu"``, ``"mul"``, ...)."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*(as_tensor(o) for o in operands), **kwargs)


# -- linear algebra -----------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return _result(a.data @ b.data, (a, b), bw)


def linear(x, w, b, activation=None, slope=0.2):
    """``act(x @ w + b)`` as one node; ``activation`` is None, "relu" or "leaky_relu".

    Equivalent to composing matmul, add and the activation, with fewer
    temporaries.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(f"linear shape mismatch: {x.shape} @ {w.shape} + {b.shape}")
    out = x.data @ w.data
    out += b.data
    if activation == "relu":
        active = out > 0
        np.maximum(out, 0, out=out)
    elif activation == "leaky_relu":
        active = out > 0
        out[~active] *= slope
    elif activation is not None:
        raise ContractError(f"unknown activation {activation!r}")

    def bw(g):
        if activation == "relu":
            g = g * active
        elif activation == "leaky_relu":
            g = np.where(active, g, g * np.asarray(slope, dtype=g.dtype))
        return (
            g @ w.data.T if x.requires_grad else None,
            x.data.T @ g if w.requires_grad else None,
            g.sum(axis=0) if b.requires_grad else None,
        )

    return _result(out, (x, w, b), bw)


# -- reductions and shape ops --------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if np.isscalar(axis) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(out)


def reduce_sum(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return _result(np.asarray(out, dtype=x.dtype), (x,), bw)


def reduce_mean(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(reduce_sum(x, axes, keepdims), 1.0 / max(n, 1))


def reduce(op, x, axis=None, keepdims=False):
    if op == "sum":
        return reduce_sum(x, axis, keepdims)
    if op == "mean":
        return reduce_mean(x, axis, keepdims)
    raise ContractError(f"unknown reduction {op!r}")


def reshape(x, shape):
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from exc
    return _result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    out = np.transpose(x.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _result(out, (x,), lambda g: (np.transpose(g, inv),))


def _is_basic(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)


def getitem(x, index):
    out = x.data[index]
    basic = _is_basic(index)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out, copy=True), (x,), bw)


def gather(x, flat_index):
    """Pick elements of ``x.ravel()`` at integer positions ``flat_index``.

    Repeated positions are allowed; their gradients accumulate.
    """
    flat_index = np.asarray(flat_index, dtype=np.intp)
    out = x.data.reshape(-1)[flat_index]

    def bw(g):
        full = np.bincount(flat_index.ravel(), weights=g.ravel(), minlength=x.size)
        return (full.astype(x.dtype, copy=False).reshape(x.shape),)

    return _result(out, (x,), bw)


def concatenate(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tuple(tensors), bw)


# -- convolution -------------------------------------------------------------


def _corr_valid(x, w):
    # x: (B, Ci, H, W), w: (Co, Ci, kh, kw) -> (B, Co, H-kh+1, W-kw+1)
    # accumulated one kernel tap at a time to avoid an im2col copy
    kh, kw = w.shape[2:]
    ho, wo = x.shape[2] - kh + 1, x.shape[3] - kw + 1
    b, ci = x.shape[:2]
    out = np.zeros((b, w.shape[0], ho * wo), dtype=np.result_type(x, w))
    for i in range(kh):
        for j in range(kw):
            out += w[:, :, i, j] @ x[:, :, i : i + ho, j : j + wo].reshape(b, ci, ho * wo)
    return out.reshape(b, w.shape[0], ho, wo)


def _corr_weight_grad(x, g, kh, kw):
    b, co, ho, wo = g.shape
    ci = x.shape[1]
    g2 = g.reshape(b, co, ho * wo)
    gw = np.empty((co, ci, kh, kw), dtype=np.result_type(x, g))
    for i in range(kh):
        for j in range(kw):
            xs = x[:, :, i : i + ho, j : j + wo].reshape(b, ci, ho * wo)
            gw[:, :, i, j] = (g2 @ xs.transpose(0, 2, 1)).sum(axis=0)
    return gw


def conv2d(x, w):
    """Valid 2-D cross-correlation.

    ``x`` has shape (B, Cin, H, W) and ``w`` has shape (Cout, Cin, kh, kw).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d shape mismatch: input {x.shape}, kernel {w.shape}")
    kh, kw = w.shape[2:]
    if x.shape[2] < kh or x.shape[3] < kw:
        raise DimensionError(f"conv2d kernel {w.shape} larger than input {x.shape}")
    out = _corr_valid(x.data, w.data)

    def bw(g):
        gx = gw = None
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            gx = _corr_valid(gp, w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        if w.requires_grad:
            gw = _corr_weight_grad(x.data, g, kh, kw)
        return gx, gw

    return _result(out, (x, w), bw)


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    """Moment estimates and hyperparameters for one parameter set."""

    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(
            first_moment=[np.zeros_like(p.data) for p in params],
            second_moment=[np.zeros_like(p.data) for p in params],
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(params, state):
    """Apply one bias-corrected Adam update in place, then clear gradients."""
    if len(params) != len(state.first_moment):
        raise ContractError(
            f"Adam state tracks {len(state.first_moment)} tensors, got {len(params)}"
        )
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"parameter {i} with shape {p.shape} has no gradient")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.grad = None


@dataclass
class Adam:
    """Adam optimizer bound to a fixed list of parameters."""

    params: list
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.params = list(self.params)
        self.state = AdamState.for_params(
            self.params, self.lr, self.betas[0], self.betas[1], self.eps
        )

    def step(self):
        adam_step(self.params, self.state)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
