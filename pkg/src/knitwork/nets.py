"""Fully connected networks, the deep linear downsampling kernel, and checkpoints."""

import hashlib
import json
import struct

import numpy as np
from scipy.signal import convolve2d

from ._validation import ContractError, DimensionError, KnitworkError
from .patching import reflect_index
from .tensor import Tensor, conv2d, gather, linear, sigmoid

_ACTIVATIONS = {"relu", "leaky_relu"}


class Linear:
    """Affine layer ``x @ W + b`` with fan-in scaled uniform init."""

    def __init__(self, n_in, n_out, rng, gain=np.sqrt(2.0), dtype=np.float64):
        bound = gain * np.sqrt(3.0 / n_in)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)

    def __call__(self, x, activation=None, slope=0.2):
        return linear(x, self.weight, self.bias, activation, slope)

    def parameters(self):
        return [self.weight, self.bias]


class MLP:
    """Stack of hidden layers with a common activation and a sigmoid head.

    Parameters
    ----------
    n_in, n_out : int
    hidden : sequence of int
        Width of each hidden layer.
    activation : {"relu", "leaky_relu"}
    slope : float
        Negative slope for ``leaky_relu``.
    rng : numpy Generator
    """

    def __init__(self, n_in, hidden, n_out, activation="relu", slope=0.2, rng=None, dtype=np.float64):
        if activation not in _ACTIVATIONS:
            raise ContractError(f"unknown activation {activation!r}")
        rng = np.random.default_rng() if rng is None else rng
        self.n_in, self.n_out = int(n_in), int(n_out)
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        self.slope = float(slope)
        gain = np.sqrt(2.0) if activation == "relu" else np.sqrt(2.0 / (1.0 + slope**2))
        widths = (self.n_in,) + self.hidden
        self.layers = [Linear(a, b, rng, gain, dtype) for a, b in zip(widths[:-1], widths[1:])]
        self.layers.append(Linear(widths[-1], self.n_out, rng, 1.0, dtype))

    def __call__(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionError(f"{type(self).__name__} expects (N, {self.n_in}) input, got {x.shape}")
        for layer in self.layers[:-1]:
            x = layer(x, self.activation, self.slope)
        return sigmoid(self.layers[-1](x))

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            out.append((f"{i}.weight", layer.weight))
            out.append((f"{i}.bias", layer.bias))
        return out


class PatchMLP(MLP):
    """Coordinate features -> flattened multi-scale patch stack."""

    def __init__(self, n_features, stack_size, width=256, depth=4, rng=None, dtype=np.float64):
        super().__init__(n_features, [width] * depth, stack_size, "relu", rng=rng, dtype=dtype)


class Reconstructor(MLP):
    """Flattened patch stack -> single pixel color."""

    def __init__(self, stack_size, channels, width=256, depth=2, rng=None, dtype=np.float64):
        super().__init__(stack_size, [width] * depth, channels, "relu", rng=rng, dtype=dtype)


class PatchDiscriminator(MLP):
    """Flattened patch stack -> probability that it is a real patch."""

    def __init__(self, stack_size, width=256, depth=3, slope=0.2, rng=None, dtype=np.float64):
        super().__init__(stack_size, [width] * depth, 1, "leaky_relu", slope=slope, rng=rng, dtype=dtype)


class BaselineMLP(MLP):
    """Conventional coordinate MLP: features -> pixel color."""

    def __init__(self, n_features, channels, width=256, depth=4, rng=None, dtype=np.float64):
        super().__init__(n_features, [width] * depth, channels, "relu", rng=rng, dtype=dtype)


def forward_patch_mlp(features, net):
    return net(features)


def forward_reconstructor(stacks, net):
    return net(stacks)


def forward_discriminator(stacks, net):
    return net(stacks)


def parameter_count(*nets):
    """Total number of scalar parameters across ``nets``."""
    return int(sum(p.size for net in nets if net is not None for p in net.parameters()))


# -- downsampling kernels -------------------------------------------------------


def _reflect_pad_index(h, w, pad):
    rows = reflect_index(np.arange(-pad, h + pad), h)
    cols = reflect_index(np.arange(-pad, w + pad), w)
    return rows[:, None] * w + cols[None, :]


def _downsample_tensor(img, kernels, factor):
    """Convolve each channel of an (H, W, C) tensor with ``kernels`` in turn.

    ``kernels`` are (Cout, Cin, k, k) tensors applied as true convolutions
    (flipped correlation) after reflect-padding by the total radius. The
    result is subsampled with stride ``factor`` starting at ``(factor - 1) // 2``.
    """
    h, w, c = img.shape
    if h % factor or w % factor:
        raise ContractError(f"image {h}x{w} is not divisible by factor {factor}")
    pad = sum((k.shape[-1] - 1) // 2 for k in kernels)
    if 2 * pad + 1 > min(h, w):
        raise ContractError(f"kernel support {2 * pad + 1} exceeds image size {h}x{w}")
    idx = _reflect_pad_index(h, w, pad)  # (H+2p, W+2p) flat pixel indices
    flat_idx = idx[None, :, :] + np.arange(c)[:, None, None] * (h * w)
    planar = img.transpose(2, 0, 1)  # (C, H, W)
    x = gather(planar, flat_idx).reshape(c, 1, h + 2 * pad, w + 2 * pad)
    for k in kernels:
        x = conv2d(x, k[:, :, ::-1, ::-1])
    start = (factor - 1) // 2
    x = x[:, 0, start::factor, start::factor]
    return x.transpose(1, 2, 0)


class KnownKernel:
    """Fixed downsampling kernel; differentiable with respect to the image."""

    def __init__(self, kernel, factor, dtype=np.float64):
        k = np.asarray(kernel, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
            raise ContractError(f"kernel must be square with odd size, got {k.shape}")
        self.factor = int(factor)
        self._kernel = Tensor(k[None, None].astype(dtype))

    def __call__(self, img):
        return _downsample_tensor(img, [self._kernel], self.factor)

    def collapse(self):
        return self._kernel.data[0, 0].astype(np.float64)

    def parameters(self):
        return []

    def named_parameters(self):
        return []


class DeepLinearKernel:
    """Activation-free convolution stack whose composition is one kernel.

    Parameters
    ----------
    factor : int
        Stride of the final subsampling.
    sizes : sequence of odd int
        Spatial size of each layer; the effective support is
        ``sum(sizes) - len(sizes) + 1``.
    channels : int
        Width of the hidden layers.
    noise : float
        Standard deviation of the perturbation added to the delta init.
    """

    def __init__(self, factor, sizes=(7, 5, 3, 1, 1), channels=16, noise=1e-3, rng=None, dtype=np.float64):
        if any(s % 2 == 0 for s in sizes):
            raise ContractError(f"kernel layer sizes must be odd, got {sizes}")
        rng = np.random.default_rng() if rng is None else rng
        self.factor = int(factor)
        self.sizes = tuple(int(s) for s in sizes)
        self.channels = int(channels)
        n = len(self.sizes)
        widths = [1] + [self.channels] * (n - 1) + [1]
        self.weights = []
        for (cin, cout), k in zip(zip(widths[:-1], widths[1:]), self.sizes):
            w = rng.normal(0.0, noise, size=(cout, cin, k, k))
            w[:, :, k // 2, k // 2] += 1.0 / cin
            self.weights.append(Tensor(w.astype(dtype), requires_grad=True))

    @property
    def support(self):
        return sum(self.sizes) - len(self.sizes) + 1

    def kernel_tensor(self):
        """The effective kernel as a differentiable (1, 1, S, S) tensor.

        Obtained by pushing a unit impulse through the layers, which costs far
        less than running every layer over the full image.
        """
        s = self.support
        impulse = np.zeros((1, 1, 2 * s - 1, 2 * s - 1), dtype=self.weights[0].dtype)
        impulse[0, 0, s - 1, s - 1] = 1.0
        x = Tensor(impulse)
        for w in self.weights:
            x = conv2d(x, w[:, :, ::-1, ::-1])
        return x

    def __call__(self, img):
        return _downsample_tensor(img, [self.kernel_tensor()], self.factor)

    def collapse(self):
        """Single effective (support x support) kernel."""
        eff = self.weights[0].data.astype(np.float64)  # (C1, 1, k, k)
        for w in self.weights[1:]:
            w = w.data.astype(np.float64)
            co, ci = w.shape[:2]
            ks = eff.shape[-1] + w.shape[-1] - 1
            nxt = np.zeros((co, eff.shape[1], ks, ks))
            for o in range(co):
                for i in range(eff.shape[1]):
                    nxt[o, i] = sum(convolve2d(eff[c, i], w[o, c]) for c in range(ci))
            eff = nxt
        return eff[0, 0]

    def parameters(self):
        return list(self.weights)

    def named_parameters(self):
        return [(f"{i}.weight", w) for i, w in enumerate(self.weights)]


def collapse_kernel(net):
    return net.collapse()


def apply_kernel_downsample(img, net, factor=None):
    """Downsample an (H, W, C) tensor with ``net``; H and W must divide by the factor."""
    if factor is not None and factor != net.factor:
        raise ContractError(f"factor {factor} does not match kernel factor {net.factor}")
    return net(img)


# -- checkpoints --------------------------------------------------------------

MAGIC = b"NKWK"
VERSION = 1


class CheckpointError(KnitworkError, ValueError):
    pass


def config_digest(config):
    """SHA-256 over the canonical JSON form of ``config``."""
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode()).digest()


def save_checkpoint(path, arrays, digest=b"\0" * 32, meta=None):
    """Write named arrays as little-endian float64 blobs.

    Layout: magic, u32 version, 32-byte config digest, u32 manifest length,
    JSON manifest ``{"meta": ..., "tensors": [{"name", "shape"}, ...]}``,
    then the blobs in manifest order.
    """
    if len(digest) != 32:
        raise CheckpointError("config digest must be 32 bytes")
    names = list(arrays)
    manifest = {
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(np.shape(arrays[n]))} for n in names],
    }
    header = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(digest)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(arrays, digest, meta)`` from a file written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    digest = raw[8:40]
    (hlen,) = struct.unpack_from("<I", raw, 40)
    try:
        manifest = json.loads(raw[44 : 44 + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt manifest") from exc
    offset = 44 + hlen
    arrays = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        end = offset + 8 * n
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated at tensor {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    return arrays, digest, manifest["meta"]
