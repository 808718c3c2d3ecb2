import numpy as np
import pytest
from scipy.signal import convolve2d

from helpers import check_grad
from knitwork._validation import ContractError, DimensionError
from knitwork.nets import (
    MLP,
    BaselineMLP,
    CheckpointError,
    DeepLinearKernel,
    KnownKernel,
    PatchDiscriminator,
    PatchMLP,
    Reconstructor,
    apply_kernel_downsample,
    collapse_kernel,
    config_digest,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from knitwork.tensor import Tensor
from knitwork.trainer import TrainConfig


def _zero(net):
    for p in net.parameters():
        p.data[...] = 0.0
    return net


def test_zero_weights_give_half():
    x = Tensor(np.random.default_rng(0).normal(size=(10, 256)))
    out = _zero(PatchMLP(256, 81))(x)
    assert out.shape == (10, 81)
    np.testing.assert_array_equal(out.data, 0.5)
    out = _zero(Reconstructor(81, 3))(Tensor(np.ones((4, 81))))
    assert out.shape == (4, 3) and np.all(out.data == 0.5)
    out = _zero(PatchDiscriminator(81))(Tensor(np.ones((5, 81))))
    assert out.shape == (5, 1) and np.all(out.data == 0.5)


@pytest.mark.parametrize("cls,n_in,n_out", [(PatchMLP, 6, 27), (Reconstructor, 27, 3), (PatchDiscriminator, 27, None)])
def test_first_layer_gradient(cls, n_in, n_out, rng):
    net = cls(n_in, n_out, 8, 2, rng=np.random.default_rng(1)) if n_out else cls(n_in, 8, 2, rng=np.random.default_rng(1))
    x = Tensor(rng.normal(size=(5, n_in)))

    def build(w):
        net.layers[0].weight = w
        return net(x).sum()

    assert check_grad(build, [net.layers[0].weight.data.copy()], h=1e-5) < 1e-4


def test_input_shape_checked():
    with pytest.raises(DimensionError):
        PatchMLP(4, 27)(Tensor(np.ones((2, 5))))
    with pytest.raises(ContractError):
        MLP(2, [3], 1, "tanh")


def test_parameter_counts():
    assert parameter_count(MLP(256, [], 256)) == 65_792
    cfg = TrainConfig()
    feats = 2 * cfg.n_frequencies
    d = cfg.patch_spec().stack_size(3)
    base = parameter_count(BaselineMLP(feats, 3))
    assert abs(base - 263_000) / 263_000 < 0.05
    full = parameter_count(PatchMLP(feats, d), Reconstructor(d, 3), PatchDiscriminator(d))
    assert abs(full - 512_000) / 512_000 < 0.10


def test_same_seed_same_weights():
    a = PatchMLP(8, 27, 16, 2, rng=np.random.default_rng(3))
    b = PatchMLP(8, 27, 16, 2, rng=np.random.default_rng(3))
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p.data, q.data)


def _delta_net(factor, sizes=(5, 3, 1)):
    net = DeepLinearKernel(factor, sizes, channels=4, noise=0.0)
    return net


def test_delta_kernel_is_subsampling(rng):
    img = rng.random((12, 12, 3))
    out = apply_kernel_downsample(Tensor(img), _delta_net(2), 2).data
    np.testing.assert_allclose(out, img[::2, ::2], atol=1e-14)
    np.testing.assert_allclose(collapse_kernel(_delta_net(2))[3, 3], 1.0)
    with pytest.raises(ContractError):
        apply_kernel_downsample(Tensor(rng.random((11, 12, 1))), _delta_net(2))


def test_collapse_examples(rng):
    single = DeepLinearKernel(2, (5,), rng=rng, noise=0.1)
    np.testing.assert_array_equal(single.collapse(), single.weights[0].data[0, 0])
    two = DeepLinearKernel(2, (3, 3), channels=1, noise=0.0)
    expected = np.zeros((5, 5))
    expected[2, 2] = 1.0
    np.testing.assert_allclose(two.collapse(), expected, atol=1e-15)


def _sequential(net, img2d):
    # layer by layer on a zero-padded plane, multi-channel
    x = img2d[None]
    for w in net.weights:
        w = w.data
        x = np.stack([sum(convolve2d(x[i], w[o, i]) for i in range(w.shape[1])) for o in range(w.shape[0])])
    return x[0]


def test_collapse_matches_sequential_on_impulse():
    net = DeepLinearKernel(2, (5, 3, 3), channels=3, noise=0.3, rng=np.random.default_rng(4))
    impulse = np.zeros((1, 1))
    impulse[0, 0] = 1.0
    np.testing.assert_allclose(net.collapse(), _sequential(net, impulse), atol=1e-10)
    np.testing.assert_allclose(net.kernel_tensor().data[0, 0], net.collapse(), atol=1e-10)


def test_impulse_response_equals_kernel():
    y, x = np.mgrid[-3:4, -3:4]
    gauss = np.exp(-(x**2 + y**2) / 2.0)
    gauss /= gauss.sum()
    img = np.zeros((15, 15, 1))
    img[7, 7] = 1.0
    out = KnownKernel(gauss, 1)(Tensor(img)).data[:, :, 0]
    np.testing.assert_allclose(out[4:11, 4:11], gauss, atol=1e-10)
    net = DeepLinearKernel(1, (5, 3), channels=2, noise=0.2, rng=np.random.default_rng(9))
    out = net(Tensor(img)).data[:, :, 0]
    np.testing.assert_allclose(out[4:11, 4:11], net.collapse(), atol=1e-10)


def test_kernel_gradients(rng):
    net = DeepLinearKernel(2, (3, 3), channels=2, noise=0.2, rng=np.random.default_rng(2))
    img = rng.random((8, 8, 1))
    probe = rng.normal(size=(4, 4, 1))

    def build(img_t, w0, w1):
        net.weights = [w0, w1]
        return (net(img_t) * Tensor(probe)).sum()

    assert check_grad(build, [img, net.weights[0].data.copy(), net.weights[1].data.copy()]) < 1e-6


def test_even_kernel_sizes_rejected():
    with pytest.raises(ContractError):
        DeepLinearKernel(2, (4, 3))
    with pytest.raises(ContractError):
        KnownKernel(np.ones((2, 2)), 2)


def test_checkpoint_round_trip(tmp_path, rng):
    arrays = {"a": rng.normal(size=(3, 4)), "b": np.array(2.5), "c": rng.normal(size=7)}
    digest = config_digest({"seed": 3})
    path = tmp_path / "x.nkwk"
    save_checkpoint(path, arrays, digest, meta={"step": 5})
    back, d2, meta = load_checkpoint(path)
    assert d2 == digest and meta == {"step": 5}
    for k in arrays:
        assert back[k].tobytes() == np.asarray(arrays[k], dtype=np.float64).tobytes()


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "x.nkwk"
    save_checkpoint(path, {"a": np.ones(100)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
    with pytest.raises(CheckpointError):
        save_checkpoint(path, {}, digest=b"short")
