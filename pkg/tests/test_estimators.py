import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from knitwork import CoordinateMLP, KnitworkSuperResolver, NeuralKnitwork

TINY = dict(iterations=3, batch_size=32, n_frequencies=8, seed=1)


def img(h=8, w=8):
    y, x = np.mgrid[0:h, 0:w] / 8
    return np.stack([x, y, 0.5 * (x + y)], axis=-1) * 0.8 + 0.1


def test_params_and_clone():
    est = NeuralKnitwork(alpha=2.0, iterations=5)
    assert est.get_params()["alpha"] == 2.0
    copy = clone(est)
    assert copy.get_params() == est.get_params() and copy is not est
    est.set_params(gamma=0.0)
    assert est.gamma == 0.0
    assert "patch_output" not in CoordinateMLP().get_params()


def test_not_fitted():
    with pytest.raises(NotFittedError):
        NeuralKnitwork().transform()


def test_fit_transform_and_mask():
    known = np.ones((8, 8), bool)
    known[3:5, 3:5] = False
    est = NeuralKnitwork(**TINY).fit(img(), known_mask=known)
    out = est.transform()
    assert out.shape == (8, 8, 3) and out.min() >= 0 and out.max() <= 1
    assert len(est.history_) == 3
    assert est.predict(np.array([[0.5, 0.5]])).shape == (1, 3)
    assert np.isfinite(est.score(img()))
    assert est.render((16, 16)).shape == (16, 16, 3)


def test_coordinate_mlp_is_pixel_model():
    est = CoordinateMLP(**TINY).fit(img())
    assert est.state_.reconstructor is None
    np.testing.assert_array_equal(est.transform(), CoordinateMLP(**TINY).fit(img()).transform())


def test_super_resolver():
    est = KnitworkSuperResolver(factor=2, kernel_sizes=(3, 1), kernel_channels=2, **TINY)
    out = est.fit_transform(img(8, 8))
    assert out.shape == (16, 16, 3) and est.kernel_.shape == (3, 3)
