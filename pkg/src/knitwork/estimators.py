"""scikit-learn style wrappers around the trainer.

The estimators follow the usual conventions: hyperparameters are plain
``__init__`` arguments, learned state lives in attributes with a trailing
underscore, and ``fit`` returns ``self``. One "sample" is one image.
"""

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import ContractError, check_image, check_mask
from .encoding import CoordinateBatch
from .metrics import psnr
from .nets import collapse_kernel
from .trainer import ImageTarget, SuperResTarget, TrainConfig, fit, predict_colors, render

_CONFIG_FIELDS = tuple(f.name for f in dataclasses.fields(TrainConfig))


class _KnitworkBase(BaseEstimator):
    _fixed = {}

    def _config(self):
        params = {k: v for k, v in self.get_params().items() if k in _CONFIG_FIELDS}
        params.update(self._fixed)
        return TrainConfig(**params).validate()

    def predict(self, coords):
        """Colors at ``coords``: a CoordinateBatch or (N, 2) array in [0, 1]^2."""
        check_is_fitted(self, "state_")
        if not isinstance(coords, CoordinateBatch):
            coords = np.asarray(coords, dtype=np.float64)
            if coords.ndim != 2 or coords.shape[1] != 2:
                raise ContractError(f"coords must be (N, 2), got {coords.shape}")
        return predict_colors(self.state_, coords)

    def render(self, shape=None):
        """Image on an ``shape`` grid, by default the training grid."""
        check_is_fitted(self, "state_")
        return np.clip(render(self.state_, shape), 0.0, 1.0)

    @property
    def history_(self):
        check_is_fitted(self, "state_")
        return self.state_.history


class NeuralKnitwork(TransformerMixin, _KnitworkBase, auto_wrap_output_keys=None):
    """Patch-predicting coordinate network fit to a single image.

    ``fit(X, known_mask=...)`` ignores pixels where the mask is False, so
    ``transform`` fills them in (inpainting). Without a mask it is a plain
    fit, which on a noisy input acts as a denoiser.
    """

    def __init__(
        self,
        alpha=1.0,
        beta=1.0,
        gamma=0.1,
        lr_g=1e-4,
        lr_d=1e-4,
        iterations=10_000,
        batch_size=1024,
        d_steps_per_g=1,
        seed=0,
        patch_size=3,
        scales=(1, 2, 4),
        blur_per_scale=0.5,
        n_frequencies=128,
        sigma_pe=10.0,
        patch_output=True,
        xpatch_loss=True,
        adversarial=True,
        gan_form="nonsat",
        label_smoothing=0.1,
        dtype="float32",
        log_every=0,
    ):
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.lr_g = lr_g
        self.lr_d = lr_d
        self.iterations = iterations
        self.batch_size = batch_size
        self.d_steps_per_g = d_steps_per_g
        self.seed = seed
        self.patch_size = patch_size
        self.scales = scales
        self.blur_per_scale = blur_per_scale
        self.n_frequencies = n_frequencies
        self.sigma_pe = sigma_pe
        self.patch_output = patch_output
        self.xpatch_loss = xpatch_loss
        self.adversarial = adversarial
        self.gan_form = gan_form
        self.label_smoothing = label_smoothing
        self.dtype = dtype
        self.log_every = log_every

    def fit(self, X, y=None, known_mask=None):
        X = check_image(X, "X")
        if known_mask is not None:
            known_mask = check_mask(known_mask, X.shape[:2], "known_mask")
        self.state_ = fit(ImageTarget(X, known_mask), self._config())
        self.shape_ = X.shape
        return self

    def transform(self, X=None):
        """Rendered image on the grid of ``X`` (or of the training image)."""
        check_is_fitted(self, "state_")
        shape = self.shape_[:2] if X is None else check_image(X, "X").shape[:2]
        return self.render(shape)

    def score(self, X, y=None, region_mask=None):
        """PSNR in dB of the rendering against ``X``."""
        return psnr(self.transform(X), X, region_mask)


class CoordinateMLP(NeuralKnitwork):
    """Conventional coordinate MLP predicting one color per pixel."""

    _fixed = {"patch_output": False, "xpatch_loss": False, "adversarial": False}

    def __init__(
        self,
        lr_g=1e-4,
        iterations=10_000,
        batch_size=1024,
        seed=0,
        n_frequencies=128,
        sigma_pe=10.0,
        dtype="float32",
        log_every=0,
    ):
        self.lr_g = lr_g
        self.iterations = iterations
        self.batch_size = batch_size
        self.seed = seed
        self.n_frequencies = n_frequencies
        self.sigma_pe = sigma_pe
        self.dtype = dtype
        self.log_every = log_every


class KnitworkSuperResolver(_KnitworkBase):
    """Fit a ``factor`` times finer grid to a low-res image.

    ``kernel=None`` learns the downsampling kernel; the collapsed estimate
    is exposed as ``kernel_``.
    """

    def __init__(
        self,
        factor=2,
        kernel=None,
        alpha=1.0,
        gamma=0.1,
        delta=10.0,
        lr_g=1e-4,
        lr_d=1e-4,
        lr_kernel=1e-4,
        iterations=10_000,
        batch_size=1024,
        seed=0,
        scales=(1, 2, 4),
        n_frequencies=128,
        sigma_pe=10.0,
        xpatch_loss=True,
        adversarial=True,
        kernel_sizes=(7, 5, 3, 1, 1),
        kernel_channels=16,
        kernel_sum_weight=1.0,
        sr_pixel_loss=False,
        dtype="float32",
        log_every=0,
    ):
        self.factor = factor
        self.kernel = kernel
        self.alpha = alpha
        self.gamma = gamma
        self.delta = delta
        self.lr_g = lr_g
        self.lr_d = lr_d
        self.lr_kernel = lr_kernel
        self.iterations = iterations
        self.batch_size = batch_size
        self.seed = seed
        self.scales = scales
        self.n_frequencies = n_frequencies
        self.sigma_pe = sigma_pe
        self.xpatch_loss = xpatch_loss
        self.adversarial = adversarial
        self.kernel_sizes = kernel_sizes
        self.kernel_channels = kernel_channels
        self.kernel_sum_weight = kernel_sum_weight
        self.sr_pixel_loss = sr_pixel_loss
        self.dtype = dtype
        self.log_every = log_every

    def fit(self, X, y=None):
        X = check_image(X, "X")
        self.state_ = fit(SuperResTarget(X, self.factor, self.kernel), self._config())
        self.kernel_ = collapse_kernel(self.state_.downsampler)
        self.low_res_shape_ = X.shape
        return self

    def transform(self, X=None):
        """The super-resolved image (``X`` is accepted for API symmetry)."""
        check_is_fitted(self, "state_")
        return self.render()

    def fit_transform(self, X, y=None):
        return self.fit(X).transform()
