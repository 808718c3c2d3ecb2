"""Task drivers: inpainting, blind super-resolution, denoising and the
conventional coordinate-MLP control."""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ._validation import ContractError, check_image
from .imageio import KERNELS, Rect, add_gaussian_noise, downsample, make_kernel
from .metrics import evaluate, psnr
from .nets import collapse_kernel
from .trainer import ImageTarget, SuperResTarget, TrainConfig, fit, render


@dataclass(frozen=True)
class InpaintSpec:
    hole: Rect

    def known_mask(self, shape):
        return self.hole.mask(shape)


@dataclass(frozen=True)
class SrSpec:
    """``kernel`` is ``"learned"``, a name from ``KERNELS`` or an explicit array."""

    factor: int
    kernel: object = "learned"

    def __post_init__(self):
        if int(self.factor) < 2:
            raise ContractError(f"super-resolution factor must be >= 2, got {self.factor}")
        if isinstance(self.kernel, str) and self.kernel != "learned" and self.kernel not in KERNELS:
            raise ContractError(f"unknown kernel {self.kernel!r}; choose 'learned' or one of {KERNELS}")

    @property
    def learned(self):
        return isinstance(self.kernel, str) and self.kernel == "learned"

    def kernel_array(self):
        if self.learned:
            return None
        if isinstance(self.kernel, str):
            return make_kernel(self.kernel, self.factor)
        return np.asarray(self.kernel, dtype=np.float64)


@dataclass(frozen=True)
class DenoiseSpec:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ContractError(f"noise sigma must be non-negative, got {self.sigma}")

    def corrupt(self, clean):
        return add_gaussian_noise(clean, self.sigma, self.seed)


@dataclass
class TaskResult:
    """``metrics`` maps a region name to a MetricReport, or None when undefined."""

    output: np.ndarray
    state: object
    metrics: dict = field(default_factory=dict)
    kernel: np.ndarray = None
    extra: dict = field(default_factory=dict)


def _baseline_config(config):
    return dataclasses.replace(config, patch_output=False, xpatch_loss=False, adversarial=False)


def run_inpaint(image, spec, config, *, baseline=False, out_dir=None):
    """Fill ``spec.hole`` in ``image``.

    The hole pixels of ``image`` are never seen by the losses; they are
    used only as the reference for the region metrics.
    """
    image = check_image(image)
    known = spec.known_mask(image.shape[:2])
    if not known.any():
        raise ContractError("hole covers the entire image")
    if baseline:
        config = _baseline_config(config)
    state = fit(ImageTarget(image, known), config, out_dir=out_dir)
    output = np.clip(render(state), 0.0, 1.0)
    metrics = {"whole": evaluate(output, image, region="whole")}
    metrics["region"] = evaluate(output, image, ~known, region="hole") if not known.all() else None
    return TaskResult(output, state, metrics, extra={"known": known})


def run_superres(low_res, spec, config, *, reference=None, true_kernel=None, baseline=False, out_dir=None):
    """Upscale ``low_res`` by ``spec.factor``.

    ``reference`` is an optional high-res ground truth. The consistency
    metric downsamples the output with ``true_kernel`` (default: the
    spec's kernel when it is known) and compares with ``low_res``.
    """
    low_res = check_image(low_res, "low_res")
    k = int(spec.factor)
    h, w = low_res.shape[:2]
    if baseline:
        state = fit(ImageTarget(low_res), _baseline_config(config), out_dir=out_dir)
        kernel = None
    else:
        state = fit(SuperResTarget(low_res, k, spec.kernel_array()), config, out_dir=out_dir)
        kernel = collapse_kernel(state.downsampler)
    # the encoding frame is normalized, so a fine grid is an interpolation
    output = np.clip(render(state, (h * k, w * k)), 0.0, 1.0)
    metrics = {}
    if reference is not None:
        metrics["whole"] = evaluate(output, reference, region="whole")
    check = true_kernel if true_kernel is not None else spec.kernel_array()
    if check is not None:
        metrics["consistency_psnr"] = psnr(downsample(output, check, k), low_res)
    return TaskResult(output, state, metrics, kernel)


def run_denoise(noisy, spec, config, *, clean=None, baseline=False, out_dir=None):
    """Fit ``noisy`` with unit masks; metrics are reported when ``clean`` is given."""
    noisy = check_image(noisy, "noisy")
    if baseline:
        config = _baseline_config(config)
    state = fit(ImageTarget(noisy), config, out_dir=out_dir)
    output = np.clip(render(state), 0.0, 1.0)
    metrics = {}
    if clean is not None:
        metrics["whole"] = evaluate(output, clean, region="whole")
        metrics["noisy_input"] = evaluate(noisy, clean, region="noisy-input")
    return TaskResult(output, state, metrics)


def run_baseline_mlp(image, task_context=None, config=None, **kwargs):
    """Conventional coordinate MLP on the same task.

    ``task_context`` is an InpaintSpec, SrSpec, DenoiseSpec or None for a
    plain fit. For super-resolution the model is fit to the low-res image
    and rendered directly on the fine grid.
    """
    config = TrainConfig() if config is None else config
    if isinstance(task_context, InpaintSpec):
        return run_inpaint(image, task_context, config, baseline=True, **kwargs)
    if isinstance(task_context, SrSpec):
        return run_superres(image, task_context, config, baseline=True, **kwargs)
    if isinstance(task_context, DenoiseSpec):
        return run_denoise(image, task_context, config, baseline=True, **kwargs)
    if task_context is not None:
        raise ContractError(f"unsupported task context {type(task_context).__name__}")
    out_dir = kwargs.pop("out_dir", None)
    if kwargs:
        raise TypeError(f"unexpected arguments {sorted(kwargs)}")
    image = check_image(image)
    state = fit(ImageTarget(image), _baseline_config(config), out_dir=out_dir)
    output = np.clip(render(state), 0.0, 1.0)
    return TaskResult(output, state, {"whole": evaluate(output, image, region="whole")})


def run_fit(image, config, *, out_dir=None):
    """Plain fit of ``image`` with the configured model."""
    image = check_image(image)
    state = fit(ImageTarget(image), config, out_dir=out_dir)
    output = np.clip(render(state), 0.0, 1.0)
    return TaskResult(output, state, {"whole": evaluate(output, image, region="whole")})
