"""Coordinate networks that predict multi-scale patch stacks for single-image
inpainting, super-resolution and denoising."""

__version__ = "0.1.0"

from ._validation import ContractError, DimensionError, KnitworkError, TrainingError
from .encoding import CoordinateBatch, FourierEncoding
from .estimators import CoordinateMLP, KnitworkSuperResolver, NeuralKnitwork
from .imageio import load_png, save_png
from .losses import LossReport, LossWeights
from .metrics import MetricReport, evaluate, psnr, ssim
from .patching import PatchSpec
from .tasks import DenoiseSpec, InpaintSpec, SrSpec, run_baseline_mlp, run_denoise, run_inpaint, run_superres
from .trainer import ImageTarget, SuperResTarget, TrainConfig, TrainState, fit, render

__all__ = [
    "ContractError",
    "CoordinateBatch",
    "CoordinateMLP",
    "DenoiseSpec",
    "DimensionError",
    "FourierEncoding",
    "ImageTarget",
    "InpaintSpec",
    "KnitworkError",
    "KnitworkSuperResolver",
    "LossReport",
    "LossWeights",
    "MetricReport",
    "NeuralKnitwork",
    "PatchSpec",
    "SrSpec",
    "SuperResTarget",
    "TrainConfig",
    "TrainState",
    "TrainingError",
    "evaluate",
    "fit",
    "load_png",
    "psnr",
    "render",
    "run_baseline_mlp",
    "run_denoise",
    "run_inpaint",
    "run_superres",
    "save_png",
    "ssim",
]
