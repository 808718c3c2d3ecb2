"""Alternating generator / discriminator optimization over coordinate batches.

Two kinds of training target are supported: :class:`ImageTarget` fits an
image (optionally with unknown pixels) and :class:`SuperResTarget` fits a
finer grid supervised only through a downsampling operator.
"""

import csv
import dataclasses
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from ._validation import ContractError, TrainingError, check_image, check_mask, resolve_dtype
from .encoding import CoordinateBatch, FourierEncoding
from .losses import (
    LossReport,
    LossWeights,
    cross_patch_loss,
    disc_loss,
    gen_adv_loss,
    patch_recon_loss,
    pixel_loss,
    total_generator_loss,
)
from .nets import (
    BaselineMLP,
    CheckpointError,
    DeepLinearKernel,
    KnownKernel,
    PatchDiscriminator,
    PatchMLP,
    Reconstructor,
    config_digest,
    load_checkpoint,
    save_checkpoint,
)
from .patching import PatchSpec, extract_mask_stacks, extract_stacks, shift_map
from .tensor import Adam, Tensor, frozen, no_grad, square

log = logging.getLogger(__name__)

CSV_NAME = "losses.csv"


@dataclass
class TrainConfig:
    """Every hyperparameter of a run. Defaults are desk-scale choices."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.1
    delta: float = 10.0
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    lr_kernel: float = 1e-4
    iterations: int = 10_000
    batch_size: int = 1024
    d_steps_per_g: int = 1
    seed: int = 0
    patch_size: int = 3
    scales: tuple = (1, 2, 4)
    blur_per_scale: float = 0.5
    n_frequencies: int = 128
    sigma_pe: float = 10.0
    patch_width: int = 256
    patch_depth: int = 4
    recon_width: int = 256
    recon_depth: int = 2
    disc_width: int = 256
    disc_depth: int = 3
    disc_slope: float = 0.2
    patch_output: bool = True
    xpatch_loss: bool = True
    adversarial: bool = True
    gan_form: str = "nonsat"
    label_smoothing: float = 0.1
    scale_weights: tuple = None
    kernel_sizes: tuple = (7, 5, 3, 1, 1)
    kernel_channels: int = 16
    kernel_sum_weight: float = 1.0
    sr_pixel_loss: bool = False
    dtype: str = "float32"
    checkpoint_every: int = 0
    log_every: int = 100

    # settings that do not change the trajectory of a run
    RUNTIME_KEYS = ("iterations", "checkpoint_every", "log_every")

    def __post_init__(self):
        self.scales = tuple(int(s) for s in self.scales)
        self.kernel_sizes = tuple(int(s) for s in self.kernel_sizes)
        if self.scale_weights is not None:
            self.scale_weights = tuple(float(v) for v in self.scale_weights)

    def validate(self):
        if self.iterations < 1:
            raise ContractError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.d_steps_per_g < 1:
            raise ContractError("d_steps_per_g must be >= 1")
        if not self.patch_output and (self.xpatch_loss or self.adversarial):
            raise ContractError("cross-patch and adversarial terms need patch output")
        if self.gan_form not in ("nonsat", "minimax"):
            raise ContractError(f"gan_form must be 'nonsat' or 'minimax', got {self.gan_form!r}")
        if self.scale_weights is not None and len(self.scale_weights) != len(self.scales):
            raise ContractError("scale_weights needs one entry per scale")
        resolve_dtype(self.dtype)
        self.loss_weights()
        self.patch_spec()
        return self

    def loss_weights(self):
        return LossWeights(self.alpha, self.beta, self.gamma, self.delta)

    def patch_spec(self):
        sigmas = tuple(0.0 if f == 1 else self.blur_per_scale * f for f in self.scales)
        return PatchSpec(self.patch_size, self.scales, sigmas)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def from_dict(cls, values):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def digest(self):
        d = {k: v for k, v in self.to_dict().items() if k not in self.RUNTIME_KEYS}
        return config_digest(d)


@dataclass
class ImageTarget:
    """Fit ``image``; pixels where ``known`` is False carry no supervision."""

    image: np.ndarray
    known: np.ndarray = None


@dataclass
class SuperResTarget:
    """Fit a ``factor`` times finer grid whose downsampled render matches
    ``low_res``. ``kernel=None`` learns the kernel."""

    low_res: np.ndarray
    factor: int
    kernel: np.ndarray = None


@dataclass
class TrainState:
    config: TrainConfig
    grid_shape: tuple
    channels: int
    encoding: FourierEncoding
    generator: object
    reconstructor: object = None
    discriminator: object = None
    downsampler: object = None
    opt_g: Adam = None
    opt_d: Adam = None
    opt_k: Adam = None
    rng: np.random.Generator = None
    step: int = 0
    history: list = field(default_factory=list)

    def networks(self):
        nets = {
            "generator": self.generator,
            "reconstructor": self.reconstructor,
            "discriminator": self.discriminator,
            "downsampler": self.downsampler,
        }
        return {k: v for k, v in nets.items() if v is not None}

    def generator_params(self):
        params = list(self.generator.parameters())
        if self.reconstructor is not None:
            params += self.reconstructor.parameters()
        return params


@dataclass
class _Context:
    """Arrays derived once from the target."""

    kind: str
    grid_shape: tuple
    channels: int
    features: np.ndarray
    pixels: np.ndarray = None
    known: np.ndarray = None
    truth: np.ndarray = None
    mask: np.ndarray = None
    complete: np.ndarray = None
    shifts: object = None
    unique_shifts: np.ndarray = None
    low_res: np.ndarray = None
    real_stacks: np.ndarray = None
    low_res_features: np.ndarray = None
    factor: int = 1
    kernel: np.ndarray = None


def _seeds(seed):
    enc, gen, disc, kern, sample = np.random.SeedSequence(seed).spawn(5)
    return enc, gen, disc, kern, sample


def prepare(target, config):
    """Precompute features, ground-truth stacks and masks for ``target``."""
    dtype = resolve_dtype(config.dtype)
    enc_seed = _seeds(config.seed)[0]
    enc = FourierEncoding(config.n_frequencies, config.sigma_pe, enc_seed)
    spec = config.patch_spec()
    if isinstance(target, ImageTarget):
        img = check_image(target.image)
        h, w, c = img.shape
        known = np.ones((h, w), bool) if target.known is None else check_mask(target.known, (h, w), "known")
        if not known.any():
            raise ContractError("no known pixels to fit")
        train = img.copy()
        if not known.all():
            # unknown pixels never reach the losses, but blurred scales would
            # smear them into known elements; neutralize with the known mean
            train[~known] = img[known].mean(axis=0)
        ctx = _Context(
            "image",
            (h, w),
            c,
            enc.features(CoordinateBatch.grid(h, w), dtype=dtype),
            pixels=train.reshape(-1, c).astype(dtype),
            known=known.ravel(),
        )
        if config.patch_output:
            ctx.truth = extract_stacks(train, spec).astype(dtype)
            ctx.mask = extract_mask_stacks(known, spec, c).astype(dtype)
            ctx.complete = ctx.mask.all(axis=1)
            ctx.shifts = shift_map(spec, c)
            ctx.unique_shifts = ctx.shifts.unique_shifts
        return enc, ctx
    if isinstance(target, SuperResTarget):
        if not config.patch_output:
            raise ContractError("super-resolution training needs patch output")
        lr = check_image(target.low_res, "low_res")
        k = int(target.factor)
        if k < 2:
            raise ContractError(f"super-resolution factor must be >= 2, got {k}")
        h, w, c = lr.shape
        fine = (h * k, w * k)
        ctx = _Context(
            "superres",
            fine,
            c,
            enc.features(CoordinateBatch.grid(*fine), dtype=dtype),
            low_res=lr.astype(dtype),
            factor=k,
            kernel=None if target.kernel is None else np.asarray(target.kernel, dtype=np.float64),
        )
        ctx.real_stacks = extract_stacks(lr, spec).astype(dtype)
        ctx.shifts = shift_map(spec, c)
        ctx.unique_shifts = ctx.shifts.unique_shifts
        if config.sr_pixel_loss:
            ctx.low_res_features = enc.features(CoordinateBatch.grid(h, w), dtype=dtype)
        return enc, ctx
    raise ContractError(f"unsupported training target {type(target).__name__}")


def init_state(config, target):
    """Build freshly initialized networks and optimizers for ``target``."""
    config.validate()
    enc, ctx = prepare(target, config)
    return _init_state(config, enc, ctx), ctx


def _init_state(config, enc, ctx):
    dtype = resolve_dtype(config.dtype)
    _, gen_seed, disc_seed, kern_seed, sample_seed = _seeds(config.seed)
    gen_rng = np.random.default_rng(gen_seed)
    c = ctx.channels
    spec = config.patch_spec()
    d = spec.stack_size(c)
    state = TrainState(config, ctx.grid_shape, c, enc, None, rng=np.random.default_rng(sample_seed))
    if config.patch_output:
        state.generator = PatchMLP(enc.n_features, d, config.patch_width, config.patch_depth, gen_rng, dtype)
        state.reconstructor = Reconstructor(d, c, config.recon_width, config.recon_depth, gen_rng, dtype)
    else:
        state.generator = BaselineMLP(enc.n_features, c, config.patch_width, config.patch_depth, gen_rng, dtype)
    if config.adversarial:
        state.discriminator = PatchDiscriminator(
            d, config.disc_width, config.disc_depth, config.disc_slope, np.random.default_rng(disc_seed), dtype
        )
        state.opt_d = Adam(state.discriminator.parameters(), lr=config.lr_d)
    if ctx.kind == "superres":
        if ctx.kernel is None:
            state.downsampler = DeepLinearKernel(
                ctx.factor, config.kernel_sizes, config.kernel_channels, rng=np.random.default_rng(kern_seed), dtype=dtype,
            )
            state.opt_k = Adam(state.downsampler.parameters(), lr=config.lr_kernel)
        else:
            state.downsampler = KnownKernel(ctx.kernel, ctx.factor, dtype)
    state.opt_g = Adam(state.generator_params(), lr=config.lr_g)
    return state


# -- batches ----------------------------------------------------------------------


def sample_batch(shape, batch_size, rng):
    """Uniform sample of distinct pixels over the whole grid."""
    h, w = shape
    if batch_size < 1 or batch_size > h * w:
        raise ContractError(f"batch_size {batch_size} must be in [1, {h * w}] for a {h}x{w} grid")
    flat = rng.choice(h * w, size=batch_size, replace=False)
    return CoordinateBatch.from_flat(flat, (h, w))


def _with_neighbors(flat, shape, unique_shifts):
    """``flat`` followed by every in-bounds ``x + s`` not already present."""
    h, w = shape
    r, c = np.divmod(flat, w)
    tr = r[:, None] + unique_shifts[None, :, 0]
    tc = c[:, None] + unique_shifts[None, :, 1]
    ok = (tr >= 0) & (tr < h) & (tc >= 0) & (tc < w)
    nb = (tr * w + tc)[ok]
    present = np.zeros(h * w, dtype=bool)
    present[flat] = True
    extra = np.unique(nb[~present[nb]])
    return np.concatenate([flat, extra])


def _flat_to_indices(flat, w):
    return np.stack(np.divmod(flat, w), axis=1)


# -- steps --------------------------------------------------------------------------


def _check_finite(report, batch, state, out_dir):
    if report.is_finite():
        return
    dump = None
    if out_dir is not None:
        dump = os.path.join(out_dir, f"nan_dump_step{state.step + 1}.npz")
        np.savez(dump, batch=batch.indices, **{f: getattr(report, f) for f in LossReport.FIELDS[1:]})
    raise TrainingError(
        f"non-finite generator loss at step {state.step + 1}: {report}", batch=batch.indices, dump_path=dump
    )


def _fill_missing_grads(params):
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def generator_step(state, ctx, batch, out_dir=None):
    """One generator update on ``batch``; returns the LossReport."""
    cfg = state.config
    parts = {}
    flat = batch.flat
    n = len(flat)
    if ctx.kind == "superres":
        parts = _superres_parts(state, ctx, flat)
    elif not cfg.patch_output:
        colors = state.generator(Tensor(ctx.features[flat]))
        mask = np.repeat(ctx.known[flat, None], ctx.channels, axis=1)
        parts["recon"] = patch_recon_loss(colors, ctx.pixels[flat], mask)
    else:
        rows = _with_neighbors(flat, ctx.grid_shape, ctx.unique_shifts) if cfg.xpatch_loss else flat
        pred = state.generator(Tensor(ctx.features[rows]))
        pb = pred[:n] if len(rows) > n else pred
        parts["recon"] = patch_recon_loss(pb, ctx.truth[flat], ctx.mask[flat])
        if cfg.xpatch_loss:
            idx = _flat_to_indices(rows, ctx.grid_shape[1])
            parts["xpatch"] = cross_patch_loss(pred, idx, ctx.grid_shape, ctx.shifts, np.arange(n), cfg.scale_weights)
        colors = state.reconstructor(pb)
        parts["pixel"] = pixel_loss(colors, ctx.pixels[flat], ctx.known[flat])
        if cfg.adversarial:
            with frozen(state.discriminator.parameters()):
                parts["gen_bce"] = gen_adv_loss(state.discriminator(pb), cfg.gan_form)
    total, report = total_generator_loss(parts, cfg.loss_weights())
    _check_finite(report, batch, state, out_dir)
    total.backward()
    params = state.generator_params()
    _fill_missing_grads(params)
    state.opt_g.step()
    if state.opt_k is not None:
        _fill_missing_grads(state.opt_k.params)
        state.opt_k.step()
    return report


def _superres_parts(state, ctx, flat):
    cfg = state.config
    parts = {}
    pred = state.generator(Tensor(ctx.features))
    colors = state.reconstructor(pred)
    fine = colors.reshape(ctx.grid_shape[0], ctx.grid_shape[1], ctx.channels)
    down = state.downsampler(fine)
    # per-pixel squared error summed over low-res pixels, on the same
    # sum-over-coordinates footing as the reconstruction and cross-patch terms
    parts["down"] = square(down - ctx.low_res).sum() / ctx.channels
    if isinstance(state.downsampler, DeepLinearKernel) and cfg.kernel_sum_weight:
        # brightness is otherwise free to move between the kernel and the image
        drift = state.downsampler.kernel_tensor().sum() - 1.0
        parts["down"] = parts["down"] + cfg.kernel_sum_weight * square(drift)
    if cfg.xpatch_loss:
        idx = _flat_to_indices(np.arange(len(ctx.features)), ctx.grid_shape[1])
        parts["xpatch"] = cross_patch_loss(pred, idx, ctx.grid_shape, ctx.shifts, flat, cfg.scale_weights)
    if cfg.adversarial:
        with frozen(state.discriminator.parameters()):
            parts["gen_bce"] = gen_adv_loss(state.discriminator(pred[flat]), cfg.gan_form)
    if cfg.sr_pixel_loss:
        lr_colors = state.reconstructor(state.generator(Tensor(ctx.low_res_features)))
        parts["pixel"] = pixel_loss(lr_colors, ctx.low_res.reshape(-1, ctx.channels))
    return parts


def discriminator_step(state, ctx, batch):
    """One discriminator update; returns its BCE, or None when skipped.

    Real patches are ground-truth stacks with complete masks at the batch
    pixels (for super-resolution, an equally sized sample of low-res
    stacks); fake patches are detached generator predictions.
    """
    cfg = state.config
    flat = batch.flat
    if ctx.kind == "superres":
        n_lr = len(ctx.real_stacks)
        pick = state.rng.choice(n_lr, size=min(len(flat), n_lr), replace=False)
        real = ctx.real_stacks[pick]
    else:
        real = ctx.truth[flat[ctx.complete[flat]]]
    if len(real) == 0:
        log.warning("step %d: no fully known patches in batch; discriminator step skipped", state.step + 1)
        return None
    with no_grad():
        fake = state.generator(Tensor(ctx.features[flat])).data
    disc = state.discriminator
    with frozen(state.generator_params()):
        loss = disc_loss(disc(Tensor(real)), disc(Tensor(fake)), cfg.label_smoothing)
    loss.backward()
    _fill_missing_grads(state.opt_d.params)
    state.opt_d.step()
    return loss.item()


# -- loop ----------------------------------------------------------------------------


def fit(target, config, *, state=None, out_dir=None, callback=None):
    """Train on ``target`` until ``config.iterations`` generator steps.

    Each iteration runs ``d_steps_per_g`` discriminator steps (when the
    adversarial term is on) and one generator step. With ``out_dir``, loss
    rows are appended to ``losses.csv`` and checkpoints are written every
    ``checkpoint_every`` steps plus once at the end. Passing ``state``
    resumes a run.
    """
    config.validate()
    enc, ctx = prepare(target, config)
    if state is None:
        state = _init_state(config, enc, ctx)
    elif tuple(state.grid_shape) != tuple(ctx.grid_shape):
        raise ContractError("resumed state was trained on a different grid")
    grid = ctx.grid_shape
    batch_size = min(config.batch_size, grid[0] * grid[1])
    writer = fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, CSV_NAME)
        fresh = state.step == 0 or not os.path.exists(path)
        fh = open(path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(LossReport.FIELDS)
    t0 = time.perf_counter()
    try:
        while state.step < config.iterations:
            disc = None
            if state.discriminator is not None:
                for _ in range(config.d_steps_per_g):
                    value = discriminator_step(state, ctx, sample_batch(grid, batch_size, state.rng))
                    disc = value if value is not None else disc
            batch = sample_batch(grid, batch_size, state.rng)
            report = generator_step(state, ctx, batch, out_dir)
            state.step += 1
            report.step = state.step
            report.disc_bce = 0.0 if disc is None else disc
            state.history.append(report)
            if writer is not None:
                writer.writerow(report.row())
            if config.log_every and (state.step % config.log_every == 0 or state.step == config.iterations):
                log.info(
                    "step %d/%d recon=%.5g xpatch=%.5g pixel=%.5g gen=%.4g disc=%.4g down=%.4g total=%.5g elapsed=%.1fs",
                    state.step, config.iterations, report.recon, report.xpatch, report.pixel,
                    report.gen_bce, report.disc_bce, report.down, report.total_g, time.perf_counter() - t0,
                )
            if out_dir is not None and config.checkpoint_every and state.step % config.checkpoint_every == 0:
                save_state(state, os.path.join(out_dir, f"checkpoint_{state.step:06d}.nkwk"))
            if callback is not None:
                callback(state, report)
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        save_state(state, os.path.join(out_dir, "final.nkwk"))
    return state


# -- inference -----------------------------------------------------------------------


def predict_colors(state, coords, chunk=8192):
    """Colors at arbitrary coordinates: a CoordinateBatch or (N, 2) normalized array."""
    dtype = resolve_dtype(state.config.dtype)
    feats = state.encoding.features(coords, dtype=dtype)
    out = []
    with no_grad():
        for start in range(0, len(feats), chunk):
            x = state.generator(Tensor(feats[start : start + chunk]))
            if state.reconstructor is not None:
                x = state.reconstructor(x)
            out.append(x.data)
    return np.concatenate(out).astype(np.float64)


def predict_stacks(state, coords, chunk=8192):
    if state.reconstructor is None:
        raise ContractError("baseline model has no patch output")
    dtype = resolve_dtype(state.config.dtype)
    feats = state.encoding.features(coords, dtype=dtype)
    with no_grad():
        return np.concatenate(
            [state.generator(Tensor(feats[s : s + chunk])).data for s in range(0, len(feats), chunk)]
        ).astype(np.float64)


def render(state, shape=None):
    """Render an H x W x C image; ``shape`` defaults to the training grid."""
    h, w = state.grid_shape if shape is None else shape
    colors = predict_colors(state, CoordinateBatch.grid(h, w))
    return colors.reshape(h, w, state.channels)


# -- checkpoints -------------------------------------------------------------------


def _state_arrays(state):
    arrays = {"encoding/projection": state.encoding.projection}
    for net_name, net in state.networks().items():
        for pname, p in net.named_parameters():
            arrays[f"{net_name}/{pname}"] = p.data
    for opt_name in ("opt_g", "opt_d", "opt_k"):
        opt = getattr(state, opt_name)
        if opt is None:
            continue
        for i, (m, v) in enumerate(zip(opt.state.first_moment, opt.state.second_moment)):
            arrays[f"{opt_name}/m/{i}"] = m
            arrays[f"{opt_name}/v/{i}"] = v
    return arrays


def save_state(state, path):
    """Write networks, optimizer moments, step and RNG state."""
    meta = {
        "step": state.step,
        "grid_shape": list(state.grid_shape),
        "channels": state.channels,
        "rng": state.rng.bit_generator.state,
        "adam_steps": {
            name: getattr(state, name).state.step_count
            for name in ("opt_g", "opt_d", "opt_k")
            if getattr(state, name) is not None
        },
        "config": state.config.to_dict(),
    }
    save_checkpoint(path, _state_arrays(state), state.config.digest(), meta)


def load_state(path, target, config=None):
    """Restore a state written by :func:`save_state` for ``target``.

    ``config`` defaults to the one stored in the checkpoint; when given it
    must agree on everything except run-length settings.
    """
    arrays, digest, meta = load_checkpoint(path)
    if config is None:
        config = TrainConfig.from_dict(meta["config"])
    if digest != config.digest():
        raise CheckpointError(f"{path}: checkpoint was written with a different configuration")
    config.validate()
    enc, ctx = prepare(target, config)
    if list(ctx.grid_shape) != meta["grid_shape"] or ctx.channels != meta["channels"]:
        raise CheckpointError(f"{path}: checkpoint grid does not match the target")
    state = _init_state(config, enc, ctx)
    for name, value in _state_arrays(state).items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        if name == "encoding/projection":
            continue
        value[...] = arrays[name]
    state.encoding = FourierEncoding.from_projection(arrays["encoding/projection"])
    state.step = int(meta["step"])
    state.rng.bit_generator.state = meta["rng"]
    for name, count in meta["adam_steps"].items():
        getattr(state, name).state.step_count = int(count)
    return state
