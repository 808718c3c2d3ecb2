"""Command-line entry point ``knitwork``.

Settings resolve in three layers: built-in defaults, then the ``--config``
file, then explicit flags. The config file is flat ``key = value`` text
whose keys are the long flag names (``iters``, ``patch-size``, ...) or the
config field names; ``#`` starts a comment.
"""

import argparse
import ctypes
import dataclasses
import datetime
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from ._validation import KnitworkError, TrainingError
from .imageio import KERNELS, ImageIOError, Rect, load_mask_png, load_png, save_png
from .metrics import evaluate
from .nets import CheckpointError
from .tasks import DenoiseSpec, InpaintSpec, SrSpec, run_denoise, run_fit, run_inpaint, run_superres
from .trainer import TrainConfig

log = logging.getLogger("knitwork")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# flag name -> (config field, parser)
_FLAG_FIELDS = {
    "seed": ("seed", int),
    "iters": ("iterations", int),
    "alpha": ("alpha", float),
    "beta": ("beta", float),
    "gamma": ("gamma", float),
    "delta": ("delta", float),
    "scales": ("scales", lambda s: tuple(int(v) for v in str(s).split(","))),
    "patch-size": ("patch_size", int),
    "checkpoint-every": ("checkpoint_every", int),
    "lr-g": ("lr_g", float),
    "lr-d": ("lr_d", float),
    "lr-kernel": ("lr_kernel", float),
    "batch-size": ("batch_size", int),
    "d-steps": ("d_steps_per_g", int),
    "n-frequencies": ("n_frequencies", int),
    "sigma-pe": ("sigma_pe", float),
    "label-smoothing": ("label_smoothing", float),
    "gan-form": ("gan_form", str),
    "dtype": ("dtype", str),
    "log-every": ("log_every", int),
}

STAGES = {
    "mlp": {"patch_output": False, "xpatch_loss": False, "adversarial": False},
    "patch": {"patch_output": True, "xpatch_loss": False, "adversarial": False},
    "xpatch": {"patch_output": True, "xpatch_loss": True, "adversarial": False},
    "full": {"patch_output": True, "xpatch_loss": True, "adversarial": True},
}


class ConfigError(KnitworkError, ValueError):
    pass


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_tuple(text):
    text = str(text).strip()
    if text.lower() == "none":
        return None
    return tuple(float(v) if "." in v else int(v) for v in text.split(","))


def _field_parser(name):
    for f in dataclasses.fields(TrainConfig):
        if f.name == name:
            default = f.default
            break
    else:
        return None
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple) or default is None:
        return _parse_tuple
    return str


def read_config_file(path):
    """Parse a flat key = value file into TrainConfig field values."""
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lstrip("-")
        if key in _FLAG_FIELDS:
            name, parse = _FLAG_FIELDS[key]
        else:
            name = key.replace("-", "_")
            parse = _field_parser(name)
            if parse is None:
                raise ConfigError(f"{path}:{lineno}: unknown setting {key!r}")
        try:
            values[name] = parse(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
    return values


def write_config_file(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in config.to_dict().items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif value is None:
                value = "none"
            fh.write(f"{key.replace('_', '-')} = {value}\n")


def resolve_config(args, overrides=None):
    """Defaults, then the config file, then explicit flags, then ``overrides``."""
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    for flag, (name, parse) in _FLAG_FIELDS.items():
        given = getattr(args, flag.replace("-", "_"), None)
        if given is not None:
            try:
                values[name] = parse(given)
            except ValueError as exc:
                raise ConfigError(f"--{flag}: {exc}") from None
    values.update(overrides or {})
    try:
        return TrainConfig.from_dict(values).validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


# -- parser ---------------------------------------------------------------------------


def _global_flags():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run settings")
    g.add_argument("--config", help="flat key = value settings file")
    g.add_argument("--out-dir", default="knitwork_run", help="run directory (default: %(default)s)")
    g.add_argument("-q", "--quiet", action="store_true", help="suppress progress lines")
    for flag in _FLAG_FIELDS:
        g.add_argument(f"--{flag}", default=None, metavar=flag.split("-")[-1].upper())
    return p


def build_parser():
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="knitwork", description="Single-image coordinate networks with patch outputs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit an image")
    p.add_argument("image")

    p = sub.add_parser("inpaint", parents=[common], help="fill a hole")
    p.add_argument("image")
    hole = p.add_mutually_exclusive_group(required=True)
    hole.add_argument("--hole", help="rectangle row,col,height,width")
    hole.add_argument("--mask", help="PNG mask, nonzero = known")
    p.add_argument("--baseline", action="store_true", help="use the conventional coordinate MLP")

    p = sub.add_parser("superres", parents=[common], help="blind or non-blind super-resolution")
    p.add_argument("image")
    p.add_argument("--factor", type=int, required=True)
    p.add_argument("--kernel", choices=("learned",) + KERNELS, default="learned")
    p.add_argument("--ref", help="high-res ground truth for metrics")
    p.add_argument("--baseline", action="store_true", help="render the fine grid from a conventional MLP fit")

    p = sub.add_parser("denoise", parents=[common], help="denoise by fitting")
    p.add_argument("image", help="clean image (noise is synthesized) or, with --noisy, the noisy input")
    p.add_argument("--sigma", type=float, required=True, help="noise sigma in 8-bit units")
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--noisy", action="store_true", help="IMAGE is already noisy; no metrics unless --clean")
    p.add_argument("--clean", help="clean reference when IMAGE is noisy")
    p.add_argument("--baseline", action="store_true")

    p = sub.add_parser("eval", help="PSNR/SSIM of an output against a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--region", help="PNG mask; nonzero pixels form the region")
    p.add_argument("--task", default="-", help="task label for the CSV row")

    p = sub.add_parser("ablate", parents=[common], help="inpainting with one ablation stage")
    p.add_argument("image")
    p.add_argument("--stage", choices=tuple(STAGES), required=True)
    hole = p.add_mutually_exclusive_group()
    hole.add_argument("--hole", help="rectangle row,col,height,width")
    hole.add_argument("--mask", help="PNG mask, nonzero = known")
    p.add_argument("--fill-ratio", type=float, default=0.02, help="centered square hole when no hole is given")
    return parser


# -- run directory ------------------------------------------------------------------


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _start_run(args, config, inputs):
    os.makedirs(args.out_dir, exist_ok=True)
    manifest = {
        "tool": "knitwork",
        "version": __version__,
        "command": args.command,
        "argv": sys.argv[1:],
        "seed": config.seed,
        "config": config.to_dict(),
        "inputs": {p: _digest(p) for p in inputs if p},
        "started": _now(),
    }
    write_config_file(config, os.path.join(args.out_dir, "config.txt"))
    _write_manifest(args.out_dir, manifest)
    return manifest


def _write_manifest(out_dir, manifest):
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=list)
        fh.write("\n")


def _finish_run(args, manifest, result, name="output.png"):
    save_png(result.output, os.path.join(args.out_dir, name))
    metrics = {k: (None if v is None else (dataclasses.asdict(v) if hasattr(v, "psnr_db") else v)) for k, v in result.metrics.items()}
    manifest.update(finished=_now(), outputs=[name], metrics=metrics)
    _write_manifest(args.out_dir, manifest)
    for region, report in result.metrics.items():
        if report is None:
            print(f"{region}: undefined")
        elif hasattr(report, "psnr_db"):
            print(f"{region}: psnr={report.psnr_db:.3f} dB ssim={report.ssim:.4f}")
        else:
            print(f"{region}: {report:.3f}")


def _hole_mask(args, shape):
    if args.mask:
        return load_mask_png(args.mask)
    if args.hole:
        return Rect.parse(args.hole).mask(shape)
    return Rect.centered_square(shape, args.fill_ratio).mask(shape)


# -- commands -----------------------------------------------------------------------


def _cmd_fit(args):
    config = resolve_config(args)
    image = load_png(args.image)
    manifest = _start_run(args, config, [args.image])
    _finish_run(args, manifest, run_fit(image, config, out_dir=args.out_dir))


def _run_inpaint(args, config, image, known):
    # masks given as PNG are wrapped as a degenerate spec with a fixed mask
    spec = _MaskSpec(known)
    return run_inpaint(image, spec, config, out_dir=args.out_dir)


@dataclasses.dataclass(frozen=True)
class _MaskSpec:
    known: np.ndarray

    def known_mask(self, shape):
        if self.known.shape != tuple(shape):
            raise ConfigError(f"mask shape {self.known.shape} does not match image {tuple(shape)}")
        return self.known


def _cmd_inpaint(args, stage=None):
    overrides = STAGES["mlp" if getattr(args, "baseline", False) else "full"] if stage is None else STAGES[stage]
    config = resolve_config(args, overrides)
    image = load_png(args.image)
    known = _hole_mask(args, image.shape[:2])
    manifest = _start_run(args, config, [args.image, args.mask])
    save_png(known.astype(float), os.path.join(args.out_dir, "known_mask.png"))
    _finish_run(args, manifest, _run_inpaint(args, config, image, known))


def _cmd_superres(args):
    config = resolve_config(args)
    low = load_png(args.image)
    ref = load_png(args.ref) if args.ref else None
    spec = SrSpec(args.factor, args.kernel)
    manifest = _start_run(args, config, [args.image, args.ref])
    result = run_superres(low, spec, config, reference=ref, baseline=args.baseline, out_dir=args.out_dir)
    if result.kernel is not None:
        k = result.kernel
        np.savetxt(os.path.join(args.out_dir, "kernel.csv"), k, delimiter=",", fmt="%.17g")
        save_png(np.clip(k / max(k.max(), 1e-12), 0.0, 1.0)[:, :, None], os.path.join(args.out_dir, "kernel.png"))
    _finish_run(args, manifest, result)


def _cmd_denoise(args):
    overrides = STAGES["mlp"] if args.baseline else None
    config = resolve_config(args, overrides)
    spec = DenoiseSpec(args.sigma, args.noise_seed)
    image = load_png(args.image)
    if args.noisy:
        noisy, clean = image, (load_png(args.clean) if args.clean else None)
    else:
        noisy, clean = spec.corrupt(image), image
    manifest = _start_run(args, config, [args.image, args.clean])
    save_png(noisy, os.path.join(args.out_dir, "noisy.png"))
    _finish_run(args, manifest, run_denoise(noisy, spec, config, clean=clean, out_dir=args.out_dir))


def _cmd_eval(args):
    ref, out = load_png(args.ref), load_png(args.out)
    rows = [("whole", evaluate(out, ref, region="whole"))]
    if args.region:
        rows.append(("region", evaluate(out, ref, load_mask_png(args.region), region="region")))
    print("image,task,region,psnr_db,ssim")
    for region, rep in rows:
        print(f"{args.out},{args.task},{region},{rep.psnr_db:.6f},{rep.ssim:.6f}")


def _cmd_ablate(args):
    _cmd_inpaint(args, stage=args.stage)


COMMANDS = {
    "fit": _cmd_fit,
    "inpaint": _cmd_inpaint,
    "superres": _cmd_superres,
    "denoise": _cmd_denoise,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
}


def _keep_freed_memory():
    # glibc hands large numpy temporaries back to the OS after every step and
    # page-faults them in again on the next one; raising the mmap and trim
    # thresholds roughly halves step time and changes nothing else
    try:
        libc = ctypes.CDLL("libc.so.6")
    except OSError:
        return
    libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
    libc.mallopt(-1, 1 << 32)  # M_TRIM_THRESHOLD


def main(argv=None):
    _keep_freed_memory()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    if not logging.getLogger().handlers:
        logging.basicConfig(stream=sys.stdout, format="%(message)s")
    logging.getLogger("knitwork").setLevel(logging.WARNING if getattr(args, "quiet", False) else logging.INFO)
    try:
        COMMANDS[args.command](args)
    except (TrainingError, CheckpointError) as exc:
        print(f"knitwork: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (KnitworkError, ValueError) as exc:
        print(f"knitwork: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"knitwork: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME if not isinstance(exc, ImageIOError) else EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
