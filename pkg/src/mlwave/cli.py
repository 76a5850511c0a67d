"""Command-line entry point: ``mlwave <command> [flags]``.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or format error.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .imageio import ImageFormatError, read_image, write_image
from .macs import count_macs
from .metrics import psnr_metric, ssim_metric
from .tensor import NonFiniteError, Tensor, TensorFormatError, load_tensor, save_tensor
from .training.loop import ConfigError, Dataset, TrainConfig, TrainingError, learn_filters, load_config, restore, train_loop
from .wavelet import NAMED_BANKS, SUBBANDS, BankFormatError, dwt2, idwt2, load_bank, save_bank

IMAGE_SUFFIXES = (".pgm", ".ppm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def deterministic() -> bool:
    """``MLW_DETERMINISTIC=0`` opts out of strict determinism; every code path here is deterministic anyway."""
    return os.environ.get("MLW_DETERMINISTIC", "1") != "0"


def _bank(spec: str, dtype):
    if spec in NAMED_BANKS:
        return NAMED_BANKS[spec](dtype)
    if not Path(spec).is_file():
        raise UsageError(f"--bank must be one of {sorted(NAMED_BANKS)} or a bank file, got {spec!r}")
    return load_bank(spec, dtype=dtype)


def _is_image(path) -> bool:
    return Path(path).suffix.lower() in IMAGE_SUFFIXES


def _read_batch(path) -> np.ndarray:
    if _is_image(path):
        return read_image(path)[None]
    arr = load_tensor(path).data
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise TensorFormatError(f"expected a rank-3 or rank-4 tensor, got rank {arr.ndim}")
    return arr


def _normalize(plane):
    lo, hi = float(plane.min()), float(plane.max())
    return np.zeros_like(plane) if hi == lo else (plane - lo) / (hi - lo)


def cmd_dwt(args) -> int:
    x = _read_batch(args.input)
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise UsageError(f"dwt needs even spatial dims, got {x.shape[2]}x{x.shape[3]}")
    y = dwt2(Tensor(x), _bank(args.bank, x.dtype)).data
    save_tensor(args.out, y)
    if args.subband_images:
        outdir = Path(args.subband_images)
        outdir.mkdir(parents=True, exist_ok=True)
        for c in range(y.shape[1] // 4):
            for b, tag in enumerate(SUBBANDS):
                write_image(outdir / f"c{c}_{tag}.pgm", _normalize(y[0, 4 * c + b]))
    return 0


def cmd_idwt(args) -> int:
    y = load_tensor(args.input).data
    if y.ndim == 3:
        y = y[None]
    if y.ndim != 4:
        raise UsageError(f"idwt expects a rank-3 or rank-4 tensor, got rank {y.ndim}")
    if y.shape[1] % 4:
        raise UsageError(f"idwt needs a channel count divisible by 4, got {y.shape[1]}")
    x = idwt2(Tensor(y), _bank(args.bank, y.dtype)).data
    if _is_image(args.out):
        if x.shape[0] != 1 or x.shape[1] not in (1, 3):
            raise UsageError(f"cannot write a {x.shape} tensor as an image")
        write_image(args.out, x[0])
    else:
        save_tensor(args.out, x)
    return 0


def cmd_learn_filters(args) -> int:
    if args.n < 2 or args.n % 2:
        raise UsageError("--n must be even and >= 2")
    if args.steps < 0:
        raise UsageError("--steps must be >= 0")
    res = learn_filters(args.n, args.steps, args.lr, args.seed)
    save_bank(args.out, res.bank)
    curve = Path(args.curve) if args.curve else Path(str(args.out) + ".loss.csv")
    curve.write_text("step,loss\n" + "".join(f"{k},{v:.17g}\n" for k, v in enumerate(res.losses)))
    print(f"final_loss={res.losses[-1]:.6e}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = TrainConfig(**{**cfg.__dict__, "seed": args.seed})
    if args.iters is not None:
        cfg = TrainConfig(**{**cfg.__dict__, "iters": args.iters})

    def progress(row):
        if not args.quiet:
            print(f"iter={row['iter']} lr={row['lr']:.3g} loss={row['total_loss']:.4f} "
                  f"wavelet={row['wavelet_loss']:.3g} val_psnr={row['val_psnr']:.3f}", flush=True)

    res = train_loop(cfg, Dataset.synthetic(cfg), progress=progress)
    out = Path(args.out)
    save_checkpoint(out, res.params, cfg.network())
    (out / "metrics.csv").write_text(res.log_csv())
    final = res.final
    print(f"baseline_psnr={res.baseline_psnr:.4f} val_psnr={final['val_psnr']:.4f} "
          f"val_ssim={final['val_ssim']:.4f} max_wavelet_loss={res.max_wavelet_loss:.3e}")
    return 0


def _pairs(inp, ref):
    inp, ref = Path(inp), Path(ref)
    if inp.is_dir():
        names = sorted(p.name for p in inp.iterdir() if _is_image(p))
        if not names:
            raise UsageError(f"no PGM/PPM images in {inp}")
        return [(n, inp / n, ref / n) for n in names]
    return [(inp.name, inp, ref)]


def cmd_eval(args) -> int:
    params, config = load_checkpoint(args.checkpoint)
    rows = []
    for name, bpath, rpath in _pairs(args.input, args.ref):
        blurred, sharp = read_image(bpath), read_image(rpath)
        if blurred.shape != sharp.shape or blurred.shape[0] != 3:
            raise UsageError(f"{name}: input and reference must be RGB images of equal size")
        restored = restore(blurred[None], params, config)[0]
        rows.append((name, psnr_metric(restored, sharp), ssim_metric(restored, sharp)))
        if args.out_dir:
            Path(args.out_dir).mkdir(parents=True, exist_ok=True)
            write_image(Path(args.out_dir) / name, restored)
    for name, p, s in rows:
        print(f"image={name} psnr={p:.6f} ssim={s:.6f}")
    if len(rows) > 1:
        print(f"mean psnr={np.mean([r[1] for r in rows]):.6f} ssim={np.mean([r[2] for r in rows]):.6f}")
    if args.csv:
        Path(args.csv).write_text("image,psnr,ssim\n" + "".join(f"{n},{p:.6f},{s:.6f}\n" for n, p, s in rows))
    return 0


def cmd_macs(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    net = cfg.network(train_mode=not args.inference)
    rep = count_macs(net, args.height, args.width)
    print(f"total={rep.total}")
    for stage, macs in rep.stages.items():
        print(f"{stage}={macs}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import SUITES, TOLERANCES
    targets = list(SUITES) if args.target == "all" else [args.target]
    ok = True
    for target in targets:
        errors = SUITES[target](args.seed)
        worst = max(errors, key=errors.get)
        passed = errors[worst] < TOLERANCES[target]
        ok &= passed
        print(f"target={target} max_rel_error={errors[worst]:.3e} worst={worst} "
              f"tol={TOLERANCES[target]:g} {'ok' if passed else 'FAIL'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mlwave", description=__doc__.splitlines()[0], allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, allow_abbrev=False)
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        p.set_defaults(func=func)
        return p

    bank_help = "haar, db2, or a bank text file"
    p = command("dwt", cmd_dwt, "one-level 2D wavelet analysis of an image or tensor")
    p.add_argument("--in", dest="input", required=True, help="PGM/PPM image or tensor file")
    p.add_argument("--bank", default="haar", help=bank_help)
    p.add_argument("--out", required=True, help="output tensor file (B, 4C, H/2, W/2)")
    p.add_argument("--subband-images", help="directory for min-max normalized subband PGMs")

    p = command("idwt", cmd_idwt, "inverse 2D wavelet transform of a subband tensor")
    p.add_argument("--in", dest="input", required=True, help="subband tensor file")
    p.add_argument("--bank", default="haar", help=bank_help)
    p.add_argument("--out", required=True, help="output image (.pgm/.ppm) or tensor file")

    p = command("learn-filters", cmd_learn_filters, "learn a filter bank from random init")
    p.add_argument("--n", type=int, default=4, help="filter length (even)")
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--out", required=True, help="output bank text file")
    p.add_argument("--curve", help="loss curve CSV (default <out>.loss.csv)")

    p = sub.add_parser("train", help="train on synthetic blur pairs", allow_abbrev=False)
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--iters", type=int, default=None, help="override the config iteration count")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = command("eval", cmd_eval, "restore images with a checkpoint and score them")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True, help="blurred PPM or directory of PPMs")
    p.add_argument("--ref", required=True, help="sharp PPM or directory with matching names")
    p.add_argument("--out-dir", help="write restored images here")
    p.add_argument("--csv", help="write image,psnr,ssim rows here")

    p = command("macs", cmd_macs, "count multiply-accumulates analytically")
    p.add_argument("--config", help="key=value config file (default micro config)")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--inference", action="store_true", help="count the inference graph only")

    p = command("gradcheck", cmd_gradcheck, "finite-difference gradient suites")
    p.add_argument("--target", choices=["ops", "wavelet", "network", "all"], default="all")
    return parser


NUMERIC_ERRORS = (NonFiniteError, TrainingError, FloatingPointError)
FORMAT_ERRORS = (UsageError, TensorFormatError, ImageFormatError, BankFormatError, ConfigError,
                 CheckpointError, FileNotFoundError, IsADirectoryError, ValueError)


def main(argv=None) -> int:
    deterministic()
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)
    except NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FORMAT_ERRORS as exc:
        print(f"error: {str(exc).rstrip()}", file=sys.stderr)
        return 2
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
