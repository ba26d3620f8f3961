"""Command-line interface: ``deepbf {simulate,mask,beamform,train,evaluate,report}``.

Every artifact is written under the output directory (config ``output_dir``,
overridable with ``--output-dir``)::

    rf/train_0000.usrf ...   simulated frames
    masks/<scheme>_<n>.txt   sampling masks
    images/<stem>_<method>.pgm
    checkpoint.udbf, train_loss.csv
    metrics.csv, summary.csv

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 numeric failure.
"""

import argparse
import contextlib
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .acquire import RFFormatError, compute_delay_table, read_rf, simulate_rf, write_rf
from .beamform import time_align
from .config import ConfigError, RunConfig, load_config
from .metrics import read_metrics_csv, write_metrics_csv
from .neural import (
    CheckpointFormatError,
    ShapeError,
    TrainingDiverged,
    load_checkpoint,
    save_checkpoint,
    train,
    xavier_init,
)
from .postproc import write_pgm
from .subsample import apply_mask, make_mask, write_mask

__all__ = ["main", "build_parser", "DataError", "UsageError"]

log = logging.getLogger("deepbf")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(Exception):
    pass


class UsageError(Exception):
    pass


def _run_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.output_dir is not None:
        cfg = cfg.replace(output_dir=Path(args.output_dir))
    if args.seed is not None:
        cfg = cfg.replace(experiment=cfg.experiment.replace(seed=args.seed))
    return cfg


def _require_config(args):
    if not args.config:
        raise UsageError(f"'{args.command}' needs --config")
    return _run_config(args)


def _frame_paths(cfg, split, count):
    paths = [cfg.output_dir / "rf" / f"{split}_{k:04d}.usrf" for k in range(count)]
    missing = [p for p in paths if not p.exists()]
    if missing:
        raise DataError(f"{len(missing)} of {count} {split} frames missing (first: {missing[0]}); "
                        f"run 'deepbf simulate --split {split}' first")
    return paths


def _prepared(cfg, paths):
    exp = cfg.experiment
    delays = compute_delay_table(exp.probe)
    for path in paths:
        frame = read_rf(path)
        if frame.data.shape != exp.probe.shape:
            raise DataError(f"{path}: frame shape {frame.data.shape} != configured {exp.probe.shape}")
        yield ex.prepare_frame(frame, delays, exp.crop_samples())


def cmd_simulate(args):
    cfg = _require_config(args)
    exp = cfg.experiment
    splits = ("train", "test") if args.split == "all" else (args.split,)
    out = cfg.output_dir / "rf"
    out.mkdir(parents=True, exist_ok=True)
    for split in splits:
        count = args.frames if args.frames is not None else getattr(exp, f"{split}_frames")
        for k in range(count):
            seed = ex.frame_seed(exp.seed, split, k)
            frame = simulate_rf(exp.probe, cfg.phantom_for(seed), exp.noise_std, seed)
            path = out / f"{split}_{k:04d}.usrf"
            write_rf(frame, path)
            log.info("wrote %s", path)
        L, J, N = exp.probe.shape
        print(f"{split}: {count} frames of {L} TE x {J} Rx x {N} samples in {out}")
    return EXIT_OK


def cmd_mask(args):
    cfg = _require_config(args)
    exp = cfg.experiment
    J, N = exp.probe.num_rx_active, exp.probe.num_depth_samples
    schemes = [args.scheme] if args.scheme else exp.schemes
    rates = [args.n_keep] if args.n_keep else exp.eval_rates
    out = cfg.output_dir / "masks"
    out.mkdir(parents=True, exist_ok=True)
    for scheme in schemes:
        for rate in rates:
            seed = args.mask_seed if args.mask_seed is not None else exp.seed
            try:
                mask = make_mask(scheme, rate, J, N, seed)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            path = out / f"{scheme}_{rate:02d}.txt"
            write_mask(mask, path, N)
            print(f"{path}: {scheme}, {rate} of {J} channels, {N} depth planes")
    return EXIT_OK


def cmd_beamform(args):
    cfg = _run_config(args)
    method = args.method or cfg.method
    if method not in ex.METHODS:
        raise UsageError(f"unknown method {method!r}; expected one of {ex.METHODS}")
    net = None
    if method == "deepbf":
        if not args.checkpoint:
            raise UsageError("method deepbf needs --checkpoint")
        net = load_checkpoint(args.checkpoint).network
    frame = read_rf(args.rf)
    cube = time_align(frame, compute_delay_table(frame.probe))
    L, J, N = cube.shape
    tag = method
    if args.n_keep is not None and args.n_keep != J:
        seed = args.mask_seed if args.mask_seed is not None else cfg.experiment.seed
        try:
            mask = make_mask(args.scheme, args.n_keep, J, N, seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        cube = apply_mask(cube, mask)
        tag = f"{method}_{args.scheme}{args.n_keep:02d}"
    if net is not None and net.config.input_channels != J:
        raise DataError(f"checkpoint expects {net.config.input_channels} channels, frame has {J}")
    dr = args.dynamic_range if args.dynamic_range is not None else cfg.experiment.dynamic_range_db
    env, img = ex.reconstruct(cube, method, net, cfg.mv, dr)
    out = cfg.output_dir / "images"
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.rf).stem
    path = out / f"{stem}_{tag}.pgm"
    write_pgm(img, path)
    if args.iq:
        np.save(out / f"{stem}_{tag}_envelope.npy", env)
    print(f"{path}: {L} scanlines x {N} depth samples, {dr:g} dB")
    return EXIT_OK


def cmd_train(args):
    cfg = _require_config(args)
    exp = cfg.experiment
    paths = _frame_paths(cfg, "train", exp.train_frames)
    inputs, targets = ex.build_training_set(
        _prepared(cfg, paths), exp.train_rates, exp.windows_per_frame, exp.seed,
        exp.network.depth_window)
    log.info("training set: %d samples", len(inputs))
    net = xavier_init(exp.network, seed=exp.seed)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    rates = []

    def progress(epoch, loss, lr):
        rates.append(lr)
        print(f"epoch {epoch + 1}/{exp.training.epochs}  lr {lr:.3g}  loss {loss:.6g}", flush=True)

    try:
        ck = train((inputs, targets), net, exp.training, progress)
    except TrainingDiverged as exc:
        save_checkpoint(exc.checkpoint, out / "checkpoint.partial.udbf")
        _write_losses(out / "train_loss.csv", exc.checkpoint.epoch_losses, rates)
        raise
    save_checkpoint(ck, out / "checkpoint.udbf")
    _write_losses(out / "train_loss.csv", ck.epoch_losses, rates)
    print(f"{out / 'checkpoint.udbf'}: {len(ck.epoch_losses)} epochs, "
          f"final loss {ck.epoch_losses[-1]:.6g}")
    return EXIT_OK


def _write_losses(path, losses, rates):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lr", "loss"])
        for k, (loss, lr) in enumerate(zip(losses, rates)):
            w.writerow([k, repr(float(lr)), repr(float(loss))])


def cmd_evaluate(args):
    cfg = _require_config(args)
    exp = cfg.experiment
    net = None
    if "deepbf" in exp.methods:
        ckpath = Path(args.checkpoint) if args.checkpoint else cfg.output_dir / "checkpoint.udbf"
        if not ckpath.exists():
            raise UsageError(f"method deepbf needs a checkpoint; {ckpath} not found")
        net = load_checkpoint(ckpath).network
    paths = _frame_paths(cfg, "test", exp.test_frames)
    try:
        rows = ex.evaluate_frames(_prepared(cfg, paths), exp, net, mv_params=cfg.mv,
                                  regions=cfg.regions)
    except ValueError as exc:
        if isinstance(exc, (RFFormatError, CheckpointFormatError)):
            raise
        raise DataError(str(exc)) from None
    path = cfg.output_dir / "metrics.csv"
    write_metrics_csv(rows, path)
    print(f"{path}: {len(rows)} rows")
    return EXIT_OK


def cmd_report(args):
    if args.metrics:
        path = Path(args.metrics)
        out = path.parent
    else:
        cfg = _require_config(args)
        out = cfg.output_dir
        path = out / "metrics.csv"
    if not path.exists():
        raise DataError(f"{path} not found; run 'deepbf evaluate' first")
    try:
        rows = read_metrics_csv(path)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed metrics file: {exc}") from None
    summary = ex.summarize(rows)
    names = ("CNR", "GCNR", "PSNR", "SSIM")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme", "n_keep", "method", *names])
        for (scheme, rate, method), m in summary.items():
            w.writerow([scheme, rate, method, *(repr(m[k]) for k in names)])
    print(f"{'scheme':<9}{'n_keep':>7}  {'method':<8}" + "".join(f"{k:>9}" for k in names))
    for (scheme, rate, method), m in summary.items():
        print(f"{scheme:<9}{rate:>7}  {method:<8}" + "".join(f"{m[k]:9.3f}" for k in names))
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--output-dir", help="override the config's output_dir")
    common.add_argument("--seed", type=int, help="override the config's seed")
    common.add_argument("--reproducible", action="store_true",
                        help="single-threaded numerics for bit-identical outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="deepbf", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate RF frames")
    s.add_argument("--split", choices=("train", "test", "all"), default="all")
    s.add_argument("--frames", type=int, help="frames per split (default from config)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("mask", parents=[common], help="write sampling masks")
    s.add_argument("--scheme", choices=("variable", "fixed"))
    s.add_argument("--n-keep", type=int)
    s.add_argument("--mask-seed", type=int)
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("beamform", parents=[common], help="beamform one RF file to a PGM image")
    s.add_argument("rf", help="USRF input file")
    s.add_argument("--method", help="das, mv or deepbf (default from config)")
    s.add_argument("--checkpoint", help="UDBF checkpoint for deepbf")
    s.add_argument("--n-keep", type=int, help="subsample to this many channels")
    s.add_argument("--scheme", choices=("variable", "fixed"), default="variable")
    s.add_argument("--mask-seed", type=int)
    s.add_argument("--dynamic-range", type=float, help="dB (default from config)")
    s.add_argument("--iq", action="store_true", help="also save the envelope as .npy")
    s.set_defaults(func=cmd_beamform)

    s = sub.add_parser("train", parents=[common], help="train the network on simulated frames")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="metrics CSV over the test frames")
    s.add_argument("--checkpoint", help="default: <output_dir>/checkpoint.udbf")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", parents=[common], help="summarize a metrics CSV")
    s.add_argument("--metrics", help="metrics CSV (default: <output_dir>/metrics.csv)")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.reproducible:
        from threadpoolctl import threadpool_limits
        limits = threadpool_limits(limits=1)
    else:
        limits = contextlib.nullcontext()
    with limits:
        try:
            return args.func(args)
        except (ConfigError, UsageError) as exc:
            print(f"deepbf: error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except (DataError, RFFormatError, CheckpointFormatError, ShapeError) as exc:
            print(f"deepbf: data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        except (TrainingDiverged, FloatingPointError) as exc:
            print(f"deepbf: numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        except OSError as exc:
            print(f"deepbf: data error: {exc}", file=sys.stderr)
            return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
