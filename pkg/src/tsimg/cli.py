"""``tsimg`` command line: transform, train, generate, inpaint, evaluate.

Exit status is 0 on success, 1 when inputs or configs fail validation and 2
when a run fails (I/O, corrupt checkpoints, non-finite values).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline, plotting
from .conditional import make_extrapolation_mask, make_interpolation_mask
from .config import ConfigError, EvalConfig, RunConfig, dump_config, load_config
from .denoiser import CheckpointShapeError
from .metrics import METRICS, marginal_histograms, masked_mse
from .series import SeriesError, load_csv, normalize, write_csv
from .transforms import TransformError, forward, inverse, write_image_file

log = logging.getLogger("tsimg")

VALIDATION_ERRORS = (ConfigError, SeriesError, TransformError, CheckpointShapeError, ValueError)


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """Bad arguments are validation errors, so they exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _config(args) -> RunConfig:
    return load_config(args.config)


def _out_sibling(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


# ------------------------------------------------------------------ transform


def cmd_transform(args) -> None:
    cfg = _config(args)
    if args.input:
        ids, series = load_csv(args.input)
    else:
        ids, series = pipeline.load_dataset(cfg)
    spec = dataclasses.replace(cfg.transform, L=series.shape[1], K=series.shape[2])
    normed, _ = normalize(series, cfg.dataset.normalization)
    if spec.kind == "stft":
        images, scales = forward(normed, spec)
        back = inverse(images, spec, scales)
    else:
        images = forward(normed, spec)
        back = inverse(images, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for sid, img in zip(ids, images):
        write_image_file(out / f"{sid}.tsim", img)
    err = float(np.max(np.abs(back - normed))) if len(normed) else 0.0
    print(f"{spec.kind}\tmax_roundtrip_error={err:.3e}\timages={len(images)}\tshape={'x'.join(map(str, images.shape[1:]))}")


# ------------------------------------------------------------------ train


def _write_loss(out: Path, history: list[float], plots: bool) -> None:
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(history, start=1):
            w.writerow([i, repr(float(loss))])
    if plots and history:
        plotting.plot_loss_curve(np.arange(1, len(history) + 1), history, out / "loss.png")


def cmd_train(args) -> None:
    cfg = _config(args)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, training=dataclasses.replace(cfg.training, seed=args.seed))
    if args.epochs is not None:
        cfg = dataclasses.replace(cfg, training=dataclasses.replace(cfg.training, epochs=args.epochs))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))

    every = max(1, cfg.training.epochs // 20)

    def report(epoch, loss):
        if epoch % every == 0 or epoch == cfg.training.epochs:
            log.info("epoch %d/%d  loss %.5f", epoch, cfg.training.epochs, loss)

    trained = pipeline.train(cfg, out, resume=args.resume, on_epoch=report)
    _write_loss(out, trained.history, not args.no_plots)
    print(f"final checkpoint: {out / 'final.tsdm'} (epoch {trained.epoch})")


# ------------------------------------------------------------------ generate


def cmd_generate(args) -> None:
    trained = pipeline.load_trained(args.checkpoint)
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    series = trained.generate(args.count, args.seed)
    out = Path(args.out)
    write_csv(out, series, [f"gen{i:06d}" for i in range(len(series))])
    if not args.no_plots and len(series):
        plotting.plot_series(series, out.with_suffix(".png"))
    print(f"wrote {len(series)} series to {out}")


# ------------------------------------------------------------------ inpaint


def read_mask_csv(path, ids: list[str], L: int, K: int) -> np.ndarray:
    """Mask rows ``[series_id,]t,k,observed``; without ``series_id`` the mask applies to every series.

    Positions not listed are observed, so a file usually lists only the cells to fill.
    """
    index = {sid: i for i, sid in enumerate(ids)}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SeriesError(f"{path}: empty mask file")
        header = [h.strip() for h in header]
        per_series = header == ["series_id", "t", "k", "observed"]
        if not per_series and header != ["t", "k", "observed"]:
            raise SeriesError(f"{path}: mask header must be 't,k,observed' or 'series_id,t,k,observed', got {header}")
        mask = np.ones((len(ids) if per_series else 1, L, K), dtype=bool)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if per_series:
                    sid, t, k, obs = row
                    n = index[sid]
                else:
                    t, k, obs = row
                    n = 0
                t, k, obs = int(t), int(k), int(obs)
            except KeyError:
                raise SeriesError(f"{path}:{lineno}: unknown series_id {row[0]!r}") from None
            except ValueError:
                raise SeriesError(f"{path}:{lineno}: expected integer t, k and observed in {{0,1}}, got {row}") from None
            if not (0 <= t < L and 0 <= k < K) or obs not in (0, 1):
                raise SeriesError(f"{path}:{lineno}: position (t={t}, k={k}) outside L={L}, K={K} or bad flag {obs}")
            mask[n, t, k] = bool(obs)
    return np.broadcast_to(mask, (len(ids), L, K))


def cmd_inpaint(args) -> None:
    trained = pipeline.load_trained(args.checkpoint)
    L, K = trained.cfg.dataset.L, trained.cfg.dataset.K
    ids, series = load_csv(args.input, allow_missing=True)
    if series.shape[1:] != (L, K):
        raise SeriesError(f"{args.input}: series are {series.shape[1:]}, the checkpoint expects (L, K)=({L}, {K})")
    if args.mask:
        mask = read_mask_csv(args.mask, ids, L, K)
    elif args.interpolate is not None:
        mask = np.stack([make_interpolation_mask(L, K, args.interpolate, [args.seed, i]) for i in range(len(ids))])
    elif args.extrapolate:
        mask = np.broadcast_to(make_extrapolation_mask(L, K), series.shape)
    else:
        mask = np.ones_like(series, dtype=bool)
    # empty cells are unknown whatever the mask says
    mask = mask & np.isfinite(series)
    filled = trained.inpaint(series, mask, args.seed) if len(series) else series
    out = Path(args.out)
    write_csv(out, filled, ids)

    truth = np.isfinite(series).all(axis=(1, 2))
    with open(_out_sibling(out, "_report.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        has_truth = len(series) > 0 and bool(truth.all())
        w.writerow(["series_id", "observed", "unobserved"] + (["masked_mse"] if has_truth else []))
        for i, sid in enumerate(ids):
            row = [sid, int(mask[i].sum()), int((~mask[i]).sum())]
            if has_truth:
                row.append(repr(masked_mse(series[i], filled[i], mask[i])) if (~mask[i]).any() else "")
            w.writerow(row)
    print(f"wrote {len(ids)} completed series to {out}")


# ------------------------------------------------------------------ evaluate


def cmd_evaluate(args) -> None:
    ev = _config(args).eval if args.config else EvalConfig()
    if args.metrics:
        names = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
        unknown = [m for m in names if m not in METRICS]
        if unknown:
            raise ConfigError(f"unknown metric(s) {unknown}; valid names: {', '.join(METRICS)}")
        ev = dataclasses.replace(ev, metrics=names)
    if args.repeats is not None:
        if args.repeats < 1:
            raise UsageError("--repeats must be >= 1")
        ev = dataclasses.replace(ev, repeats=args.repeats)
    _, real = load_csv(args.real)
    _, synth = load_csv(args.synth)
    if real.shape[1:] != synth.shape[1:]:
        raise SeriesError(f"real series are {real.shape[1:]}, synthetic are {synth.shape[1:]}")
    reports = pipeline.evaluate(real, synth, ev, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for rep in reports:
            fh.write(rep.to_json() + "\n")

    r, s = pipeline.eval_arrays(real, synth, ev)
    edges, p, q = marginal_histograms(r, s, ev.bins)
    with open(_out_sibling(out, "_marginal.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "real", "synthetic"])
        for lo, hi, a, b in zip(edges[:-1], edges[1:], p, q):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(a)), repr(float(b))])
    if not args.no_plots:
        plotting.plot_marginals(edges, p, q, _out_sibling(out, "_marginal.png"))
    for rep in reports:
        std = "" if rep.std is None else f" +- {rep.std:.4f}"
        print(f"{rep.metric}\t{rep.value:.4f}{std}")


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsimg", description="Time series generation through image diffusion.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="YAML run config or preset:<name>")
        p.add_argument("--out", required=True, help="output path")
        p.add_argument("--no-plots", action="store_true", help="skip PNG figures")

    p = sub.add_parser("transform", help="convert series to image files and check the round trip")
    common(p)
    p.add_argument("--input", help="dataset CSV; defaults to the config's dataset")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("train", help="train the denoiser")
    common(p)
    p.add_argument("--seed", type=int, help="overrides training.seed")
    p.add_argument("--epochs", type=int, help="overrides training.epochs")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample new series from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("inpaint", help="complete partially observed series")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="dataset CSV; empty cells are unobserved")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--mask", help="mask CSV with [series_id,]t,k,observed rows")
    group.add_argument("--interpolate", type=float, metavar="FRACTION", help="hide this fraction at random")
    group.add_argument("--extrapolate", action="store_true", help="observe only the first half")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("evaluate", help="score synthetic series against real ones")
    common(p, config_required=False)
    p.add_argument("--real", required=True)
    p.add_argument("--synth", required=True)
    p.add_argument("--metrics", help=f"comma list overriding the config; valid: {', '.join(METRICS)}")
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors exit 1, --help exits 0
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
