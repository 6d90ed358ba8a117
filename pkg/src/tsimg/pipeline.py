"""End-to-end glue: dataset -> images -> trained denoiser -> samples -> series."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .conditional import ConditioningContext, inpaint_sample
from .config import ConfigError, EvalConfig, RunConfig, config_from_dict
from .denoiser import (
    CheckpointShapeError,
    EDMDenoiser,
    build_model,
    epoch_seed,
    load_checkpoint,
    make_optimizer,
    save_checkpoint,
    train_epoch,
)
from .diffusion import build_schedule, heun_sample
from .metrics import METRICS, MetricReport, marginal_score, prediction_score
from .series import (
    NormalizationState,
    apply_normalization,
    as_batch,
    denormalize,
    generate_sine,
    load_csv,
    normalize,
)
from .transforms import forward, inverse

log = logging.getLogger(__name__)


def load_dataset(cfg: RunConfig) -> tuple[list[str], np.ndarray]:
    d = cfg.dataset
    if d.source == "sine":
        values = generate_sine(d.num_samples, d.L, d.K, d.seed)
        return [str(i) for i in range(len(values))], values
    ids, values = load_csv(d.source)
    if values.shape[1:] != (d.L, d.K):
        raise ConfigError(f"{d.source}: series are {values.shape[1:]}, config says (L, K)=({d.L}, {d.K})")
    return ids, values


@dataclass
class Codec:
    """Series <-> image mapping with the normalization and STFT scale fitted on training data."""

    cfg: RunConfig
    norm: NormalizationState
    stft_scale: float | None = None

    @classmethod
    def fit(cls, cfg: RunConfig, series: np.ndarray) -> tuple["Codec", np.ndarray]:
        normed, state = normalize(series, cfg.dataset.normalization)
        codec = cls(cfg, state.for_new_series())
        if cfg.transform.kind == "stft":
            _, scales = forward(normed, cfg.transform)
            codec.stft_scale = float(np.max(scales))
        return codec, codec.to_images(normed, normalized=True)

    def to_images(self, series, normalized: bool = False) -> np.ndarray:
        x = series if normalized else apply_normalization(series, self.norm)
        out = forward(x, self.cfg.transform, self.stft_scale) if self.cfg.transform.kind == "stft" else forward(x, self.cfg.transform)
        return out[0] if self.cfg.transform.kind == "stft" else out

    def to_series(self, images) -> np.ndarray:
        scale = self.stft_scale if self.stft_scale is not None else 1.0
        x = inverse(images, self.cfg.transform, scale)
        return denormalize(x, self.norm)

    def to_dict(self) -> dict:
        return {"normalization": self.norm.to_dict(), "stft_scale": self.stft_scale}


@dataclass
class TrainedModel:
    model: EDMDenoiser
    cfg: RunConfig
    codec: Codec
    epoch: int
    history: list[float] = field(default_factory=list)

    def sample_images(self, count: int, seed: int) -> np.ndarray:
        shape = (count,) + self.cfg.transform.image_shape()
        return heun_sample(self.model, shape, build_schedule(self.cfg.diffusion), seed)

    def generate(self, count: int, seed: int) -> np.ndarray:
        """``count`` series in the original data units."""
        if count == 0:
            return np.zeros((0, self.cfg.dataset.L, self.cfg.dataset.K))
        return self.codec.to_series(self.sample_images(count, seed))

    def inpaint(self, series, mask, seed: int) -> np.ndarray:
        """Complete a batch ``(N, L, K)`` of series in original units; NaN is allowed where unobserved."""
        series = as_batch(series, allow_nan=True)
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), series.shape)
        normed = apply_normalization(np.where(mask, series, np.nan), self.codec.norm)
        ctx = ConditioningContext(np.where(mask, normed, 0.0), mask, self.cfg.transform)
        out = inpaint_sample(self.model, ctx, build_schedule(self.cfg.diffusion), seed)
        offset = self.codec.norm.offset
        if self.codec.norm.kind == "center-std":
            offset = np.nanmean(np.where(mask, series, np.nan), axis=-2, keepdims=True)
        restored = out * self.codec.norm.scale + offset
        return np.where(mask, series, restored)


def _payload(cfg: RunConfig, codec: Codec, epoch: int, history: list[float]) -> dict:
    return {"run": cfg.to_dict(), "codec": codec.to_dict(), "epoch": epoch, "loss_history": history}


def load_trained(path, expect: RunConfig | None = None) -> TrainedModel:
    ckpt = load_checkpoint(path)
    try:
        cfg = config_from_dict(ckpt.configs["run"])
        codec_raw = ckpt.configs["codec"]
    except KeyError as exc:
        raise CheckpointShapeError(f"{path}: checkpoint lacks the {exc} block") from None
    if expect is not None:
        a, b = cfg.to_dict(), expect.to_dict()
        a["training"].pop("epochs"), b["training"].pop("epochs")
        if a != b:
            raise CheckpointShapeError(f"{path}: checkpoint was written with a different run config")
    codec = Codec(cfg, NormalizationState.from_dict(codec_raw["normalization"]), codec_raw["stft_scale"])
    model = build_model(cfg.denoiser, cfg.diffusion.sigma_data, cfg.training.seed)
    ckpt.restore(model)
    model.eval()
    return TrainedModel(model, cfg, codec, int(ckpt.configs["epoch"]), list(ckpt.configs["loss_history"]))


def train(
    cfg: RunConfig,
    out_dir=None,
    series: np.ndarray | None = None,
    resume=None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> TrainedModel:
    """Fit the denoiser on ``series`` (or the configured dataset).

    With ``out_dir`` a checkpoint is written every ``checkpoint_every`` epochs and
    as ``final.tsdm``. ``resume`` continues from a checkpoint of the same config.
    """
    if series is None:
        _, series = load_dataset(cfg)
    codec, images = Codec.fit(cfg, series)
    tr = cfg.training
    model = build_model(cfg.denoiser, cfg.diffusion.sigma_data, tr.seed)
    optimizer = make_optimizer(model, tr.lr, tr.weight_decay)
    history: list[float] = []
    start = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        prev = config_from_dict(ckpt.configs["run"])
        a, b = prev.to_dict(), cfg.to_dict()
        a["training"].pop("epochs"), b["training"].pop("epochs")
        if a != b:
            raise CheckpointShapeError(f"{resume}: checkpoint was written with a different run config")
        ckpt.restore(model, optimizer)
        codec_raw = ckpt.configs["codec"]
        codec = Codec(cfg, NormalizationState.from_dict(codec_raw["normalization"]), codec_raw["stft_scale"])
        images = codec.to_images(series)
        start = int(ckpt.configs["epoch"])
        history = list(ckpt.configs["loss_history"])[:start]

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for epoch in range(start, tr.epochs):
        loss = train_epoch(model, optimizer, images, cfg.diffusion, tr.batch_size, epoch_seed(tr.seed, epoch), epoch)
        history.append(loss)
        done = epoch + 1
        if on_epoch is not None:
            on_epoch(done, loss)
        if out is not None and done % tr.checkpoint_every == 0 and done < tr.epochs:
            save_checkpoint(out / f"checkpoint_{done:05d}.tsdm", model, optimizer, _payload(cfg, codec, done, history))
    final_epoch = max(start, tr.epochs)
    if out is not None:
        save_checkpoint(out / "final.tsdm", model, optimizer, _payload(cfg, codec, final_epoch, history))
    model.eval()
    return TrainedModel(model, cfg, codec, final_epoch, history)


def eval_arrays(real, synth, ev: EvalConfig) -> tuple[np.ndarray, np.ndarray]:
    """Both sets rescaled with statistics fitted on ``real``, as the metrics see them."""
    real = np.asarray(real, dtype=np.float64)
    synth = np.asarray(synth, dtype=np.float64)
    if ev.normalization == "none":
        return real, synth
    real, state = normalize(real, ev.normalization)
    return real, apply_normalization(synth, state)


def evaluate(real, synth, ev: EvalConfig, seed: int = 0) -> list[MetricReport]:
    """Run the configured metrics after rescaling both sets with statistics of ``real``."""
    real, synth = eval_arrays(real, synth, ev)
    reports = []
    for name in ev.metrics:
        # insufficient-data errors already name the metric
        if name == "marginal":
            rep = marginal_score(real, synth, ev.bins)
        elif name == "prediction":
            rep = prediction_score(real, synth, ev.encoder, ev.k_future, seed, ev.repeats)
        else:
            rep = METRICS[name](real, synth, ev.encoder, seed, ev.repeats)
        log.info("%s = %.4f", name, rep.value)
        reports.append(rep)
    return reports
