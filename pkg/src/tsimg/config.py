"""Run configuration: one YAML tree with dataset, transform, diffusion, denoiser,
training and eval sections. Unknown keys are errors."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .denoiser import DenoiserConfig
from .diffusion import DiffusionConfig
from .metrics import METRICS, SequenceEncoderConfig
from .series import NORMALIZATION_KINDS
from .transforms import TransformError, TransformSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "sine"
    L: int = 24
    K: int = 5
    num_samples: int = 2000
    seed: int = 0
    normalization: str = "minmax11"


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 300
    batch_size: int = 128
    lr: float = 1e-4
    weight_decay: float = 0.0
    seed: int = 0
    checkpoint_every: int = 50


@dataclass(frozen=True)
class EvalConfig:
    metrics: tuple[str, ...] = ("discriminative", "predictive", "marginal")
    repeats: int = 3
    bins: int = 50
    k_future: int = 10
    normalization: str = "minmax01"
    encoder: SequenceEncoderConfig = field(default_factory=SequenceEncoderConfig)


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig
    transform: TransformSpec
    diffusion: DiffusionConfig
    denoiser: DenoiserConfig
    training: TrainingConfig
    eval: EvalConfig

    def to_dict(self) -> dict:
        transform = self.transform.to_dict()
        for key in ("L", "K"):
            transform.pop(key)
        ev = dataclasses.asdict(self.eval)
        ev["metrics"] = list(self.eval.metrics)
        return {
            "dataset": dataclasses.asdict(self.dataset),
            "transform": transform,
            "diffusion": self.diffusion.to_dict(),
            "denoiser": self.denoiser.to_dict(),
            "training": dataclasses.asdict(self.training),
            "eval": ev,
        }


SECTIONS = ("dataset", "transform", "diffusion", "denoiser", "training", "eval")
_TRANSFORM_KEYS = ("kind", "n", "m", "n_fft", "hop_length", "target_size", "max_gaf_length")


def _fields(cls) -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(cls)}


def _check_keys(section: str, given: dict, allowed) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}; allowed: {', '.join(allowed)}")


def _coerce(section: str, key: str, value, default):
    """Match the type of the field default; YAML reads ``1e-4`` as a string."""
    if value is None or default is None:
        return value
    try:
        if isinstance(default, bool):
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: cannot interpret {value!r} as {type(default).__name__}") from None
    return value


def _build(cls, section: str, given: dict, **fixed):
    flds = _fields(cls)
    _check_keys(section, given, [k for k in flds if k not in fixed])
    kwargs = {}
    for name, f in flds.items():
        if name in fixed or name not in given:
            continue
        default = f.default if f.default is not dataclasses.MISSING else None
        kwargs[name] = _coerce(section, name, given[name], default)
    try:
        return cls(**kwargs, **fixed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys("config", raw, SECTIONS)
    dataset = _build(DatasetConfig, "dataset", raw.get("dataset", {}))
    if dataset.normalization not in NORMALIZATION_KINDS:
        raise ConfigError(f"dataset.normalization must be one of {NORMALIZATION_KINDS}")
    if dataset.L < 1 or dataset.K < 1 or dataset.num_samples < 1:
        raise ConfigError("dataset.L, dataset.K and dataset.num_samples must be positive")

    t_raw = dict(raw.get("transform", {"kind": "delay-embedding", "n": 8, "m": 3}))
    _check_keys("transform", t_raw, _TRANSFORM_KEYS)
    if "kind" not in t_raw:
        raise ConfigError("transform.kind is required")
    try:
        transform = TransformSpec(L=dataset.L, K=dataset.K, **t_raw)
    except TransformError as exc:
        raise ConfigError(f"transform: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"transform: {exc}") from None

    if transform.kind == "gaf" and dataset.normalization != "minmax01":
        raise ConfigError("transform.kind 'gaf' needs values in [0, 1]: set dataset.normalization to minmax01")

    diffusion = _build(DiffusionConfig, "diffusion", raw.get("diffusion", {}))

    C, H, W = transform.image_shape()
    d_raw = dict(raw.get("denoiser", {}))
    _check_keys("denoiser", d_raw, list(_fields(DenoiserConfig)))
    if d_raw.get("in_channels") is None:
        d_raw["in_channels"] = C
    if d_raw.get("image_size") is None:
        d_raw["image_size"] = H
    denoiser = _build(DenoiserConfig, "denoiser", d_raw)
    if denoiser.in_channels != C:
        raise ConfigError(f"denoiser.in_channels={denoiser.in_channels} but the transform produces C={C}")
    if (H, W) != (denoiser.image_size, denoiser.image_size):
        raise ConfigError(
            f"denoiser.image_size={denoiser.image_size} but the transform produces {H}x{W} images"
        )

    training = _build(TrainingConfig, "training", raw.get("training", {}))
    if training.epochs < 0 or training.batch_size < 1 or training.lr < 0 or training.checkpoint_every < 1:
        raise ConfigError("training: epochs >= 0, batch_size >= 1, lr >= 0 and checkpoint_every >= 1 required")

    e_raw = dict(raw.get("eval", {}))
    enc_raw = e_raw.pop("encoder", {})
    encoder = _build(SequenceEncoderConfig, "eval.encoder", enc_raw)
    ev = _build(EvalConfig, "eval", e_raw)
    ev = dataclasses.replace(ev, encoder=encoder)
    unknown = [m for m in ev.metrics if m not in METRICS]
    if unknown:
        raise ConfigError(f"unknown metric(s) {unknown}; valid names: {', '.join(METRICS)}")
    if ev.repeats < 1 or ev.bins < 1:
        raise ConfigError("eval.repeats and eval.bins must be positive")
    if ev.normalization not in NORMALIZATION_KINDS:
        raise ConfigError(f"eval.normalization must be one of {NORMALIZATION_KINDS}")
    return RunConfig(dataset, transform, diffusion, denoiser, training, ev)


def load_config(path) -> RunConfig:
    """Load a YAML run config, or a bundled preset given as ``preset:<name>``."""
    text = preset_text(str(path)[7:]) if str(path).startswith("preset:") else Path(path).read_text()
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return config_from_dict(raw)


def preset_names() -> list[str]:
    root = resources.files("tsimg") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def preset_text(name: str) -> str:
    res = resources.files("tsimg") / "presets" / f"{name}.yaml"
    if not res.is_file():
        raise ConfigError(f"no preset named {name!r}; available: {', '.join(preset_names())}")
    return res.read_text()


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
