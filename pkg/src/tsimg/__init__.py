"""Time series generation by mapping sequences to images and sampling them with an EDM diffusion model."""

from .config import RunConfig, load_config
from .diffusion import DiffusionConfig, build_schedule, heun_sample
from .series import generate_sine, load_csv, write_csv
from .transforms import TransformSpec, forward, inverse

__version__ = "0.1.0"

__all__ = [
    "DiffusionConfig",
    "RunConfig",
    "TransformSpec",
    "build_schedule",
    "forward",
    "generate_sine",
    "heun_sample",
    "inverse",
    "load_config",
    "load_csv",
    "write_csv",
]
