"""EDM noise schedule, preconditioning, denoising loss and the Heun ODE sampler.

The sampler works on float64 numpy arrays and talks to a model only through
``model.denoise(x, sigma)``, which returns an estimate of the clean image.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Protocol

import numpy as np


class DiffusionError(RuntimeError):
    pass


class NonFiniteError(DiffusionError):
    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite values in sampler state at step {step}")


class ScoreModel(Protocol):
    def denoise(self, x, sigma):
        """Estimate the clean image from ``x`` at noise level ``sigma``."""


@dataclass(frozen=True)
class DiffusionConfig:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    num_steps: int = 18
    sigma_data: float = 0.5
    P_mean: float = -1.2
    P_std: float = 1.2

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError(f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}")
        if self.num_steps < 2:
            raise ValueError(f"num_steps must be >= 2, got {self.num_steps}")
        if self.rho <= 0 or self.sigma_data <= 0 or self.P_std <= 0:
            raise ValueError("rho, sigma_data and P_std must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def build_schedule(cfg: DiffusionConfig) -> np.ndarray:
    """Noise levels ``sigma_0 > ... > sigma_{N-1} = sigma_min`` followed by 0."""
    N = cfg.num_steps
    inv = 1.0 / cfg.rho
    hi, lo = cfg.sigma_max**inv, cfg.sigma_min**inv
    sigmas = np.empty(N + 1)
    for i in range(N):
        sigmas[i] = (hi + i / (N - 1) * (lo - hi)) ** cfg.rho
    sigmas[0] = cfg.sigma_max
    sigmas[N - 1] = cfg.sigma_min
    sigmas[N] = 0.0
    return sigmas


def validate_schedule(sigmas) -> np.ndarray:
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if sigmas.ndim != 1 or len(sigmas) < 2:
        raise ValueError("schedule must be a 1-D array with at least two entries")
    if sigmas[-1] != 0 or np.any(np.diff(sigmas) >= 0) or np.any(sigmas[:-1] <= 0):
        raise ValueError("schedule must be strictly decreasing positive levels ending in 0")
    return sigmas


def _log(sigma):
    if hasattr(sigma, "log"):
        return sigma.log()
    return np.log(sigma)


def edm_coefficients(sigma, sigma_data: float):
    """``(c_skip, c_out, c_in, c_noise)``; works on floats, numpy arrays and torch tensors."""
    var = sigma**2 + sigma_data**2
    c_skip = sigma_data**2 / var
    c_out = sigma * sigma_data / var**0.5
    c_in = 1 / var**0.5
    c_noise = _log(sigma) / 4
    return c_skip, c_out, c_in, c_noise


class Preconditioned:
    """Wrap a raw network ``F(x_in, c_noise)`` as ``D = c_skip x + c_out F(c_in x, c_noise)``."""

    def __init__(self, raw: Callable, sigma_data: float = 0.5):
        self.raw = raw
        self.sigma_data = sigma_data

    def denoise(self, x, sigma):
        c_skip, c_out, c_in, c_noise = edm_coefficients(sigma, self.sigma_data)
        return c_skip * x + c_out * self.raw(c_in * x, c_noise)


def loss_weight(sigma, sigma_data: float):
    return (sigma**2 + sigma_data**2) / (sigma * sigma_data) ** 2


def training_loss(model: ScoreModel, x0, noise, sigma, cfg: DiffusionConfig):
    """Weighted denoising loss ``mean(lambda(sigma) * (D(x0 + sigma*noise; sigma) - x0)^2)``.

    ``sigma`` may be a scalar or broadcast per item, e.g. shape ``(B, 1, 1, 1)``.
    Returns a float for numpy inputs and a differentiable scalar for torch inputs.
    """
    if tuple(x0.shape) != tuple(noise.shape):
        raise ValueError(f"noise shape {tuple(noise.shape)} does not match data {tuple(x0.shape)}")
    denoised = model.denoise(x0 + sigma * noise, sigma)
    if tuple(denoised.shape) != tuple(x0.shape):
        raise ValueError(f"model returned shape {tuple(denoised.shape)} for input {tuple(x0.shape)}")
    loss = (loss_weight(sigma, cfg.sigma_data) * (denoised - x0) ** 2).mean()
    return float(loss) if isinstance(loss, (np.ndarray, np.generic, float)) else loss


def sample_sigma_for_training(cfg: DiffusionConfig, seed, size=None):
    """Log-normal noise levels: ``ln(sigma) ~ N(P_mean, P_std^2)``.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return np.exp(cfg.P_mean + cfg.P_std * rng.standard_normal(size))


def score_from_denoiser(x, sigma: float, model: ScoreModel):
    """Score estimate ``(D(x; sigma) - x) / sigma^2``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = model.denoise(x, sigma)
    if np.shape(d) != np.shape(x):
        raise ValueError(f"model returned shape {np.shape(d)} for input {np.shape(x)}")
    return (d - x) / sigma**2


def _denoise_checked(model: ScoreModel, x: np.ndarray, sigma: float, step: int) -> np.ndarray:
    d = np.asarray(model.denoise(x, sigma), dtype=np.float64)
    if d.shape != x.shape:
        raise DiffusionError(f"model returned shape {d.shape} for input {x.shape} at step {step}")
    if not np.isfinite(d).all():
        raise NonFiniteError(step, f"model output is non-finite at step {step} (sigma={sigma:g})")
    return d


def heun_sample(
    model: ScoreModel,
    shape,
    schedule,
    seed,
    after_step: Callable[[np.ndarray, int, float], np.ndarray] | None = None,
) -> np.ndarray:
    """Deterministic second-order (Heun) integration of the probability-flow ODE.

    ``shape`` is ``(C, H, W)`` or carries leading batch dimensions. The only
    randomness is the initial ``sigma_0 * eps`` draw from ``default_rng(seed)``.
    ``after_step(x, i, sigma_next)`` may replace the state after every step.
    """
    sigmas = validate_schedule(schedule)
    rng = np.random.default_rng(seed)
    x = sigmas[0] * rng.standard_normal(tuple(shape))
    for i in range(len(sigmas) - 1):
        s_cur, s_next = float(sigmas[i]), float(sigmas[i + 1])
        d_cur = (x - _denoise_checked(model, x, s_cur, i)) / s_cur
        x_next = x + (s_next - s_cur) * d_cur
        if s_next > 0:
            d_next = (x_next - _denoise_checked(model, x_next, s_next, i)) / s_next
            x_next = x + (s_next - s_cur) * (0.5 * d_cur + 0.5 * d_next)
        x = x_next
        if after_step is not None:
            x = after_step(x, i, s_next)
        if not np.isfinite(x).all():
            raise NonFiniteError(i)
    return x


class GaussianDenoiser:
    """Exact denoiser for data ``N(0, s^2 I)``: ``D(x; sigma) = s^2 x / (s^2 + sigma^2)``."""

    def __init__(self, std: float):
        self.std = float(std)

    def denoise(self, x, sigma):
        s2 = self.std**2
        return s2 / (s2 + sigma**2) * x


class IdentityDenoiser:
    """Claims every input is already clean."""

    def denoise(self, x, sigma):
        return x


def expected_gaussian_loss(data_std: float, sigma: float, sigma_data: float) -> float:
    """Per-element loss of the optimal denoiser on ``N(0, s^2 I)`` data."""
    s2 = data_std**2
    return float(loss_weight(sigma, sigma_data) * sigma**2 * s2 / (s2 + sigma**2))

