"""Masked conditional sampling for interpolation and extrapolation.

Observed pixels are re-imposed after every sampler step at the current noise
level, so the model only generates the missing region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffusion import ScoreModel, heun_sample, validate_schedule
from .transforms import TransformSpec, UnsupportedKindError, forward, inverse, project_time_mask


def make_interpolation_mask(L: int, K: int, fraction: float, seed) -> np.ndarray:
    """Hide ``round(fraction * L * K)`` positions chosen uniformly; at least one stays hidden and one observed."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    total = L * K
    if total < 2:
        raise ValueError("need at least two positions to build an interpolation mask")
    hidden = min(max(int(math.floor(fraction * total + 0.5)), 1), total - 1)
    rng = np.random.default_rng(seed)
    mask = np.ones(total, dtype=bool)
    mask[rng.choice(total, size=hidden, replace=False)] = False
    return mask.reshape(L, K)


def make_extrapolation_mask(L: int, K: int) -> np.ndarray:
    """Observe the first ``ceil(L / 2)`` steps of every feature."""
    if L < 2:
        raise ValueError("extrapolation needs L >= 2")
    mask = np.zeros((L, K), dtype=bool)
    mask[: (L + 1) // 2] = True
    return mask


@dataclass
class ConditioningContext:
    """Known values (``series``, arbitrary where unobserved) plus their mask.

    ``series`` and ``mask`` are ``(L, K)`` or a batch ``(N, L, K)``.
    """

    series: np.ndarray
    mask: np.ndarray
    spec: TransformSpec

    def __post_init__(self):
        if self.spec.kind not in ("delay-embedding", "folding"):
            raise UnsupportedKindError(f"conditioning is not supported for {self.spec.kind!r} transforms")
        self.series = np.asarray(self.series, dtype=np.float64)
        self.mask = np.broadcast_to(np.asarray(self.mask, dtype=bool), self.series.shape)
        if self.series.shape[-2:] != (self.spec.L, self.spec.K):
            raise ValueError(f"series shape {self.series.shape} does not match spec (L, K)")
        if not np.isfinite(self.series[self.mask]).all():
            raise ValueError("observed positions must hold finite values")


def inpaint_sample(model: ScoreModel, ctx: ConditioningContext, schedule, seed) -> np.ndarray:
    """Fill the unobserved positions of ``ctx.series`` by masked Heun sampling.

    The starting noise uses the same stream as :func:`heun_sample`, and re-noising
    of the observed region uses a separate stream. Padding pixels are imposed as
    zeros unless the series has no observed value at all, in which case the result
    is exactly the unconditional sample.
    """
    sigmas = validate_schedule(schedule)
    known = np.where(ctx.mask, ctx.series, 0.0)
    y = forward(known, ctx.spec)
    M = project_time_mask(ctx.mask, ctx.spec)
    # a series with nothing observed imposes nothing, not even its zero padding
    empty = ~ctx.mask.any(axis=(-2, -1))
    M = M & ~empty[..., None, None, None]
    renoise = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))

    def impose(x, i, sigma_next):
        eps = renoise.standard_normal(x.shape)
        return np.where(M, y + sigma_next * eps, x)

    x = heun_sample(model, y.shape, sigmas, seed, after_step=impose)
    out = inverse(x, ctx.spec)
    return np.where(ctx.mask, ctx.series, out)
