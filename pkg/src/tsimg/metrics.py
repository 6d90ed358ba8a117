"""Generation-quality metrics and simple imputation baselines.

Classifier and predictor backbones are small GRU encoders (linear in, GRU,
linear out) trained with AdamW. Every network keeps the weights of its best
validation epoch.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


class InsufficientDataError(ValueError):
    pass


class EmptyRangeError(ValueError):
    pass


@dataclass(frozen=True)
class SequenceEncoderConfig:
    hidden_dim: int = 16
    epochs: int = 100
    lr: float = 0.01
    batch_size: int = 128

    def __post_init__(self):
        if min(self.hidden_dim, self.epochs, self.batch_size) < 1 or self.lr <= 0:
            raise ValueError("SequenceEncoderConfig fields must be positive")


@dataclass
class MetricReport:
    metric: str
    value: float
    std: float | None
    repeats: int
    seeds: list[int]
    config: dict = field(default_factory=dict)
    values: list[float] = field(default_factory=list, repr=False)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.config, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_json(self) -> str:
        return json.dumps(
            {
                "metric": self.metric,
                "value": self.value,
                "std": self.std,
                "repeats": self.repeats,
                "seed_list": self.seeds,
                "config_hash": self.config_hash,
            }
        )


def _report(metric: str, values: list[float], seeds: list[int], config: dict) -> MetricReport:
    std = float(np.std(values)) if len(values) >= 3 else None
    return MetricReport(metric, float(np.mean(values)), std, len(values), list(seeds), config, list(values))


def _pair(real, synth) -> tuple[np.ndarray, np.ndarray]:
    real = np.asarray(real, dtype=np.float64)
    synth = np.asarray(synth, dtype=np.float64)
    if real.ndim != 3 or synth.ndim != 3 or real.shape[1:] != synth.shape[1:]:
        raise ValueError(f"real {real.shape} and synthetic {synth.shape} batches must share (L, K)")
    return real, synth


def _require(n: int, needed: int, what: str, metric: str) -> None:
    if n < needed:
        raise InsufficientDataError(f"{metric}: {what} has {n} series, needs at least {needed}")


def split_indices(n: int, seed: int, test_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Shuffled (train, test) index split."""
    perm = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    return perm[n_test:], perm[:n_test]


# -------------------------------------------------------------------- networks


class _Classifier(nn.Module):
    def __init__(self, K: int, hidden: int):
        super().__init__()
        self.inp = nn.Linear(K, hidden)
        self.rnn = nn.GRU(hidden, hidden, batch_first=True)
        self.out = nn.Linear(hidden, 1)

    def forward(self, x):
        h, _ = self.rnn(self.inp(x))
        return self.out(h.mean(dim=1)).squeeze(-1)


class _StepPredictor(nn.Module):
    def __init__(self, K: int, hidden: int):
        super().__init__()
        self.inp = nn.Linear(K, hidden)
        self.rnn = nn.GRU(hidden, hidden, batch_first=True)
        self.out = nn.Linear(hidden, K)

    def forward(self, x):
        h, _ = self.rnn(self.inp(x))
        return self.out(h)


class _HorizonPredictor(nn.Module):
    def __init__(self, K: int, hidden: int, k_future: int):
        super().__init__()
        self.K, self.k_future = K, k_future
        self.inp = nn.Linear(K, hidden)
        self.rnn = nn.GRU(hidden, hidden, batch_first=True)
        self.out = nn.Linear(hidden, k_future * K)

    def forward(self, x):
        _, h = self.rnn(self.inp(x))
        return self.out(h[-1]).reshape(-1, self.k_future, self.K)


def _fit(model: nn.Module, loss_fn, train: tuple, val: tuple, cfg: SequenceEncoderConfig, seed: int) -> nn.Module:
    """AdamW minibatch training; returns the model at its best validation loss."""
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr)
    n = len(train[0])
    best, best_state = math.inf, copy.deepcopy(model.state_dict())
    for _ in range(cfg.epochs):
        model.train()
        order = torch.randperm(n, generator=gen)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss = loss_fn(model, *(t[idx] for t in train))
            opt.zero_grad()
            loss.backward()
            opt.step()
        model.eval()
        with torch.no_grad():
            v = float(loss_fn(model, *val))
        if v < best:
            best, best_state = v, copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    return model


def _tensor(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x), dtype=torch.float32)


def _bce(model, x, y):
    return F.binary_cross_entropy_with_logits(model(x), y)


def _train_discriminator(real, synth, cfg: SequenceEncoderConfig, seed: int):
    """Train real-vs-synthetic on 80% of each set; return (test logits, test labels)."""
    r_train, r_test = split_indices(len(real), seed)
    s_train, s_test = split_indices(len(synth), seed + 1)
    x_train = np.concatenate([real[r_train], synth[s_train]])
    y_train = np.concatenate([np.ones(len(r_train)), np.zeros(len(s_train))])
    fit_idx, val_idx = split_indices(len(x_train), seed + 2)
    x_test = np.concatenate([real[r_test], synth[s_test]])
    y_test = np.concatenate([np.ones(len(r_test)), np.zeros(len(s_test))])
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = _Classifier(real.shape[2], cfg.hidden_dim)
    xt, yt = _tensor(x_train), _tensor(y_train)
    _fit(model, _bce, (xt[fit_idx], yt[fit_idx]), (xt[val_idx], yt[val_idx]), cfg, seed)
    with torch.no_grad():
        logits = model(_tensor(x_test))
    return logits, _tensor(y_test)


def _seeds(seed: int, repeats: int) -> list[int]:
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    return [seed + 1000 * i for i in range(repeats)]


def discriminative_score(real, synth, cfg: SequenceEncoderConfig = SequenceEncoderConfig(), seed: int = 0, repeats: int = 1) -> MetricReport:
    """``|test accuracy - 0.5|`` of a post-hoc real-vs-synthetic GRU classifier; lower is better."""
    real, synth = _pair(real, synth)
    for name, arr in (("real", real), ("synthetic", synth)):
        _require(len(arr), 2 * cfg.batch_size, name, "discriminative")
    values, seeds = [], _seeds(seed, repeats)
    for s in seeds:
        logits, y = _train_discriminator(real, synth, cfg, s)
        acc = float(((logits > 0).float() == y).float().mean())
        values.append(abs(acc - 0.5))
    return _report("discriminative", values, seeds, asdict(cfg))


def classification_score(real, synth, cfg: SequenceEncoderConfig = SequenceEncoderConfig(), seed: int = 0, repeats: int = 1) -> MetricReport:
    """Mean test cross-entropy of the trained discriminator; higher is better, chance is ln 2."""
    real, synth = _pair(real, synth)
    for name, arr in (("real", real), ("synthetic", synth)):
        _require(len(arr), 2 * cfg.batch_size, name, "classification")
    values, seeds = [], _seeds(seed, repeats)
    for s in seeds:
        logits, y = _train_discriminator(real, synth, cfg, s)
        values.append(float(F.binary_cross_entropy_with_logits(logits, y)))
    return _report("classification", values, seeds, asdict(cfg))


def _l1_next(model, x):
    return (model(x[:, :-1]) - x[:, 1:]).abs().mean()


def predictive_score(real, synth, cfg: SequenceEncoderConfig = SequenceEncoderConfig(), seed: int = 0, repeats: int = 1) -> MetricReport:
    """Train-on-synthetic, test-on-real next-step MAE over all features; lower is better."""
    real, synth = _pair(real, synth)
    if real.shape[1] < 2:
        raise ValueError("predictive score needs L >= 2")
    _require(len(real), 2 * cfg.batch_size, "real", "predictive")
    _require(len(synth), 2 * cfg.batch_size, "synthetic", "predictive")
    values, seeds = [], _seeds(seed, repeats)
    for s in seeds:
        _, r_test = split_indices(len(real), s)
        fit_idx, val_idx = split_indices(len(synth), s + 2)
        with torch.random.fork_rng():
            torch.manual_seed(s)
            model = _StepPredictor(real.shape[2], cfg.hidden_dim)
        xs = _tensor(synth)
        _fit(model, _l1_next, (xs[fit_idx],), (xs[val_idx],), cfg, s)
        with torch.no_grad():
            values.append(float(_l1_next(model, _tensor(real[r_test]))))
    return _report("predictive", values, seeds, asdict(cfg))


def prediction_score(real, synth, cfg: SequenceEncoderConfig = SequenceEncoderConfig(), k_future: int = 10, seed: int = 0, repeats: int = 1) -> MetricReport:
    """Train-on-synthetic MSE of forecasting the last ``k_future`` steps from the rest."""
    real, synth = _pair(real, synth)
    L = real.shape[1]
    if not 1 <= k_future < L:
        raise ValueError(f"k_future must satisfy 1 <= k_future < L={L}, got {k_future}")
    _require(len(real), 2 * cfg.batch_size, "real", "prediction")
    _require(len(synth), 2 * cfg.batch_size, "synthetic", "prediction")

    def mse(model, x):
        return ((model(x[:, :-k_future]) - x[:, -k_future:]) ** 2).mean()

    values, seeds = [], _seeds(seed, repeats)
    for s in seeds:
        _, r_test = split_indices(len(real), s)
        fit_idx, val_idx = split_indices(len(synth), s + 2)
        with torch.random.fork_rng():
            torch.manual_seed(s)
            model = _HorizonPredictor(real.shape[2], cfg.hidden_dim, k_future)
        xs = _tensor(synth)
        _fit(model, mse, (xs[fit_idx],), (xs[val_idx],), cfg, s)
        with torch.no_grad():
            values.append(float(mse(model, _tensor(real[r_test]))))
    config = asdict(cfg) | {"k_future": k_future}
    return _report("prediction", values, seeds, config)


def marginal_histograms(real, synth, bins: int = 50, value_range: str = "real"):
    """Pooled value histograms of both sets, each summing to 1.

    Binning spans the real data (``value_range="real"``) or both sets
    (``"union"``); synthetic values outside the span count in the edge bins.
    Returns ``(edges, p_real, p_synth)``.
    """
    r = np.asarray(real, dtype=np.float64).ravel()
    s = np.asarray(synth, dtype=np.float64).ravel()
    if r.size == 0 or s.size == 0:
        raise ValueError("marginal score needs nonempty batches")
    if bins < 1:
        raise ValueError("bins must be positive")
    if value_range == "real":
        lo, hi = r.min(), r.max()
    elif value_range == "union":
        lo, hi = min(r.min(), s.min()), max(r.max(), s.max())
    else:
        raise ValueError(f"value_range must be 'real' or 'union', got {value_range!r}")
    if not hi > lo:
        raise EmptyRangeError("real data is constant; histogram range is empty")
    edges = np.linspace(lo, hi, bins + 1)
    p = np.histogram(r, bins=edges)[0] / r.size
    q = np.histogram(np.clip(s, lo, hi), bins=edges)[0] / s.size
    return edges, p, q


def marginal_score(real, synth, bins: int = 50, value_range: str = "real") -> MetricReport:
    """Mean absolute difference of binned value frequencies; lower is better."""
    _, p, q = marginal_histograms(real, synth, bins, value_range)
    return _report("marginal", [float(np.abs(p - q).mean())], [], {"bins": bins, "value_range": value_range})


def masked_mse(truth, generated, mask) -> float:
    """MSE over the unobserved (``mask == False``) positions only."""
    truth = np.asarray(truth, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if truth.shape != generated.shape or truth.shape != mask.shape:
        raise ValueError(f"shapes differ: truth {truth.shape}, generated {generated.shape}, mask {mask.shape}")
    hidden = ~mask
    if not hidden.any():
        raise ValueError("mask has no unobserved positions")
    return float(np.mean((truth[hidden] - generated[hidden]) ** 2))


# ------------------------------------------------------------------- baselines


def mean_imputation(series, mask) -> np.ndarray:
    """Fill unobserved cells with the mean of the observed cells of the same series and channel."""
    x = np.array(series, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    single = x.ndim == 2
    if single:
        x, mask = x[None], mask[None]
    obs = np.where(mask, x, 0.0)
    counts = mask.sum(axis=1, keepdims=True)
    means = obs.sum(axis=1, keepdims=True) / np.maximum(counts, 1)
    fill = np.broadcast_to(means, x.shape)
    out = np.where(mask, x, fill)
    return out[0] if single else out


def last_value_hold(series, mask) -> np.ndarray:
    """Carry the most recent observed value forward; leading gaps take the first observed value."""
    x = np.array(series, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    single = x.ndim == 2
    if single:
        x, mask = x[None], mask[None]
    out = x.copy()
    N, L, K = x.shape
    for i in range(N):
        for k in range(K):
            seen = np.flatnonzero(mask[i, :, k])
            if seen.size == 0:
                out[i, :, k] = 0.0
                continue
            last = x[i, seen[0], k]
            for t in range(L):
                if mask[i, t, k]:
                    last = x[i, t, k]
                else:
                    out[i, t, k] = last
    return out[0] if single else out


METRICS = {
    "discriminative": discriminative_score,
    "predictive": predictive_score,
    "marginal": marginal_score,
    "classification": classification_score,
    "prediction": prediction_score,
}
