"""Compact noise-conditioned U-Net denoiser, its training epoch and checkpoints.

The network itself is the raw ``F(x_in, c_noise)``; :class:`EDMDenoiser` applies
the EDM preconditioning around it and satisfies the ``ScoreModel`` protocol.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .diffusion import DiffusionConfig, edm_coefficients, sample_sigma_for_training, training_loss


class NonFiniteGradientError(RuntimeError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient for parameter {name!r}")


class NonFiniteLossError(RuntimeError):
    def __init__(self, batch_index: int, epoch: int | None = None):
        self.batch_index = batch_index
        self.epoch = epoch
        where = f"batch {batch_index}" if epoch is None else f"epoch {epoch}, batch {batch_index}"
        super().__init__(f"non-finite training loss at {where}")


class CheckpointError(RuntimeError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


@dataclass(frozen=True)
class DenoiserConfig:
    in_channels: int
    image_size: int
    base_channels: int = 32
    channel_multipliers: tuple[int, ...] = (1, 2, 2)
    noise_embedding_dim: int = 64
    num_blocks: int = 2

    def __post_init__(self):
        object.__setattr__(self, "channel_multipliers", tuple(int(m) for m in self.channel_multipliers))
        if min(self.in_channels, self.image_size, self.base_channels, self.noise_embedding_dim, self.num_blocks) < 1:
            raise ValueError("denoiser sizes must be positive")
        if not self.channel_multipliers or min(self.channel_multipliers) < 1:
            raise ValueError("channel_multipliers must be a non-empty list of positive integers")
        if self.noise_embedding_dim % 2:
            raise ValueError("noise_embedding_dim must be even")
        factor = 2 ** (len(self.channel_multipliers) - 1)
        if self.image_size % factor:
            raise ValueError(
                f"image_size={self.image_size} is not divisible by 2^(levels-1)={factor}"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_multipliers"] = list(self.channel_multipliers)
        return d


def num_groups(channels: int) -> int:
    """At most 32 groups, at least 4 channels per group where possible."""
    g = min(32, max(1, channels // 4))
    while channels % g:
        g -= 1
    return g


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(num_groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb = nn.Linear(emb_dim, cout)
        self.norm2 = nn.GroupNorm(num_groups(cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else None

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + (self.skip(x) if self.skip is not None else x)


class UNet(nn.Module):
    """Encoder/decoder with skip connections; every block sees the noise embedding."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        base, E = cfg.base_channels, 4 * cfg.base_channels
        half = cfg.noise_embedding_dim // 2
        self.register_buffer("freqs", torch.logspace(0, 3, half), persistent=False)
        self.embed = nn.Sequential(nn.Linear(cfg.noise_embedding_dim, E), nn.SiLU(), nn.Linear(E, E))
        self.conv_in = nn.Conv2d(cfg.in_channels, base, 3, padding=1)

        ch = base
        skips = []
        self.down = nn.ModuleList()
        for mult in cfg.channel_multipliers:
            blocks = nn.ModuleList()
            for _ in range(cfg.num_blocks):
                blocks.append(ResBlock(ch, base * mult, E))
                ch = base * mult
            self.down.append(blocks)
            skips.append(ch)
        self.mid = nn.ModuleList([ResBlock(ch, ch, E), ResBlock(ch, ch, E)])
        self.up = nn.ModuleList()
        for level in reversed(range(len(cfg.channel_multipliers))):
            out = base * cfg.channel_multipliers[level]
            blocks = nn.ModuleList([ResBlock(ch + skips[level], out, E)])
            blocks.extend(ResBlock(out, out, E) for _ in range(cfg.num_blocks - 1))
            self.up.append(blocks)
            ch = out
        self.norm_out = nn.GroupNorm(num_groups(ch), ch)
        self.conv_out = nn.Conv2d(ch, cfg.in_channels, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)

    def forward(self, x, c_noise):
        c_noise = torch.as_tensor(c_noise, dtype=x.dtype).reshape(-1)
        if c_noise.numel() == 1:
            c_noise = c_noise.expand(x.shape[0])
        angles = c_noise[:, None] * self.freqs.to(x.dtype)[None]
        emb = self.embed(torch.cat([angles.cos(), angles.sin()], dim=1))

        h = self.conv_in(x)
        skips = []
        levels = len(self.down)
        for i, blocks in enumerate(self.down):
            for block in blocks:
                h = block(h, emb)
            skips.append(h)
            if i < levels - 1:
                h = F.avg_pool2d(h, 2)
        for block in self.mid:
            h = block(h, emb)
        for j, blocks in enumerate(self.up):
            if j > 0:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = torch.cat([h, skips[levels - 1 - j]], dim=1)
            for block in blocks:
                h = block(h, emb)
        return self.conv_out(F.silu(self.norm_out(h)))


class EDMDenoiser(nn.Module):
    """``D(x; sigma) = c_skip x + c_out F(c_in x, c_noise)`` around a :class:`UNet`."""

    def __init__(self, cfg: DenoiserConfig, sigma_data: float = 0.5):
        super().__init__()
        self.cfg = cfg
        self.sigma_data = sigma_data
        self.net = UNet(cfg)

    def forward(self, x, sigma):
        if not torch.is_tensor(sigma):
            sigma = torch.tensor(sigma, dtype=x.dtype)
        sigma = sigma.to(x.dtype)
        if sigma.ndim == 0:
            sigma = sigma.reshape(1, 1, 1, 1)
        c_skip, c_out, c_in, c_noise = edm_coefficients(sigma, self.sigma_data)
        return c_skip * x + c_out * self.net(c_in * x, c_noise)

    def denoise(self, x, sigma, chunk: int = 1024):
        """Torch inputs keep the graph; numpy inputs run without grad and return float64."""
        if torch.is_tensor(x):
            return self(x, sigma)
        arr = np.asarray(x)
        dtype = next(self.parameters()).dtype
        flat = arr.reshape((-1,) + arr.shape[-3:])
        out = np.empty(flat.shape, dtype=np.float64)
        with torch.no_grad():
            for i in range(0, len(flat), chunk):
                xb = torch.from_numpy(np.ascontiguousarray(flat[i : i + chunk])).to(dtype)
                out[i : i + chunk] = self(xb, float(sigma)).double().numpy()
        return out.reshape(arr.shape)


def build_model(cfg: DenoiserConfig, sigma_data: float = 0.5, seed: int = 0) -> EDMDenoiser:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return EDMDenoiser(cfg, sigma_data)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def make_optimizer(model: nn.Module, lr: float = 1e-4, weight_decay: float = 0.0) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(), lr=lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=weight_decay, foreach=False
    )


def backward(loss: torch.Tensor, model: nn.Module) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss with respect to every named parameter.

    Parameters the loss does not depend on get exact zeros.
    """
    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    out = {}
    for (name, p), g in zip(named, grads):
        g = torch.zeros_like(p) if g is None else g
        if not torch.isfinite(g).all():
            raise NonFiniteGradientError(name)
        out[name] = g.detach().cpu().numpy()
    return out


def epoch_seed(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


def train_epoch(
    model: EDMDenoiser,
    optimizer: torch.optim.Optimizer,
    images: np.ndarray,
    diffusion_cfg: DiffusionConfig,
    batch_size: int,
    seed,
    epoch: int | None = None,
) -> float:
    """One shuffled pass over ``images`` ``(N, C, H, W)``; updates in place, returns mean batch loss."""
    if len(images) == 0:
        raise ValueError("no training images")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dtype = next(model.parameters()).dtype
    data = torch.as_tensor(np.asarray(images), dtype=dtype)
    order = rng.permutation(len(data))
    model.train()
    losses = []
    for b, start in enumerate(range(0, len(data), batch_size)):
        x0 = data[order[start : start + batch_size]]
        sigma = sample_sigma_for_training(diffusion_cfg, rng, size=len(x0))
        noise = rng.standard_normal(tuple(x0.shape))
        sigma_t = torch.as_tensor(sigma, dtype=dtype).reshape(-1, 1, 1, 1)
        loss = training_loss(model, x0, torch.as_tensor(noise, dtype=dtype), sigma_t, diffusion_cfg)
        if not torch.isfinite(loss):
            raise NonFiniteLossError(b, epoch)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    model.eval()
    return float(np.mean(losses))


# ------------------------------------------------------------------- checkpoints

MAGIC = b"TSDM"
FORMAT_VERSION = 1
_DTYPES = {"<f4": 0, "<f8": 1, "<i8": 2, "<i4": 3}
_DTYPE_TAGS = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    configs: dict
    tensors: dict[str, np.ndarray] = field(repr=False)

    def model_state(self) -> dict[str, np.ndarray]:
        return {k[len("model/"):]: v for k, v in self.tensors.items() if k.startswith("model/")}

    def restore(self, model: nn.Module, optimizer: torch.optim.Optimizer | None = None) -> None:
        """Copy stored arrays into ``model`` (and ``optimizer``) after checking shapes."""
        state = self.model_state()
        own = model.state_dict()
        if set(state) != set(own):
            missing = sorted(set(own) - set(state))[:3]
            extra = sorted(set(state) - set(own))[:3]
            raise CheckpointShapeError(f"parameter names differ (missing {missing}, unexpected {extra})")
        for name, arr in state.items():
            if tuple(own[name].shape) != arr.shape:
                raise CheckpointShapeError(f"{name}: checkpoint shape {arr.shape}, model {tuple(own[name].shape)}")
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in state.items()})
        if optimizer is None:
            return
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                name = names[id(p)]
                key = f"optim/{name}/"
                if key + "step" not in self.tensors:
                    optimizer.state.pop(p, None)
                    continue
                optimizer.state[p] = {
                    "step": torch.tensor(float(self.tensors[key + "step"][()])),
                    "exp_avg": torch.from_numpy(self.tensors[key + "exp_avg"].copy()),
                    "exp_avg_sq": torch.from_numpy(self.tensors[key + "exp_avg_sq"].copy()),
                }
        hyper = self.configs.get("optimizer", {})
        for group in optimizer.param_groups:
            for k in ("lr", "weight_decay"):
                if k in hyper:
                    group[k] = hyper[k]


def _canonical(configs: dict) -> bytes:
    return json.dumps(configs, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def save_checkpoint(path, model: nn.Module, optimizer: torch.optim.Optimizer | None, configs: dict) -> None:
    """Write model weights, AdamW moments and a canonical config block with a CRC32 trailer."""
    configs = dict(configs)
    tensors: dict[str, np.ndarray] = {}
    for name, t in model.state_dict().items():
        tensors[f"model/{name}"] = t.detach().cpu().numpy()
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        group = optimizer.param_groups[0]
        configs["optimizer"] = {
            "kind": "AdamW",
            "lr": group["lr"],
            "weight_decay": group["weight_decay"],
            "betas": list(group["betas"]),
            "eps": group["eps"],
        }
        for p, st in optimizer.state.items():
            if not st:
                continue
            key = f"optim/{names[id(p)]}/"
            tensors[key + "step"] = np.asarray(float(st["step"]), dtype=np.float64)
            tensors[key + "exp_avg"] = st["exp_avg"].detach().cpu().numpy()
            tensors[key + "exp_avg_sq"] = st["exp_avg_sq"].detach().cpu().numpy()

    block = _canonical(configs)
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(block)), block]
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        tag = arr.dtype.newbyteorder("<").str
        if tag not in _DTYPES:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw_name = name.encode()
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", _DTYPES[tag], arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=tag).tobytes())
    payload = b"".join(parts)
    Path(path).write_bytes(payload + struct.pack("<I", zlib.crc32(payload)))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError("checkpoint ends unexpectedly")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a TSDM checkpoint")
    payload, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    (version,) = struct.unpack("<I", data[4:8])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if zlib.crc32(payload) != crc:
        raise CorruptCheckpointError(f"{path}: checksum mismatch (truncated or corrupt file)")
    r = _Reader(payload)
    r.take(8)
    (block_len,) = r.unpack("<I")
    try:
        configs = json.loads(r.take(block_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable config block") from exc
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        tag, ndim = r.unpack("<BB")
        if tag not in _DTYPE_TAGS:
            raise CorruptCheckpointError(f"{path}: unknown dtype tag {tag} for {name}")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        dtype = np.dtype(_DTYPE_TAGS[tag])
        nbytes = dtype.itemsize * math.prod(shape)
        tensors[name] = np.frombuffer(r.take(nbytes), dtype=dtype).reshape(shape).copy()
    if r.pos != len(payload):
        raise CorruptCheckpointError(f"{path}: trailing bytes after tensor records")
    return Checkpoint(configs, tensors)
