"""Invertible time-series to image maps.

Every forward map takes a series ``(L, K)`` or a batch ``(N, L, K)`` and returns
images ``(C, H, W)`` / ``(N, C, H, W)``; every inverse accepts either form and
returns the matching series shape.
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

KINDS = ("delay-embedding", "stft", "folding", "gaf")


class TransformError(ValueError):
    pass


class UnsupportedKindError(TransformError):
    pass


class NonInvertibleWindowError(TransformError):
    pass


@dataclass(frozen=True)
class TransformSpec:
    """Which map to apply plus every parameter it needs.

    ``target_size`` is the ``(H, W)`` the image is zero-padded to; ``None`` means
    a default size (square for delay embedding and folding).
    """

    kind: str
    L: int
    K: int
    n: int | None = None
    m: int | None = None
    n_fft: int | None = None
    hop_length: int | None = None
    target_size: tuple[int, int] | None = None
    max_gaf_length: int = 256

    def __post_init__(self):
        if self.target_size is not None:
            object.__setattr__(self, "target_size", tuple(int(v) for v in self.target_size))
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise UnsupportedKindError(f"unknown transform kind {self.kind!r}; expected one of {KINDS}")
        if self.L < 1 or self.K < 1:
            raise TransformError(f"L and K must be positive, got L={self.L}, K={self.K}")
        if self.kind == "delay-embedding":
            if self.n is None or self.m is None:
                raise TransformError("delay-embedding requires n and m")
            if not 1 <= self.m <= self.L:
                raise TransformError(f"delay-embedding requires 1 <= m <= L, got m={self.m}, L={self.L}")
            if not 1 <= self.n <= self.L:
                raise TransformError(f"delay-embedding requires 1 <= n <= L, got n={self.n}, L={self.L}")
            if self.m > self.n and self.L > self.n:
                # windows would skip time indices n..m-1, n+m..2m-1, ...
                raise NonInvertibleWindowError(
                    f"delay-embedding with m={self.m} > n={self.n} leaves time indices uncovered"
                )
        elif self.kind == "stft":
            if self.n_fft is None or self.hop_length is None:
                raise TransformError("stft requires n_fft and hop_length")
            if self.n_fft < 3 or self.n_fft % 2 == 0:
                raise TransformError(f"stft requires an odd n_fft >= 3, got {self.n_fft}")
            if self.hop_length < 1:
                raise TransformError(f"stft requires hop_length >= 1, got {self.hop_length}")
            if self.hop_length > self.n_fft:
                raise NonInvertibleWindowError(
                    f"hop_length={self.hop_length} > n_fft={self.n_fft} leaves gaps between frames"
                )
        elif self.kind == "gaf":
            if self.L > self.max_gaf_length:
                raise TransformError(f"gaf image is L x L; L={self.L} exceeds max_gaf_length={self.max_gaf_length}")
        if self.target_size is not None:
            H, W = self.target_size
            natural = self.content_size()
            if H < natural[0] or W < natural[1]:
                raise TransformError(
                    f"target_size {self.target_size} is smaller than the {self.kind} image {natural}"
                )
            if self.kind == "folding" and H * W < self.L:
                raise TransformError(f"target_size {self.target_size} cannot hold L={self.L} values")

    # shapes are derived from the parameters alone

    @property
    def columns(self) -> int:
        """Delay-embedding column count, enough to cover every time index."""
        return -(-(self.L - self.n) // self.m) + 1

    @property
    def stft_length(self) -> int:
        """Series length fed to the STFT after any pre-interpolation."""
        return max(self.L, self.n_fft)

    @property
    def stft_frames(self) -> int:
        padded = self.stft_length + 2 * (self.n_fft // 2)
        return 1 + (padded - self.n_fft) // self.hop_length

    def content_size(self) -> tuple[int, int]:
        """Smallest ``(H, W)`` that holds the map's output before padding."""
        if self.kind == "delay-embedding":
            return (self.n, self.columns)
        if self.kind == "stft":
            return (self.n_fft // 2 + 1, self.stft_frames)
        if self.kind == "gaf":
            return (self.L, self.L)
        return (1, 1)

    def default_size(self) -> tuple[int, int]:
        if self.kind == "delay-embedding":
            side = max(self.content_size())
            return (side, side)
        if self.kind == "folding":
            side = math.ceil(math.sqrt(self.L))
            return (side, side)
        return self.content_size()

    @property
    def channels(self) -> int:
        return 2 * self.K if self.kind == "stft" else self.K

    def image_shape(self) -> tuple[int, int, int]:
        H, W = self.target_size if self.target_size is not None else self.default_size()
        return (self.channels, H, W)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["target_size"] is not None:
            d["target_size"] = list(d["target_size"])
        return d


def _series(x, spec: TransformSpec, allow_nan: bool = False) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1:] != (spec.L, spec.K):
        raise TransformError(f"series shape {np.shape(x)} does not match spec (L, K)=({spec.L}, {spec.K})")
    if not allow_nan and not np.isfinite(arr).all():
        raise TransformError("series contains non-finite values")
    return arr, single


def _images(img, spec: TransformSpec) -> tuple[np.ndarray, bool]:
    arr = np.asarray(img)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1:] != spec.image_shape():
        raise TransformError(f"image shape {np.shape(img)} does not match spec {spec.image_shape()}")
    return arr, single


def _out(arr: np.ndarray, single: bool) -> np.ndarray:
    return arr[0] if single else arr


# ------------------------------------------------------------------ delay embedding


def _embed(x: np.ndarray, spec: TransformSpec, fill) -> np.ndarray:
    """Per channel, column j holds x[j*m : j*m + n]; cells past L and padding get ``fill``."""
    N, L, K = x.shape
    n, m, q = spec.n, spec.m, spec.columns
    _, H, W = spec.image_shape()
    span = (q - 1) * m + n
    padded = np.full((N, K, span), fill, dtype=x.dtype)
    padded[:, :, :L] = np.moveaxis(x, 1, 2)
    windows = np.lib.stride_tricks.sliding_window_view(padded, n, axis=2)[:, :, ::m]
    img = np.full((N, K, H, W), fill, dtype=x.dtype)
    img[:, :, :n, :q] = np.swapaxes(windows, 2, 3)
    return img


def delay_embed(x, spec: TransformSpec) -> np.ndarray:
    if spec.kind != "delay-embedding":
        raise UnsupportedKindError(f"delay_embed needs a delay-embedding spec, got {spec.kind!r}")
    arr, single = _series(x, spec)
    return _out(_embed(arr, spec, 0.0), single)


def delay_embed_inverse(img, spec: TransformSpec) -> np.ndarray:
    """Average every cell that maps to the same time index.

    The mean is taken as ``ref + mean(cell - ref)`` around one covering cell, so
    identical duplicates reproduce their value bit for bit.
    """
    if spec.kind != "delay-embedding":
        raise UnsupportedKindError(f"delay_embed_inverse needs a delay-embedding spec, got {spec.kind!r}")
    arr, single = _images(img, spec)
    arr = arr.astype(np.float64, copy=False)
    N, K = arr.shape[:2]
    n, m, q, L = spec.n, spec.m, spec.columns, spec.L
    span = (q - 1) * m + n
    ref = np.zeros((N, K, span))
    for r in range(n - 1, -1, -1):
        ref[:, :, r : r + m * q : m] = arr[:, :, r, :q]
    dev = np.zeros((N, K, span))
    count = np.zeros(span)
    for r in range(n):
        dev[:, :, r : r + m * q : m] += arr[:, :, r, :q] - ref[:, :, r : r + m * q : m]
        count[r : r + m * q : m] += 1
    out = ref[:, :, :L] + dev[:, :, :L] / count[:L]
    return _out(np.moveaxis(out, 1, 2), single)


# ----------------------------------------------------------------------- folding


def fold(x, spec: TransformSpec) -> np.ndarray:
    if spec.kind != "folding":
        raise UnsupportedKindError(f"fold needs a folding spec, got {spec.kind!r}")
    arr, single = _series(x, spec)
    return _out(_fold(arr, spec, 0.0), single)


def _fold(x: np.ndarray, spec: TransformSpec, fill) -> np.ndarray:
    N, L, K = x.shape
    C, H, W = spec.image_shape()
    flat = np.full((N, K, H * W), fill, dtype=x.dtype)
    flat[:, :, :L] = np.moveaxis(x, 1, 2)
    return flat.reshape(N, K, H, W)


def unfold(img, spec: TransformSpec) -> np.ndarray:
    if spec.kind != "folding":
        raise UnsupportedKindError(f"unfold needs a folding spec, got {spec.kind!r}")
    arr, single = _images(img, spec)
    N, K = arr.shape[:2]
    flat = arr.reshape(N, K, -1)[:, :, : spec.L].astype(np.float64, copy=False)
    return _out(np.moveaxis(flat, 1, 2), single)


# -------------------------------------------------------------------------- stft


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window of length ``n``."""
    return 0.5 - 0.5 * np.cos(2.0 * math.pi * np.arange(n) / n)


def _resample(x: np.ndarray, new_length: int) -> np.ndarray:
    """Linear interpolation along axis 1 onto ``new_length`` evenly spaced points."""
    old = x.shape[1]
    if old == new_length:
        return x
    src = np.linspace(0.0, 1.0, old) if old > 1 else np.zeros(1)
    dst = np.linspace(0.0, 1.0, new_length)
    out = np.empty((x.shape[0], new_length, x.shape[2]))
    for i in range(x.shape[0]):
        for k in range(x.shape[2]):
            out[i, :, k] = np.interp(dst, src, x[i, :, k]) if old > 1 else x[i, 0, k]
    return out


def _stft_raw(x: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """Complex STFT, shape ``(N, K, n_fft // 2 + 1, frames)``."""
    n_fft, hop = spec.n_fft, spec.hop_length
    sig = np.moveaxis(_resample(x, spec.stft_length), 1, 2)
    pad = n_fft // 2
    sig = np.pad(sig, ((0, 0), (0, 0), (pad, pad)), mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(sig, n_fft, axis=2)[:, :, ::hop][:, :, : spec.stft_frames]
    spectrum = np.fft.rfft(frames * hann_window(n_fft), axis=-1)
    return np.swapaxes(spectrum, 2, 3)


def stft_forward(x, spec: TransformSpec, scale=None) -> tuple[np.ndarray, np.ndarray]:
    """Hann-windowed, centred, reflect-padded STFT stored as (real, imag) channel pairs.

    Returns ``(images, scale)``. Images are divided by ``scale`` (one value per
    image, or a single dataset-wide value if given) so they lie in [-1, 1].
    Channel ``2k`` holds the real part of input channel ``k``, ``2k + 1`` the
    imaginary part.
    """
    if spec.kind != "stft":
        raise UnsupportedKindError(f"stft_forward needs an stft spec, got {spec.kind!r}")
    arr, single = _series(x, spec)
    z = _stft_raw(arr, spec)
    N, K, F, T = z.shape
    if scale is None:
        scale = np.maximum(np.abs(z.real).max(axis=(1, 2, 3)), np.abs(z.imag).max(axis=(1, 2, 3)))
        scale = np.where(scale > 0, scale, 1.0)
    scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), (N,)).copy()
    _, H, W = spec.image_shape()
    img = np.zeros((N, 2 * K, H, W))
    img[:, 0::2, :F, :T] = z.real
    img[:, 1::2, :F, :T] = z.imag
    img /= scale[:, None, None, None]
    return _out(img, single), (scale[0] if single else scale)


def stft_inverse(img, spec: TransformSpec, scale=1.0) -> np.ndarray:
    """Undo scaling, inverse-DFT each frame and overlap-add with window-square normalization."""
    if spec.kind != "stft":
        raise UnsupportedKindError(f"stft_inverse needs an stft spec, got {spec.kind!r}")
    arr, single = _images(img, spec)
    N = arr.shape[0]
    n_fft, hop, T = spec.n_fft, spec.hop_length, spec.stft_frames
    F = n_fft // 2 + 1
    scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), (N,))
    arr = arr.astype(np.float64) * scale[:, None, None, None]
    z = arr[:, 0::2, :F, :T] + 1j * arr[:, 1::2, :F, :T]
    window = hann_window(n_fft)
    frames = np.fft.irfft(np.swapaxes(z, 2, 3), n=n_fft, axis=-1) * window
    pad = n_fft // 2
    length = spec.stft_length
    total = (T - 1) * hop + n_fft
    K = z.shape[1]
    sig = np.zeros((N, K, total))
    norm = np.zeros(total)
    for i in range(T):
        sig[:, :, i * hop : i * hop + n_fft] += frames[:, :, i]
        norm[i * hop : i * hop + n_fft] += window**2
    region = slice(pad, pad + length)
    if total < pad + length or norm[region].min() < 1e-8:
        raise NonInvertibleWindowError(
            f"overlap-add denominator vanishes for n_fft={n_fft}, hop_length={hop}"
        )
    out = sig[:, :, region] / norm[region]
    out = np.moveaxis(out, 1, 2)
    if length != spec.L:
        out = _resample(out, spec.L)
    return _out(out, single)


# --------------------------------------------------------------------------- gaf


def gaf_forward(x, spec: TransformSpec) -> np.ndarray:
    """Gramian angular (summation) field ``G[i, j] = cos(phi_i + phi_j)``.

    Inputs must already lie in [0, 1] so that ``phi = arccos(x)`` is in
    [0, pi/2] and the diagonal determines ``x`` without sign ambiguity.
    """
    if spec.kind != "gaf":
        raise UnsupportedKindError(f"gaf_forward needs a gaf spec, got {spec.kind!r}")
    arr, single = _series(x, spec)
    if arr.min() < -1e-12 or arr.max() > 1 + 1e-12:
        raise TransformError("gaf input must be rescaled to [0, 1] first")
    phi = np.arccos(np.clip(arr, 0.0, 1.0))
    phi = np.moveaxis(phi, 1, 2)
    G = np.cos(phi[:, :, :, None] + phi[:, :, None, :])
    _, H, W = spec.image_shape()
    img = np.zeros((arr.shape[0], spec.K, H, W))
    img[:, :, : spec.L, : spec.L] = G
    return _out(img, single)


def gaf_inverse(img, spec: TransformSpec) -> np.ndarray:
    """Read the diagonal ``cos(2 phi) = 2x^2 - 1`` and take the nonnegative root."""
    if spec.kind != "gaf":
        raise UnsupportedKindError(f"gaf_inverse needs a gaf spec, got {spec.kind!r}")
    arr, single = _images(img, spec)
    L = spec.L
    diag = arr[:, :, np.arange(L), np.arange(L)].astype(np.float64)
    x = np.sqrt(np.clip((1.0 + diag) / 2.0, 0.0, 1.0))
    return _out(np.moveaxis(x, 1, 2), single)


# ------------------------------------------------------------------ dispatchers


def forward(x, spec: TransformSpec, stft_scale_value=None):
    """Apply the map named by ``spec``. For STFT returns ``(images, scale)``."""
    if spec.kind == "delay-embedding":
        return delay_embed(x, spec)
    if spec.kind == "folding":
        return fold(x, spec)
    if spec.kind == "gaf":
        return gaf_forward(x, spec)
    return stft_forward(x, spec, stft_scale_value)


def inverse(img, spec: TransformSpec, stft_scale_value=1.0) -> np.ndarray:
    if spec.kind == "delay-embedding":
        return delay_embed_inverse(img, spec)
    if spec.kind == "folding":
        return unfold(img, spec)
    if spec.kind == "gaf":
        return gaf_inverse(img, spec)
    return stft_inverse(img, spec, stft_scale_value)


def project_time_mask(mask, spec: TransformSpec) -> np.ndarray:
    """Map an ``(L, K)`` observedness mask to image space.

    A pixel is observed iff the time index it holds is observed; padding pixels
    are always observed.
    """
    if spec.kind not in ("delay-embedding", "folding"):
        raise UnsupportedKindError(f"time masks cannot be projected through {spec.kind!r}")
    arr = np.asarray(mask, dtype=bool)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.shape[1:] != (spec.L, spec.K):
        raise TransformError(f"mask shape {np.shape(mask)} does not match spec (L, K)=({spec.L}, {spec.K})")
    if spec.kind == "delay-embedding":
        img = _embed(arr, spec, True)
    else:
        img = _fold(arr, spec, True)
    return _out(img, single)


# --------------------------------------------------------------- debug emitter

_IMAGE_MAGIC = b"TSIM"


def write_image_file(path, img) -> None:
    """Write one ``(C, H, W)`` image: magic, u32 C/H/W little-endian, f32 row-major."""
    arr = np.asarray(img, dtype="<f4")
    if arr.ndim != 3:
        raise TransformError(f"expected a (C, H, W) image, got shape {arr.shape}")
    with Path(path).open("wb") as fh:
        fh.write(_IMAGE_MAGIC + struct.pack("<3I", *arr.shape))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_image_file(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != _IMAGE_MAGIC:
        raise TransformError(f"{path}: not a TSIM image file")
    C, H, W = struct.unpack("<3I", data[4:16])
    body = data[16:]
    if len(body) != 4 * C * H * W:
        raise TransformError(f"{path}: expected {4 * C * H * W} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(C, H, W).copy()
