import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from tsimg.config import load_config
from tsimg.pipeline import TrainedModel, train


@dataclass
class SineRun:
    trained: TrainedModel
    checkpoint: Path
    seconds: float


@pytest.fixture(scope="session")
def sine_run(tmp_path_factory) -> SineRun:
    """The desk-scale sine preset trained once per test session (about 15 minutes on one CPU)."""
    out = tmp_path_factory.mktemp("sine_run")
    start = time.perf_counter()
    trained = train(load_config("preset:sine"), out)
    return SineRun(trained, out / "final.tsdm", time.perf_counter() - start)


TINY = """\
dataset: {source: sine, L: 24, K: 2, num_samples: 64, normalization: minmax11}
transform: {kind: delay-embedding, n: 8, m: 3, target_size: [8, 8]}
diffusion: {num_steps: 4}
denoiser: {base_channels: 8, channel_multipliers: [1, 2], noise_embedding_dim: 16, num_blocks: 1}
training: {epochs: 4, batch_size: 32, lr: 1.0e-3, checkpoint_every: 2}
eval: {metrics: [discriminative, marginal], repeats: 1, encoder: {epochs: 3, batch_size: 16}}
"""


@pytest.fixture
def tiny_config(tmp_path) -> Path:
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    return path


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """``record(number, ok, detail)`` stores one summary line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_ACCEPTANCE[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
