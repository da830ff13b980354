import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from mgcc.config import ModelConfig  # noqa: E402
from mgcc.pipeline.model import build_model  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"

# widths small enough for element-wise finite differences
TOY = dict(
    image_shape=(4, 4, 1), d=4, e=8, k=2, n=2, backbone_layers=1, backbone_heads=2,
    refine_layers=4, m=8, mapper_layers=4, mapper_heads=2, L=2, c=4,
)


@pytest.fixture
def golden_dir() -> Path:
    return GOLDEN


@pytest.fixture
def toy_cfg() -> ModelConfig:
    return ModelConfig(**TOY)


@pytest.fixture
def toy_model64(toy_cfg):
    return build_model(toy_cfg, dtype=torch.float64)


@pytest.fixture
def toy_pair():
    rng = np.random.default_rng(3)
    return (rng.integers(0, 256, size=(4, 4, 1), dtype=np.uint8), "two dogs")


@pytest.fixture(scope="session")
def default_model():
    return build_model(ModelConfig())


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion and fail on FAIL."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def check(number: int, name: str, body) -> None:
        # body() returns (ok, detail); an exception counts as FAIL
        try:
            ok, detail = body()
        except Exception as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        lines.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
