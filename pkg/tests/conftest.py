import numpy as np
import pytest

from gridgen.codec import LatentDataset
from gridgen.model import HourglassConfig, HourglassModel


def pytest_addoption(parser):
    parser.addoption(
        "--kernel-lane",
        default=None,
        choices=("numpy", "compiled"),
        help="pin the kernel lane for the whole run",
    )


@pytest.fixture(scope="session", autouse=True)
def _pin_lane(request):
    lane = request.config.getoption("--kernel-lane")
    if lane is not None:
        from gridgen import kernels

        kernels.use(lane)


@pytest.fixture
def tiny_enum_model():
    """v=2 on a 2x2 grid: 16 enumerable states."""
    cfg = HourglassConfig(vocab=2, grid_shape=(2, 2), model_dim=16,
                          depths=(1, 1, 1), shorten_factor=1, heads=2)
    return HourglassModel(cfg, seed=5)


@pytest.fixture
def grad_model():
    """The gradient-check configuration: d=8, 2 heads, 4x4 grid, v=5."""
    cfg = HourglassConfig(vocab=5, grid_shape=(4, 4), model_dim=8,
                          depths=(1, 1, 1), shorten_factor=4, heads=2,
                          class_count=3)
    return HourglassModel(cfg, seed=1, dtype=np.float64)


@pytest.fixture
def single_grid_dataset():
    grid = np.array([[1, 0], [2, 1]], dtype=np.uint16)
    return LatentDataset(vocab=3, grid_shape=(2, 2),
                         entries=np.repeat(grid[None], 4, axis=0))


class StubModel:
    """Duck-typed model with fixed logits, independent of the input."""

    def __init__(self, logits_grid, grid_shape, vocab, scale=1.0):
        self.config = HourglassConfig(
            vocab=vocab, grid_shape=grid_shape, model_dim=8,
            depths=(1, 1, 1), shorten_factor=1, heads=2,
        )
        self._logits = np.asarray(logits_grid, dtype=np.float32) * scale

    def forward(self, tokens, class_labels=None, want_cache=False):
        tokens = np.asarray(tokens)
        batch = tokens.shape[0] if tokens.ndim == 2 else 1
        out = np.broadcast_to(self._logits, (batch,) + self._logits.shape).copy()
        return out


@pytest.fixture
def stub_model_factory():
    return StubModel
