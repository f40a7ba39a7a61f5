import numpy as np
import pytest

from qgad import _pykernels
from qgad.signal_io import NormalizedSeries, RawSeries

try:
    from qgad import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = [
    pytest.param(_pykernels, id="python"),
    pytest.param(
        _ckernels,
        id="cython",
        marks=pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built"),
    ),
]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_raw(channels, intervals=(), names=None, name="s"):
    channels = np.asarray(channels, dtype=np.float64)
    if channels.ndim == 1:
        channels = channels[None]
    names = names or tuple(f"c{i}" for i in range(len(channels)))
    return RawSeries(name, channels, tuple(names), 1.0, tuple(intervals))


def make_norm(channels, intervals=()):
    channels = np.asarray(channels, dtype=np.float64)
    if channels.ndim == 1:
        channels = channels[None]
    bounds = np.tile([0.0, 1.0], (len(channels), 1))
    names = tuple(f"c{i}" for i in range(len(channels)))
    return NormalizedSeries("s", channels, bounds, names, tuple(intervals), 1.0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
