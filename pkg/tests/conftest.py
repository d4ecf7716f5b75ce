import numpy as np
import pytest

from fedbag.model import ModelDims, init_weights


@pytest.fixture
def small_dims():
    return ModelDims(d_in=6, d_proj=5, d_attn=4, n_out=3)


def random_weights(dims, rng, scale=0.5):
    w = init_weights(dims, seed=int(rng.integers(1 << 30)))
    # non-zero biases so every bias gradient is exercised
    for name in w:
        if name.endswith(".bias"):
            w[name] = rng.normal(scale=scale, size=w[name].shape)
    return w


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
