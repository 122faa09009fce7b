import numpy as np
import pytest

from pnmimo.channel import SystemConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_cfg(**kw) -> SystemConfig:
    """Small default system used across unit tests."""
    base = dict(n_t=4, n_r=8, o_t=2, o_r=2, e_s=1.0, sigma2=0.1, l=8, r=4)
    base.update(kw)
    return SystemConfig(**base)


def random_channel(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    shape = (cfg.n_r, cfg.n_t)
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2.0)
