from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from tailquant.config import RunConfig
from tailquant.numerics import RngState
from tailquant.toynet import ToyNetConfig, gen_calibration_pool, init_toynet

settings.register_profile("default", deadline=None, max_examples=200)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_net():
    return init_toynet(ToyNetConfig(depth=2, d_model=16, n_heads=2, d_ff=32, seq_len=8,
                                    outlier_channels=2, seed=3))


@pytest.fixture(scope="session")
def default_setup():
    """Default-sized net and its 20-sample pool (seed 0)."""
    cfg = RunConfig()
    net = init_toynet(cfg.net_config())
    pool = gen_calibration_pool(net.config, cfg.pool_size, cfg.outlier_fraction,
                                RngState(cfg.seed).derive("pool"), cfg.pool_spec())
    return cfg, net, pool
