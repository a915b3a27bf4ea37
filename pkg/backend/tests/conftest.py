import numpy as np
import pytest

from scfde.design import powalloc
from scfde.design.precoder import design_precoders
from scfde.linalg.channel import tone_gains
from scfde.parsers.config_parser import parse_config
from scfde.schemas import Criterion, ReceiverMode, Scheme
from scfde.verify import small_channel

SMALL_CONFIG = """
[system]
n_c = 8

[channel]
l_g = 3
l_h = 3
cp_source = 3
cp_relay = 3

[optimizer]
n_fb = 3

[simulation]
relay_snr_db = [8.0, 16.0]
trials = 2
seed = 7
"""


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    return parse_config(SMALL_CONFIG)


@pytest.fixture
def small_config_text():
    return SMALL_CONFIG


@pytest.fixture
def link():
    """Factory: one small channel plus a designed precoder set.

    Returns (channel, precoders, allocation, gains).
    """
    def make(scheme=Scheme.JSR, criterion=Criterion.AMSE, mode=ReceiverMode.LINEAR, n_fb=0,
             noise=(1.0, 1.0), snr_per_subchannel=10.0, seed=5):
        ch = small_channel(np.random.default_rng(seed))
        budget = 2 * ch.n_c * snr_per_subchannel
        pre, alloc, gains = design_precoders(ch, 2, scheme, criterion, mode, (budget, budget), noise, n_fb)
        return ch, pre, alloc, gains
    return make


@pytest.fixture
def gains_2x2():
    g, h = tone_gains(small_channel(np.random.default_rng(11), n_c=2, taps=2), 2)
    return powalloc.SubchannelGains(g, h)
