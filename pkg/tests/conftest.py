import numpy as np
import pytest

from fzstream.codec import train_prior
from fzstream.core import PRESETS
from fzstream.synth import gen_tracks


@pytest.fixture(scope="session")
def priors():
    """One trained prior per preset, from tracks disjoint from any test stream."""
    out = {}
    for name, cfg in PRESETS.items():
        train = gen_tracks(4, 500, seed=1000, cfg=cfg)
        out[name] = train_prior([t.payloads for t in train], cfg)
    return out


@pytest.fixture(scope="session")
def full_cfg():
    return PRESETS["sup_unsup_expr"]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
