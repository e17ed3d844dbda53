"""
Shared fixtures: small hand-built models and the lattice reference scenario
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from analysis.phy import ChannelModel, dbm_to_watts
from analysis.qos import QosModel, barring_bounds
from runtime.scenario import ENV_HISTORY, ENV_THREADS, build_model, load_scenario

LATTICE_OVERRIDES = {"system": {"placement": "lattice", "symbols": 1000, "preambles": 50}}


def build_test_model(distances, theta=(1e-3, 1e-5), preambles=50, symbols=1000, p_idle=None,
                     fading="rayleigh", eps=1e-5, arrival_prob=0.1, mean_bits=500.0,
                     power_dbm=10.0, bandwidth_hz=360e3, d_bounds=(0.1, 0.9)):
    """QosModel of devices at the given distances with the reference radio settings."""
    channel = ChannelModel(np.asarray(distances, dtype=float), -174.0, bandwidth_hz, fading)
    x_min, x_max = barring_bounds(*d_bounds)
    return QosModel(
        theta=np.asarray(theta, dtype=float)[None, :],
        eps=eps,
        mean_bits=mean_bits,
        arrival_prob=arrival_prob,
        power_w=dbm_to_watts(power_dbm),
        gain_to_noise=channel.gain_to_noise,
        symbols=symbols,
        preambles=preambles,
        slot_s=5e-4,
        superframe_s=4e-3,
        x_min=x_min,
        x_max=x_max,
        p_idle=p_idle,
        fading=fading,
    )


@pytest.fixture
def make_model():
    return build_test_model


@pytest.fixture(scope="session")
def lattice_config():
    """100 devices on a 10 x 10 lattice over 500 m, S = 1000, M = 50."""
    return load_scenario(None, LATTICE_OVERRIDES)


@pytest.fixture(scope="session")
def lattice_model(lattice_config):
    return build_model(lattice_config)


@pytest.fixture
def interior_model():
    """Six close devices on two preambles; the lambda = 1000 equilibrium is interior."""
    return build_test_model([10.0, 20.0, 30.0, 40.0, 50.0, 60.0], preambles=2)


@pytest.fixture(autouse=True)
def isolated_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_HISTORY, str(tmp_path / "history.db"))
    monkeypatch.setenv(ENV_THREADS, "2")
