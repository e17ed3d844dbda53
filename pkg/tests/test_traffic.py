"""
Arrival model: effective bandwidth and the Bernoulli/exponential sampler
"""

import numpy as np
import pytest

from analysis.traffic import QueueProfile, effective_bandwidth, mean_arrival_rate, sample_arrival
from runtime.errors import DomainError

SLOT = 5e-4


def test_mean_arrival_rate():
    assert mean_arrival_rate(0.1, 500.0, SLOT) == pytest.approx(1e5)


def test_bandwidth_tends_to_mean_rate():
    assert effective_bandwidth(1e-9, 0.1, 500.0, SLOT) == pytest.approx(1e5, rel=1e-5)


@pytest.mark.parametrize("p", [0.02, 0.1, 0.5, 1.0])
def test_bandwidth_nondecreasing_convex_and_above_mean(p):
    mean_bits = 500.0
    theta = np.linspace(1e-6, 0.99 / mean_bits, 400)
    values = effective_bandwidth(theta, p, mean_bits, SLOT)
    assert np.all(np.diff(values) >= -1e-9 * values[1:])
    assert np.all(values >= mean_arrival_rate(p, mean_bits, SLOT) * (1.0 - 1e-12))
    curvature = values[2:] - 2.0 * values[1:-1] + values[:-2]
    assert np.all(curvature >= -1e-9 * values[1:-1])


def test_bandwidth_of_silent_source_is_zero():
    assert effective_bandwidth(1e-3, 0.0, 500.0, SLOT) == 0.0


@pytest.mark.parametrize("theta", [0.0, -1e-3, 2e-3, 1e-2])
def test_bandwidth_domain(theta):
    with pytest.raises(DomainError):
        effective_bandwidth(theta, 0.1, 500.0, SLOT)


@pytest.mark.parametrize("theta,p,mean_bits", [
    (2e-3, 0.9, 100.0),
    (1e-3, 0.5, 300.0),
    (5e-4, 1.0, 500.0),
    (1e-4, 0.8, 2000.0),
    (3e-4, 0.6, 1000.0),
])
def test_bandwidth_matches_monte_carlo(theta, p, mean_bits):
    rng = np.random.default_rng(2024)
    bits = sample_arrival(rng, p, mean_bits, size=1_000_000)
    estimate = np.log(np.mean(np.exp(theta * bits))) / (theta * SLOT)
    assert estimate == pytest.approx(effective_bandwidth(theta, p, mean_bits, SLOT), rel=1e-2)


def test_sampler_extremes_and_mean():
    rng = np.random.default_rng(1)
    assert np.all(sample_arrival(rng, 0.0, 500.0, size=1000) == 0.0)
    assert np.all(sample_arrival(rng, 1.0, 500.0, size=1000) > 0.0)
    bits = sample_arrival(rng, 0.1, 500.0, size=400_000)
    assert np.mean(bits) == pytest.approx(50.0, rel=3e-2)
    assert np.mean(bits > 0.0) == pytest.approx(0.1, rel=2e-2)


def test_sampler_broadcasts_per_queue_parameters():
    rng = np.random.default_rng(3)
    bits = sample_arrival(rng, np.array([[0.0], [1.0]]), np.array([[100.0, 200.0]]))
    assert bits.shape == (2, 2)
    assert np.all(bits[0] == 0.0) and np.all(bits[1] > 0.0)


def test_queue_profile_validation():
    profile = QueueProfile(arrival_prob=0.1, mean_bits=500.0, theta=1e-3, eps=1e-5)
    assert profile.power_w == pytest.approx(0.01)
    with pytest.raises(DomainError):
        QueueProfile(arrival_prob=1.2, mean_bits=500.0, theta=1e-3, eps=1e-5)
    with pytest.raises(DomainError):
        QueueProfile(arrival_prob=0.1, mean_bits=500.0, theta=2e-3, eps=1e-5)
    with pytest.raises(DomainError):
        QueueProfile(arrival_prob=0.1, mean_bits=500.0, theta=1e-3, eps=0.0)
    with pytest.raises(DomainError):
        QueueProfile(arrival_prob=0.1, mean_bits=0.0, theta=1e-3, eps=1e-5)
