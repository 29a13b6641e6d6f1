"""Shared model builders for the test suite.

The canonical bench system is the 16-queue-state, 8-channel-state setup used
throughout: Poisson(3) arrivals truncated to the queue, BER target 1e-3,
discount 0.95, slow flat Rayleigh FSMC (10 Hz Doppler, 1 ms epochs). Tests
vary the weight factor, the SNR and the channel-state count around it.
"""

import numpy as np
import pytest

from qamsched import (
    ArrivalDist,
    ChannelParams,
    SystemConfig,
    SystemModel,
    build_fsmc,
    make_poisson_arrivals,
)


def canonical_channel(num_states=8, snr_db=0.0, doppler_hz=10.0, epoch_seconds=1e-3):
    params = ChannelParams(
        average_snr=10.0 ** (snr_db / 10.0),
        doppler_hz=doppler_hz,
        epoch_seconds=epoch_seconds,
        num_states=num_states,
    )
    return build_fsmc(params)


def canonical_model(weight=1.0, num_states=8, snr_db=0.0, queue_size=15, max_action=5,
                    discount=0.95, ber=1e-3, channel=None, arrival_rate=3.0):
    if channel is None:
        channel = canonical_channel(num_states=num_states, snr_db=snr_db)
    config = SystemConfig(
        queue_size=queue_size,
        max_action=max_action,
        weight=weight,
        ber_constraint=ber,
        discount=discount,
        arrivals=make_poisson_arrivals(arrival_rate, queue_size),
        channel=channel,
    )
    return SystemModel(config)


def dominance_breaking_override(channel):
    """Replace the top two rows with the deterministic jump pattern that
    breaks first-order dominance (second-best state jumps to best, best state
    crashes to worst)."""
    P = channel.transition.copy()
    K = P.shape[0]
    P[K - 2] = 0.0
    P[K - 2, K - 1] = 1.0
    P[K - 1] = 0.0
    P[K - 1, 0] = 1.0
    return channel.with_transition(P)


def random_system(rng, queue_range=(4, 20), action_cap=None, k_range=(1, 10),
                  weight_range=(0.01, 1000.0), discount_range=(0.0, 0.99)):
    """One random valid instance: random channel (half with reshuffled
    transition rows), random arrival pmf, log-uniform weight."""
    L = int(rng.integers(queue_range[0], queue_range[1] + 1))
    a_hi = L if action_cap is None else min(L, action_cap)
    Am = int(rng.integers(1, a_hi + 1))
    K = int(rng.integers(k_range[0], k_range[1] + 1))
    params = ChannelParams(
        average_snr=float(np.exp(rng.uniform(np.log(0.05), np.log(100.0)))),
        doppler_hz=float(rng.uniform(0.0, 200.0)),
        epoch_seconds=1e-3,
        num_states=K,
    )
    channel = build_fsmc(params)
    if rng.random() < 0.5:
        channel = channel.with_transition(rng.dirichlet(np.ones(K), size=K))
    pmf = rng.dirichlet(np.full(L + 1, float(rng.choice([0.3, 1.0, 3.0]))))
    config = SystemConfig(
        queue_size=L,
        max_action=Am,
        weight=float(np.exp(rng.uniform(np.log(weight_range[0]), np.log(weight_range[1])))),
        ber_constraint=float(np.exp(rng.uniform(np.log(1e-5), np.log(0.2)))),
        discount=float(rng.uniform(discount_range[0], discount_range[1])),
        arrivals=ArrivalDist(pmf=pmf),
        channel=channel,
    )
    return SystemModel(config)


@pytest.fixture(scope="session")
def bench_channel():
    return canonical_channel()


@pytest.fixture(scope="session")
def bench_model_w1(bench_channel):
    return canonical_model(weight=1.0, channel=bench_channel)


@pytest.fixture(scope="session")
def bench_model_w100(bench_channel):
    return canonical_model(weight=100.0, channel=bench_channel)
