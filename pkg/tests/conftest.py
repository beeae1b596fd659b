import numpy as np
import pytest
from scipy.optimize import brentq

from anomver import (ComponentChannel, DiscreteDistribution, SystemModel, homogeneous_model, kl,
                     max_min_divergence)

P0 = (0.8, 0.2)
P1 = (0.2, 0.8)


@pytest.fixture(scope="session")
def ref_model():
    return homogeneous_model(P0, P1, 2)


@pytest.fixture(scope="session")
def ref_solution(ref_model):
    return max_min_divergence(ref_model)


def symmetric_binary_channel(target_kl):
    """Channel p0=(a, 1-a), p1=(1-a, a) whose divergence equals target_kl."""
    a = brentq(lambda a: kl([a, 1 - a], [1 - a, a]) - target_kl, 0.5 + 1e-9, 1 - 1e-9)
    return ComponentChannel(DiscreteDistribution([a, 1 - a]), DiscreteDistribution([1 - a, a]))


@pytest.fixture(scope="session")
def hetero_model():
    ch1 = ComponentChannel(DiscreteDistribution(P0), DiscreteDistribution(P1))
    return SystemModel([ch1, symmetric_binary_channel(0.4)])


def random_model(rng, m, alphabet=None, homogeneous=False):
    def pmf(k):
        p = rng.uniform(0.05, 1.0, size=k)
        return p / p.sum()

    k = alphabet or int(rng.integers(2, 5))
    if homogeneous:
        ch = ComponentChannel(DiscreteDistribution(pmf(k)), DiscreteDistribution(pmf(k)))
        channels = [ch] * m
    else:
        channels = [ComponentChannel(DiscreteDistribution(pmf(k)), DiscreteDistribution(pmf(k)))
                    for _ in range(m)]
    prior = rng.uniform(0.1, 1.0, size=m + 1)
    return SystemModel(channels, prior / prior.sum())


_ACCEPTANCE_LINES = []


def record_criterion(line):
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
