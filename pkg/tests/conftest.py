import numpy as np
import pytest

from chainflat import AffineSegment, Hyperplane, MonotonicChain, gen_random_chain

THETA = np.radians(60.0)
PHI = np.radians(30.0)


def short_example_chain(theta=THETA, phi=PHI):
    """Unit segment along -x into the origin, then a unit ray at angle theta; fold normal at phi."""
    s1 = AffineSegment([-1.0, 0.0], [[1.0], [0.0]], [0.0], [1.0])
    s2 = AffineSegment([0.0, 0.0], [[np.cos(theta)], [np.sin(theta)]], [0.0], [1.0])
    hp = Hyperplane.through([np.cos(phi), np.sin(phi)], [0.0, 0.0])
    return MonotonicChain.from_segments([s1, s2], [hp])


def random_chain_params(seed):
    """(d, m, K) drawn the way the acceptance suite draws them."""
    rng = np.random.default_rng(10_000 + seed)
    return int(rng.integers(4, 13)), int(rng.integers(1, 4)), int(rng.integers(2, 9))


def random_suite(n=100, max_deg=30.0):
    for seed in range(n):
        d, m, K = random_chain_params(seed)
        chain, samples = gen_random_chain(d, m, K, np.radians(max_deg), seed=seed)
        yield seed, chain, samples


@pytest.fixture
def short_chain():
    return short_example_chain()


@pytest.fixture
def chain625():
    return gen_random_chain(6, 2, 5, np.radians(25.0), seed=7)
