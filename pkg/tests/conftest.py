import numpy as np
import pytest

from zimpute.frames import RandomStream, SampleFrame, build_population


@pytest.fixture
def tiny_population():
    return build_population(
        y=[0.0, 5.0, 3.0, 0.0, 7.5, 2.0, 0.0, 4.0],
        z=np.column_stack([np.ones(8), [1.0, 2.0, 1.5, 3.0, 2.5, 0.5, 1.0, 2.0]]),
        u=np.column_stack([np.ones(8), [0.2, -0.1, 0.4, 0.5, -0.3, 0.1, 0.0, 0.2]]),
        v=np.ones(8),
    )


@pytest.fixture
def small_sample(tiny_population):
    members = np.arange(8)
    pi = np.full(8, 0.5)
    r = np.array([1, 1, 1, 1, 0, 0, 1, 0])
    return SampleFrame.from_members(tiny_population, members, pi, r=r)


def make_mixture_sample(seed=0, n=200, respond=0.6, phi_intercept=0.6,
                        beta=(10.0, 2.0), sigma=3.0):
    """Small synthetic sample straight from the mixture data model."""
    g = RandomStream(seed).generator()
    x = g.uniform(0.0, 4.0, n)
    z = np.column_stack([np.ones(n), x])
    u = z.copy()
    phi = 1.0 / (1.0 + np.exp(-(phi_intercept + 0.3 * x)))
    eta = g.random(n) < phi
    y = np.where(eta, z @ np.asarray(beta) + sigma * g.normal(size=n), 0.0)
    pop = build_population(y=y, z=z, u=u, v=np.ones(n))
    r = (g.random(n) < respond).astype(int)
    if r.sum() < 5:
        r[:5] = 1
    sample = SampleFrame.from_members(pop, np.arange(n), np.full(n, 0.25), r=r)
    return sample
