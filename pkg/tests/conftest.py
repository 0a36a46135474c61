import numpy as np
import pytest

from rotd.environments import EpisodeBatch, Sample


def make_batch(phi, reward, phi_next, phi_bar_next=None, boundaries=None, seed=0) -> EpisodeBatch:
    """Batch from raw arrays; every sample is its own episode unless ``boundaries`` is given."""
    phi = np.asarray(phi, dtype=float)
    phi_next = np.asarray(phi_next, dtype=float)
    n = len(phi)
    return EpisodeBatch(
        phi=phi,
        reward=np.asarray(reward, dtype=float),
        phi_next=phi_next,
        phi_bar_next=phi_next.copy() if phi_bar_next is None else np.asarray(phi_bar_next, dtype=float),
        states=np.zeros((n, 1)),
        actions=np.zeros(n, dtype=np.int64),
        next_states=np.zeros((n, 1)),
        terminal=np.zeros(n, dtype=bool),
        episode_boundaries=np.arange(1, n + 1) if boundaries is None else np.asarray(boundaries),
        seed=seed,
    )


def random_sample(rng, d, separate_bar=False) -> Sample:
    phi = rng.standard_normal(d)
    phi_next = rng.standard_normal(d)
    bar = rng.standard_normal(d) if separate_bar else phi_next
    return Sample(phi, float(rng.standard_normal()), phi_next, bar)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
