import numpy as np
import pytest
from hypothesis import settings

from mftrpo.core import MfMdp

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def random_mfmdp(seed, n_states=3, n_actions=2, gamma=0.9, coupling=1.0):
    """Random game whose kernel and reward both react to the mean field.

    ``P(.|s,a,mu)`` is a softmax of fixed logits shifted by ``W mu``;
    ``r(s,a,mu) = base(s,a) - coupling * mu(s)``.
    """
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(n_states, n_actions, n_states))
    w = rng.normal(size=(n_states, n_states))
    base = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))

    def transition_fn(mu):
        z = logits + coupling * (w @ np.asarray(mu))[None, None, :]
        z = z - z.max(axis=2, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=2, keepdims=True)

    def reward_fn(mu):
        return base - coupling * np.asarray(mu)[:, None]

    return MfMdp(n_states, n_actions, transition_fn, reward_fn, gamma,
                 float(np.abs(base).max() + coupling), f"random-{seed}")


def random_policy(rng, n_states, n_actions):
    return rng.dirichlet(np.ones(n_actions), size=n_states)


def two_state_toy(gamma=0.9):
    """Small game with a crowd penalty and mean-field dependent moves."""

    def transition_fn(mu):
        stick = 0.6 + 0.3 * mu[0]
        p = np.empty((2, 2, 2))
        p[0, 0] = (stick, 1 - stick)
        p[0, 1] = (0.2, 0.8)
        p[1, 0] = (0.7, 0.3)
        p[1, 1] = (0.1, 0.9)
        return p

    def reward_fn(mu):
        crowd = -np.log(np.maximum(mu, 1e-10)) * 0.2
        return np.array([[crowd[0] + 0.1, crowd[0]], [crowd[1], crowd[1] + 0.05]])

    return MfMdp(2, 2, transition_fn, reward_fn, gamma, 0.2 * 23.1 + 0.1, "toy2")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
