
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mftrpo.core import MfMdp, induced_kernel, soft_value_iteration, uniform_policy
from mftrpo.envs import build_grid_crowd, walled_grid5
from mftrpo.errors import InvalidArgumentError
from mftrpo.evaluation import (best_response, exploitability, fit_geometric_rate,
                               mfne_residual, mixing_profile, monotonicity_probe,
                               pinsker_bound_check, population_operator)
from mftrpo.exact import exact_fixed_point

from conftest import random_mfmdp, random_policy

seeds = st.integers(0, 10_000)


def brute_force_exploitability(p, r, gamma, pi, eta, grid=101):
    """Grid search over every 2-state 2-action policy with plain linear algebra."""
    k = np.einsum("sa,sat->st", pi, p)
    w, v = np.linalg.eig(k.T)
    stat = np.real(v[:, np.argmin(np.abs(w - 1))])
    stat /= stat.sum()

    def value(a, b):
        # a, b: arrays of action-0 probabilities in states 0 and 1
        pol = np.stack([np.stack([a, 1 - a], -1), np.stack([b, 1 - b], -1)], -2)
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = np.where(pol > 0, pol * np.log(pol), 0.0).sum(-1)
        reward = (pol * r).sum(-1) - eta * ent
        m = np.eye(2) - gamma * np.einsum("...sa,sat->...st", pol, p)
        return np.einsum("s,...s->...", stat, np.linalg.solve(m, reward[..., None])[..., 0])

    probs = np.linspace(0.0, 1.0, grid)
    a, b = np.meshgrid(probs, probs, indexing="ij")
    best = value(a.ravel(), b.ravel()).max()
    return best - value(pi[:1, 0], pi[1:, 0])[0]


def _two_by_two(seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(2), size=(2, 2))
    r = rng.uniform(-1, 1, size=(2, 2))
    return p, r, MfMdp.from_tables(p, r, 0.9)


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("eta", [0.0, 0.1])
def test_exploitability_matches_brute_force(seed, eta):
    p, r, mdp = _two_by_two(seed)
    pi = random_policy(np.random.default_rng(seed + 100), 2, 2)
    phi = exploitability(mdp, pi, np.array([0.5, 0.5]), eta).phi
    assert phi == pytest.approx(brute_force_exploitability(p, r, 0.9, pi, eta), abs=1e-3)


def test_exploitability_single_action_is_zero():
    mdp = MfMdp.from_tables(np.ones((1, 1, 1)), np.ones((1, 1)), 0.9)
    rep = exploitability(mdp, np.ones((1, 1)), np.ones(1), 0.3)
    assert rep.phi == 0.0
    assert mfne_residual(mdp, np.ones((1, 1)), np.ones(1), 0.3) == (0.0, 0.0)


def test_exploitability_at_fixed_point_is_tiny():
    mdp = random_mfmdp(0, 3, 2, coupling=0.5)
    mu_star = exact_fixed_point(mdp, np.full(3, 1 / 3), 0.5, 1, 500, 0.3, tol=1e-13)
    pi_star = best_response(mdp, mu_star, 0.3)
    assert exploitability(mdp, pi_star, mu_star, 0.3).phi <= 1e-6
    value_gap, fp_gap = mfne_residual(mdp, pi_star, mu_star, 0.3)
    assert abs(value_gap) <= 1e-8 and fp_gap <= 1e-8


@given(seeds, st.sampled_from([0.0, 0.05, 0.3]))
def test_exploitability_non_negative(seed, eta):
    rng = np.random.default_rng(seed)
    mdp = random_mfmdp(seed, 3, 3)
    phi = exploitability(mdp, random_policy(rng, 3, 3), rng.dirichlet(np.ones(3)), eta).phi
    assert phi >= -1e-8


def test_best_response_has_zero_value_gap(rng):
    mdp = random_mfmdp(9, 4, 3)
    mu = rng.dirichlet(np.ones(4))
    value_gap, _ = mfne_residual(mdp, best_response(mdp, mu, 0.1), mu, 0.1)
    assert abs(value_gap) <= 1e-8


def test_grid_uniform_policy_residual_snapshot():
    mdp = build_grid_crowd(walled_grid5())
    n = mdp.n_states
    value_gap, fp_gap = mfne_residual(mdp, uniform_policy(n, 5), np.full(n, 1 / n), 0.05)
    assert value_gap == pytest.approx(2.7661793638794068, rel=1e-9)
    # blocked moves stay put, so the uniform-policy kernel is symmetric and
    # uniform mu is already stationary
    assert fp_gap <= 1e-14


def test_pinsker_zero_at_best_response(rng):
    mdp = random_mfmdp(2, 4, 3)
    mu = rng.dirichlet(np.ones(4))
    pi_mu = best_response(mdp, mu, 0.1)
    check = pinsker_bound_check(mdp, pi_mu, mu, 0.1, pi_best=pi_mu)
    assert check.passed
    assert check.min_slack == 0.0
    assert np.all(check.lhs == 0.0)


@given(seeds, st.sampled_from([0.05, 0.3]))
def test_pinsker_holds_on_random_triples(seed, eta):
    rng = np.random.default_rng(seed)
    mdp = random_mfmdp(seed, 4, 3)
    check = pinsker_bound_check(mdp, random_policy(rng, 4, 3), rng.dirichlet(np.ones(4)), eta)
    assert check.passed


def test_pinsker_requires_positive_eta():
    mdp = random_mfmdp(0)
    with pytest.raises(InvalidArgumentError):
        pinsker_bound_check(mdp, uniform_policy(3, 2), np.full(3, 1 / 3), 0.0)


def test_population_operator_is_m_step_push(rng):
    mdp = random_mfmdp(5, 3, 2)
    mu = rng.dirichlet(np.ones(3))
    _, pi_mu = soft_value_iteration(mdp, mu, 0.2)
    k = induced_kernel(mdp, pi_mu, mu)
    assert np.allclose(population_operator(mdp, mu, 0.2, 3), mu @ k @ k @ k, atol=1e-9)
    assert np.array_equal(population_operator(mdp, mu, 0.2, 0), mu)


def test_monotonicity_probe_single_state_is_degenerate(rng):
    mdp = MfMdp.from_tables(np.ones((1, 2, 1)), [[0.0, 1.0]], 0.9)
    rep = monotonicity_probe(mdp, 0.1, 1, 10, rng)
    assert rep.degenerate and rep.samples == 0


def test_monotonicity_probe_reports_sup(rng):
    mdp = random_mfmdp(1, 3, 2)
    rep = monotonicity_probe(mdp, 0.3, 2, 20, rng)
    assert rep.samples == 20 and len(rep.ratios) == 20
    assert rep.max_ratio == max(rep.ratios)


def test_mixing_profile_and_rate():
    k = np.array([[0.7, 0.3], [0.6, 0.4]])
    tv = mixing_profile(k, np.array([1.0, 0.0]), 30)
    # second eigenvalue of this kernel is 0.1
    assert tv[0] == pytest.approx(1 / 3)
    assert tv[1] / tv[0] == pytest.approx(0.1, rel=1e-9)
    rho, r2, _ = fit_geometric_rate(tv)
    assert rho == pytest.approx(0.1, rel=1e-3) and r2 > 0.999


def test_geometric_fit_on_immediate_mixing():
    assert fit_geometric_rate(np.array([0.5, 0.0, 0.0, 0.0])) == (0.0, 1.0, 1)
