"""Equilibrium diagnostics: exploitability, MFNE residuals and assumption probes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (MfMdp, as_dist, as_policy, induced_kernel, optimal_value_table,
                   policy_evaluation_regularized, soft_value_iteration,
                   stationary_distribution)
from .errors import InvalidArgumentError
from .trace import IterationRecord


@dataclass(frozen=True)
class ExploitabilityReport:
    phi: float
    stationary: np.ndarray
    best_response_value: float
    policy_value: float
    eta: float


@dataclass
class MonotonicityProbeReport:
    samples: int
    max_ratio: float
    big_m: int
    ratios: list = field(default_factory=list)
    degenerate: bool = False


@dataclass(frozen=True)
class PinskerCheck:
    passed: bool
    min_slack: float
    lhs: np.ndarray
    rhs: np.ndarray


def exploitability(mdp: MfMdp, pi, mu, eta: float, tol: float = 1e-10) -> ExploitabilityReport:
    """Gain of a unilateral deviation when the population sits at ``Gamma(pi, mu)``.

    ``eta = 0`` yields the unregularized exploitability (hard-max best
    response, no entropy bonus). For a uniform mixture of policies pass the
    per-state average of the snapshot rows.
    """
    pi = as_policy(pi, mdp.n_states, mdp.n_actions)
    mu = as_dist(mu, mdp.n_states)
    gamma_dist = stationary_distribution(induced_kernel(mdp, pi, mu))
    own = policy_evaluation_regularized(mdp, pi, gamma_dist, eta)
    # starting from the policy's own values makes the iterates increase monotonically
    best = optimal_value_table(mdp, gamma_dist, eta, tol, j0=own.j)
    br_value = best.value(gamma_dist)
    pol_value = own.value(gamma_dist)
    return ExploitabilityReport(br_value - pol_value, gamma_dist, br_value, pol_value, eta)


def mfne_residual(mdp: MfMdp, pi, mu, eta: float, tol: float = 1e-10):
    """``(V(mu, mu) - J(pi, mu, mu), ||mu - mu K||_1)`` for the pair ``(pi, mu)``."""
    pi = as_policy(pi, mdp.n_states, mdp.n_actions)
    mu = as_dist(mu, mdp.n_states)
    own = policy_evaluation_regularized(mdp, pi, mu, eta)
    best = optimal_value_table(mdp, mu, eta, tol, j0=own.j)
    value_gap = best.value(mu) - own.value(mu)
    fixed_point_gap = float(np.abs(mu - mu @ induced_kernel(mdp, pi, mu)).sum())
    return value_gap, fixed_point_gap


def best_response(mdp: MfMdp, mu, eta: float, tol: float = 1e-12) -> np.ndarray:
    return soft_value_iteration(mdp, mu, eta, tol)[1]


def pinsker_bound_check(mdp: MfMdp, pi, mu, eta: float, atol: float = 1e-9,
                        pi_best=None) -> PinskerCheck:
    """Check ``TV(pi(.|s), pi_mu(.|s))^2 <= 2/(eta(1-gamma)) (J*(s) - J^pi(s))`` for all s.

    ``J*`` is the exact value of the soft best response ``pi_mu``, so the
    check at ``pi = pi_mu`` has both sides exactly zero.
    """
    if eta <= 0:
        raise InvalidArgumentError("the value/policy inequality needs eta > 0")
    pi = as_policy(pi, mdp.n_states, mdp.n_actions)
    if pi_best is None:
        pi_best = best_response(mdp, mu, eta)
    j_best = policy_evaluation_regularized(mdp, pi_best, mu, eta).j
    j_pi = policy_evaluation_regularized(mdp, pi, mu, eta).j
    tv = 0.5 * np.abs(pi - pi_best).sum(axis=1)
    lhs = tv ** 2
    rhs = 2.0 / (eta * (1.0 - mdp.gamma)) * (j_best - j_pi)
    slack = rhs - lhs
    return PinskerCheck(bool(np.all(slack >= -atol)), float(slack.min()), lhs, rhs)


def population_operator(mdp: MfMdp, mu, eta: float, big_m: int, tol: float = 1e-10):
    """``Phi(mu) = mu (P^{pi_mu}_mu)^M`` with ``pi_mu`` the soft best response."""
    pi_mu = best_response(mdp, mu, eta, tol)
    kernel = induced_kernel(mdp, pi_mu, mu)
    out = np.asarray(mu, dtype=float)
    for _ in range(big_m):
        out = out @ kernel
    return out


def monotonicity_probe(mdp: MfMdp, eta: float, big_m: int, samples: int,
                       rng: np.random.Generator) -> MonotonicityProbeReport:
    """Empirical sup of ``<mu - mu', Phi(mu) - Phi(mu')> / ||mu - mu'||^2``.

    Pairs are drawn from Dirichlet(1); a value below one is evidence (not a
    certificate) that the population operator is strongly monotone.
    """
    if samples < 1:
        raise InvalidArgumentError("samples must be >= 1")
    if mdp.n_states == 1:
        return MonotonicityProbeReport(0, float("nan"), big_m, [], degenerate=True)
    alpha = np.ones(mdp.n_states)
    ratios = []
    while len(ratios) < samples:
        mu, mu_prime = rng.dirichlet(alpha), rng.dirichlet(alpha)
        diff = mu - mu_prime
        norm2 = float(diff @ diff)
        if math.sqrt(norm2) < 1e-8:
            continue
        delta = (population_operator(mdp, mu, eta, big_m)
                 - population_operator(mdp, mu_prime, eta, big_m))
        ratios.append(float(diff @ delta) / norm2)
    return MonotonicityProbeReport(samples, max(ratios), big_m, ratios)


def mixing_profile(kernel: np.ndarray, xi, t_max: int) -> np.ndarray:
    """Total variation ``||xi K^t - Gamma||_TV`` for ``t = 0..t_max``."""
    gamma_dist = stationary_distribution(kernel)
    x = np.asarray(xi, dtype=float)
    tv = np.empty(t_max + 1)
    for t in range(t_max + 1):
        tv[t] = 0.5 * np.abs(x - gamma_dist).sum()
        x = x @ kernel
    return tv


def fit_geometric_rate(tv: np.ndarray, floor: float = 1e-12):
    """Least-squares fit of ``log tv_t = c + t log rho``.

    Returns ``(rho, r_squared, n_points)``; points at or below ``floor`` are
    dropped. Fewer than three usable points means mixing is immediate and the
    result is ``(0.0, 1.0, n)``.
    """
    t = np.arange(len(tv))
    keep = tv > floor
    if keep.sum() < 3:
        return 0.0, 1.0, int(keep.sum())
    x, y = t[keep].astype(float), np.log(tv[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(math.exp(slope)), r2, int(keep.sum())


def record_metrics(mdp: MfMdp, pi, mu, prev_mu, eta: float, k: int,
                   wall_ms=None) -> IterationRecord:
    """Trace record for the pair ``(pi, mu)`` at outer iteration ``k``."""
    reg = exploitability(mdp, pi, mu, eta)
    unreg = exploitability(mdp, pi, mu, 0.0)
    drift = float(np.abs(np.asarray(mu) - np.asarray(prev_mu)).sum())
    value = policy_evaluation_regularized(mdp, pi, mu, eta).value(mu)
    return IterationRecord(k, reg.phi, unreg.phi, drift, value, wall_ms)
