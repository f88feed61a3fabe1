"""Model-based solvers: softmax trust-region update, exact TRPO and MF-TRPO."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (MfMdp, as_dist, as_policy, induced_kernel, occupation_marginal,
                   policy_evaluation_regularized, soft_value_iteration, uniform_policy)
from .errors import InvalidArgumentError, MfgError, SolverError
from .evaluation import exploitability, record_metrics
from .schedules import as_schedule
from .trace import RunTrace, evaluation_cadence, should_record

SUPPORT_THRESHOLD = 1e-12
# log-probabilities are kept above this so softmax rows never underflow to 0
LOG_PROB_FLOOR = -700.0


@dataclass
class ExactTrpoConfig:
    eta: float
    big_l: int
    warm_start: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.eta <= 0:
            raise InvalidArgumentError(f"eta must be positive, got {self.eta}")
        if self.big_l < 1:
            raise InvalidArgumentError(f"L must be >= 1, got {self.big_l}")


@dataclass
class MftrpoConfig:
    trpo: ExactTrpoConfig
    big_k: int
    beta: Callable[[int], float]
    big_m: int
    mu0: np.ndarray
    warm_start: bool = True
    nu: Optional[np.ndarray] = None
    snapshot_steps: frozenset = field(default_factory=frozenset)
    eval_every: Optional[int] = None
    record_wall_time: bool = False
    check_invariants: bool = False

    def __post_init__(self):
        self.beta = as_schedule(self.beta)
        if self.big_k < 1 or self.big_m < 1:
            raise InvalidArgumentError("K and M must be >= 1")
        for k in range(1, self.big_k + 1):
            b = self.beta(k)
            if not 0.0 <= b <= 1.0:
                raise InvalidArgumentError(f"beta_{k} = {b} outside [0, 1]")


def learning_rate(eta: float, ell: int) -> float:
    """Mirror-ascent step ``1 / (eta (ell + 2))``."""
    return 1.0 / (eta * (ell + 2))


def policy_update(pi, q, eta: float, ell: int, states=None) -> np.ndarray:
    """Closed-form KL-proximal step with entropy bonus.

    ``pi'(a|s)`` is proportional to ``pi(a|s) exp(alpha (Q(s,a) - eta log pi(a|s)))``
    on the rows in ``states`` (all rows when ``None``, boolean mask or
    indices otherwise); other rows are copied unchanged.
    """
    pi = np.asarray(pi, dtype=float)
    q = np.asarray(q, dtype=float)
    if eta <= 0 or ell < 0:
        raise InvalidArgumentError("policy_update needs eta > 0 and ell >= 0")
    if q.shape != pi.shape:
        raise InvalidArgumentError(f"Q shape {q.shape} does not match policy {pi.shape}")
    if not np.all(np.isfinite(q)):
        raise InvalidArgumentError("Q contains non-finite entries")
    rows = np.arange(pi.shape[0]) if states is None else np.asarray(states)
    if rows.dtype == bool:
        rows = np.flatnonzero(rows)
    out = pi.copy()
    if rows.size == 0:
        return out
    sub = pi[rows]
    if np.any(sub <= 0):
        raise InvalidArgumentError("policy must be strictly positive on updated states")
    alpha = learning_rate(eta, ell)
    log_pi = np.log(sub)
    logits = log_pi + alpha * (q[rows] - eta * log_pi)
    logits -= logits.max(axis=1, keepdims=True)
    np.maximum(logits, LOG_PROB_FLOOR, out=logits)
    w = np.exp(logits)
    out[rows] = w / w.sum(axis=1, keepdims=True)
    return out


def exact_trpo(mdp: MfMdp, mu, cfg: ExactTrpoConfig, nu=None):
    """``L`` exact TRPO steps against a frozen mean field.

    Each step evaluates ``pi_l`` exactly and applies :func:`policy_update` on
    the support of the occupation marginal ``d^{pi_l}_{nu, mu}`` (``nu``
    defaults to ``mu``).

    Returns
    -------
    (ndarray, list of float)
        ``pi_L`` and the values ``J(pi_l, mu, mu)`` for ``l = 0..L``.
    """
    mu = as_dist(mu, mdp.n_states)
    nu = mu if nu is None else as_dist(nu, mdp.n_states, "nu")
    if cfg.warm_start is None:
        pi = uniform_policy(mdp.n_states, mdp.n_actions)
    else:
        pi = as_policy(cfg.warm_start, mdp.n_states, mdp.n_actions).copy()
    values = []
    for ell in range(cfg.big_l):
        table = policy_evaluation_regularized(mdp, pi, mu, cfg.eta)
        values.append(table.value(mu))
        support = occupation_marginal(mdp, pi, mu, nu) > SUPPORT_THRESHOLD
        pi = policy_update(pi, table.q, cfg.eta, ell, support)
    values.append(policy_evaluation_regularized(mdp, pi, mu, cfg.eta).value(mu))
    return pi, values


def _check_pair(pi, mu):
    if np.any(pi <= 0) or not np.allclose(pi.sum(axis=1), 1.0, atol=1e-10):
        raise MfgError("policy lost strict positivity or normalisation")
    if np.any(mu < -1e-12) or abs(mu.sum() - 1.0) > 1e-10:
        raise MfgError("population left the simplex")


def exact_mftrpo(mdp: MfMdp, cfg: MftrpoConfig) -> RunTrace:
    """Outer MF-TRPO loop with damped ``M``-step population updates.

    For ``k = 1..K``: ``pi_k = TRPO(mu_{k-1})`` (warm-started from
    ``pi_{k-1}``) and ``mu_k = mu_{k-1} + beta_k (mu_{k-1} K^M - mu_{k-1})``
    with ``K = P^{pi_k}_{mu_{k-1}}``. Record ``k`` evaluates ``(pi_k, mu_k)``.
    The reported final policy is one more TRPO solve against ``mu_K``.
    """
    mu = as_dist(cfg.mu0, mdp.n_states, "mu0").copy()
    eta = cfg.trpo.eta
    if cfg.trpo.warm_start is not None:
        pi = as_policy(cfg.trpo.warm_start, mdp.n_states, mdp.n_actions).copy()
    else:
        pi = uniform_policy(mdp.n_states, mdp.n_actions)
    every = cfg.eval_every or evaluation_cadence(cfg.big_k)
    trace = RunTrace("exact-mftrpo", metadata={
        "eta": eta, "L": cfg.trpo.big_l, "K": cfg.big_k, "M": cfg.big_m,
        "warm_start": cfg.warm_start, "exploitability_pair": "(pi_k, mu_k)"})
    trace.records.append(record_metrics(mdp, pi, mu, mu, eta, 0,
                                        0.0 if cfg.record_wall_time else None))
    _snapshot(trace, cfg.snapshot_steps, 0, mu, pi)
    start = time.perf_counter()

    def solve(mu_now, warm):
        inner = ExactTrpoConfig(eta, cfg.trpo.big_l, warm if cfg.warm_start else None)
        return exact_trpo(mdp, mu_now, inner, cfg.nu)[0]

    for k in range(1, cfg.big_k + 1):
        try:
            pi = solve(mu, pi)
            kernel = induced_kernel(mdp, pi, mu)
            pushed = mu
            for _ in range(cfg.big_m):
                pushed = pushed @ kernel
            prev = mu
            mu = mu + cfg.beta(k) * (pushed - mu)
            if cfg.check_invariants:
                _check_pair(pi, mu)
            if should_record(k, cfg.big_k, every):
                wall = (time.perf_counter() - start) * 1e3 if cfg.record_wall_time else None
                trace.records.append(record_metrics(mdp, pi, mu, prev, eta, k, wall))
            _snapshot(trace, cfg.snapshot_steps, k, mu, pi)
        except MfgError as exc:
            raise SolverError(k, exc) from exc
    final_pi = solve(mu, pi)
    trace.final_mu = mu
    trace.final_policy = final_pi
    trace.final_exploitability = exploitability(mdp, final_pi, mu, eta).phi
    trace.final_exploitability_unreg = exploitability(mdp, final_pi, mu, 0.0).phi
    return trace


def _snapshot(trace: RunTrace, steps, k, mu, pi):
    if k in steps:
        trace.mu_snapshots[k] = np.array(mu)
        trace.policy_snapshots[k] = np.array(pi)


def exact_fixed_point(mdp: MfMdp, mu0, beta, big_m: int, big_k: int, eta: float,
                      tol: float = 1e-10, return_path: bool = False):
    """Damped fixed-point iteration with exact soft best responses.

    ``mu_k = mu_{k-1} + beta_k (mu_{k-1} (P^{pi_{mu_{k-1}}}_{mu_{k-1}})^M - mu_{k-1})``.
    With ``return_path`` the list ``[mu_0, ..., mu_K]`` is returned as well.
    """
    schedule = as_schedule(beta)
    mu = as_dist(mu0, mdp.n_states, "mu0").copy()
    path = [mu.copy()] if return_path else None
    j = None
    for k in range(1, big_k + 1):
        table, pi_mu = soft_value_iteration(mdp, mu, eta, tol, j0=j)
        j = table.j
        kernel = induced_kernel(mdp, pi_mu, mu)
        pushed = mu
        for _ in range(big_m):
            pushed = pushed @ kernel
        mu = mu + schedule(k) * (pushed - mu)
        if return_path:
            path.append(mu.copy())
    return (mu, path) if return_path else mu
