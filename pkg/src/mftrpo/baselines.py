"""Fictitious play and online mirror descent, for comparison curves.

Both share MF-TRPO's damped ``M``-step population update by default so that
the three algorithms differ only in how the policy is produced.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (MfMdp, as_dist, induced_kernel, policy_evaluation_regularized,
                   soft_value_iteration, softmax_policy, stationary_distribution,
                   uniform_policy)
from .errors import InvalidArgumentError, MfgError, SolverError
from .evaluation import exploitability, record_metrics
from .schedules import as_schedule
from .trace import RunTrace, evaluation_cadence, should_record

ALGORITHMS = ("fp", "omd")
POPULATION_RULES = ("damped", "stationary")


@dataclass
class BaselineConfig:
    algorithm: str
    big_k: int
    eta: float
    mu0: np.ndarray
    learning_rate: float = 1.0
    beta: Callable[[int], float] = 0.01
    big_m: int = 1
    population: str = "damped"
    snapshot_steps: frozenset = field(default_factory=frozenset)
    eval_every: Optional[int] = None
    record_wall_time: bool = False

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ALGORITHMS:
            raise InvalidArgumentError(f"unknown baseline {self.algorithm!r}")
        if self.big_k < 1 or self.big_m < 1:
            raise InvalidArgumentError("K and M must be >= 1")
        if self.eta <= 0:
            raise InvalidArgumentError("eta must be positive")
        if self.algorithm == "omd" and self.learning_rate < 0:
            raise InvalidArgumentError("OMD learning rate must be non-negative")
        if self.population not in POPULATION_RULES:
            raise InvalidArgumentError(f"unknown population rule {self.population!r}")
        self.beta = as_schedule(self.beta)


def _population_step(mdp, cfg, pi, mu, k):
    kernel = induced_kernel(mdp, pi, mu)
    if cfg.population == "stationary":
        return stationary_distribution(kernel)
    pushed = mu
    for _ in range(cfg.big_m):
        pushed = pushed @ kernel
    return mu + cfg.beta(k) * (pushed - mu)


def _run(mdp: MfMdp, cfg: BaselineConfig, step, name) -> RunTrace:
    mu = as_dist(cfg.mu0, mdp.n_states, "mu0").copy()
    pi = uniform_policy(mdp.n_states, mdp.n_actions)
    every = cfg.eval_every or evaluation_cadence(cfg.big_k)
    trace = RunTrace(name, metadata={"eta": cfg.eta, "K": cfg.big_k, "M": cfg.big_m,
                                     "population": cfg.population})
    trace.records.append(record_metrics(mdp, pi, mu, mu, cfg.eta, 0,
                                        0.0 if cfg.record_wall_time else None))
    if 0 in cfg.snapshot_steps:
        trace.mu_snapshots[0] = mu.copy()
        trace.policy_snapshots[0] = pi.copy()
    state = {}
    start = time.perf_counter()
    for k in range(1, cfg.big_k + 1):
        try:
            prev = mu
            pi, mu = step(k, pi, mu, state)
            if should_record(k, cfg.big_k, every):
                wall = (time.perf_counter() - start) * 1e3 if cfg.record_wall_time else None
                trace.records.append(record_metrics(mdp, pi, mu, prev, cfg.eta, k, wall))
            if k in cfg.snapshot_steps:
                trace.mu_snapshots[k] = mu.copy()
                trace.policy_snapshots[k] = pi.copy()
        except MfgError as exc:
            raise SolverError(k, exc) from exc
    trace.final_mu, trace.final_policy = mu, pi
    trace.final_exploitability = exploitability(mdp, pi, mu, cfg.eta).phi
    trace.final_exploitability_unreg = exploitability(mdp, pi, mu, 0.0).phi
    return trace


def fictitious_play(mdp: MfMdp, cfg: BaselineConfig) -> RunTrace:
    """Soft best response to the running average population.

    ``pi_k = BR(mu_bar_{k-1})``, ``mu_k`` is one population update of
    ``mu_{k-1}`` under ``pi_k`` and ``mu_bar_k`` the uniform average of
    ``mu_1..mu_k``. Records evaluate ``(pi_k, mu_bar_k)``.
    """
    if cfg.algorithm != "fp":
        raise InvalidArgumentError("config is not a fictitious-play config")
    raw = {"mu": as_dist(cfg.mu0, mdp.n_states, "mu0").copy(), "j": None}

    def step(k, pi, mu_bar, state):
        table, pi = soft_value_iteration(mdp, mu_bar, cfg.eta, tol=1e-10, j0=state.get("j"))
        state["j"] = table.j
        raw["mu"] = _population_step(mdp, cfg, pi, raw["mu"], k)
        return pi, mu_bar + (raw["mu"] - mu_bar) / k

    return _run(mdp, cfg, step, "fp")


def online_mirror_descent(mdp: MfMdp, cfg: BaselineConfig) -> RunTrace:
    """Cumulative-Q mirror descent: ``Y += lr Q^{pi_{k-1}}_{mu_{k-1}}``, ``pi_k = softmax(Y / eta)``."""
    if cfg.algorithm != "omd":
        raise InvalidArgumentError("config is not an OMD config")

    def step(k, pi, mu, state):
        q = policy_evaluation_regularized(mdp, pi, mu, cfg.eta).q
        y = state.get("y", np.zeros_like(q)) + cfg.learning_rate * q
        state["y"] = y
        pi = softmax_policy(y, cfg.eta)
        return pi, _population_step(mdp, cfg, pi, mu, k)

    return _run(mdp, cfg, step, "omd")


def run_baseline(mdp: MfMdp, cfg: BaselineConfig) -> RunTrace:
    return fictitious_play(mdp, cfg) if cfg.algorithm == "fp" else online_mirror_descent(mdp, cfg)
