"""Model-free MF-TRPO driven only by a reset/step oracle.

Randomness is organised in independent tasks: every chunk of trajectories
draws from its own generator, seeded by ``(master seed, stage, k, l, chunk)``.
Chunk sizes do not depend on the worker count and partial sums are reduced
in chunk order, so results are bit-identical for any number of threads.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Protocol

import numpy as np

from ._rows import RowSampler
from .core import as_dist, as_policy, uniform_policy
from .errors import InvalidArgumentError, MfgError, SolverError
from .evaluation import record_metrics
from .exact import policy_update
from .schedules import as_schedule
from .trace import RunTrace, evaluation_cadence, should_record

CHUNK_SIZE = 2048
BOUND_CLAMP = 10_000_000
THREADS_ENV = "MFG_TRPO_THREADS"

STAGE_TRPO = 1
STAGE_POPULATION = 2
Q_ESTIMATORS = ("importance", "per_action")


class EnvOracle(Protocol):
    n_states: int
    n_actions: int
    gamma: float
    reward_bound: float

    def reset(self, rng=None) -> int: ...

    def step(self, s: int, a: int, mu, rng=None): ...


@dataclass
class SampledTrpoConfig:
    eta: float
    big_l: int
    epsilon: float = 0.1
    delta: float = 0.1
    i_per_iter: int = 10_000
    t_rollout: Optional[int] = None
    warm_start: Optional[np.ndarray] = None
    seed: int = 0
    i_growth: str = "constant"
    q_estimator: str = "importance"

    def __post_init__(self):
        if self.eta <= 0:
            raise InvalidArgumentError("eta must be positive")
        if self.big_l < 0:
            raise InvalidArgumentError("L must be non-negative")
        if self.epsilon <= 0 or self.delta <= 0:
            raise InvalidArgumentError("epsilon and delta must be positive")
        if self.i_per_iter < 1:
            raise InvalidArgumentError("I_l must be >= 1")
        if self.t_rollout is not None and self.t_rollout < 1:
            raise InvalidArgumentError("T_l must be >= 1")
        if self.i_growth not in ("constant", "quadratic"):
            raise InvalidArgumentError(f"unknown i_growth {self.i_growth!r}")
        if self.q_estimator not in Q_ESTIMATORS:
            raise InvalidArgumentError(f"unknown q_estimator {self.q_estimator!r}")

    def samples_at(self, ell: int) -> int:
        if self.i_growth == "quadratic":
            return self.i_per_iter * (ell + 1) ** 2
        return self.i_per_iter


@dataclass
class MixturePolicy:
    """Uniform mixture over the TRPO iterates ``pi_0..pi_L``."""

    policies: list

    def __post_init__(self):
        if not self.policies:
            raise InvalidArgumentError("mixture needs at least one policy")
        shape = np.shape(self.policies[0])
        if any(np.shape(p) != shape for p in self.policies):
            raise InvalidArgumentError("mixture snapshots must share dimensions")

    def __len__(self):
        return len(self.policies)

    @property
    def last(self) -> np.ndarray:
        return self.policies[-1]

    def average(self) -> np.ndarray:
        """Per-state average of the snapshot rows (the mixture's action marginal)."""
        return np.mean(np.stack(self.policies), axis=0)

    def stacked(self) -> np.ndarray:
        return np.stack(self.policies)


@dataclass
class SampledMftrpoConfig:
    trpo: SampledTrpoConfig
    big_k: int
    beta: Callable[[int], float]
    big_m: int
    p_trajectories: int
    seed: int = 0
    mu0: Optional[np.ndarray] = None
    warm_start: bool = True
    snapshot_steps: frozenset = field(default_factory=frozenset)
    eval_every: Optional[int] = None
    record_wall_time: bool = False
    workers: Optional[int] = None

    def __post_init__(self):
        self.beta = as_schedule(self.beta)
        if self.big_k < 1 or self.big_m < 0:
            raise InvalidArgumentError("K must be >= 1 and M >= 0")
        if self.p_trajectories < 1:
            raise InvalidArgumentError("P must be >= 1")
        for k in range(1, self.big_k + 1):
            if not 0.0 <= self.beta(k) <= 1.0:
                raise InvalidArgumentError(f"beta_{k} outside [0, 1]")


# ---------------------------------------------------------------------------
# sample-size helpers


def rollout_horizon(n_actions, reward_bound, eta, gamma, epsilon) -> int:
    """Smallest ``T`` with ``gamma^T |A| (||r|| + eta log|A|) / (1 - gamma) <= epsilon``-scale.

    ``T = ceil(log(|A| (||r|| + eta log|A|) / epsilon) / (1 - gamma))``, at least 1.
    """
    scale = n_actions * (reward_bound + eta * math.log(n_actions))
    if scale <= epsilon:
        return 1
    return max(1, math.ceil(math.log(scale / epsilon) / (1.0 - gamma)))


def samples_per_iter_bound(n_states, n_actions, reward_bound, eta, gamma, epsilon, delta) -> int:
    num = (n_actions ** 2 * (reward_bound ** 2 + eta ** 2 * math.log(n_actions) ** 2)
           * (n_states * math.log(2 * n_actions) + math.log(1.0 / delta)))
    return min(BOUND_CLAMP, math.ceil(num / ((1.0 - gamma) ** 2 * epsilon ** 2)))


def trajectories_bound(epsilon, delta) -> int:
    return min(BOUND_CLAMP, math.ceil(64.0 / epsilon ** 2 * math.log(2.0 / delta)))


# ---------------------------------------------------------------------------
# infrastructure


def default_workers() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError as exc:
            raise InvalidArgumentError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    return os.cpu_count() or 1


def task_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def _run_tasks(fn, items, workers):
    items = list(items)
    if workers is None:
        workers = default_workers()
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _chunks(total: int):
    return [(c, min(CHUNK_SIZE, total - c * CHUNK_SIZE))
            for c in range(math.ceil(total / CHUNK_SIZE))]


def _reset_many(env, n, rng):
    if hasattr(env, "reset_many"):
        return env.reset_many(n, rng)
    return np.array([env.reset(rng=rng) for _ in range(n)], dtype=int)


def _step_many(env, states, actions, mu, rng):
    if hasattr(env, "step_many"):
        return env.step_many(states, actions, mu, rng)
    out = [env.step(int(s), int(a), mu, rng=rng) for s, a in zip(states, actions)]
    nxt = np.array([o[0] for o in out], dtype=int)
    return nxt, np.array([o[1] for o in out], dtype=float)


def _sample_actions(sampler: RowSampler, states, rng) -> np.ndarray:
    return sampler.draw(states, rng.random(len(states)))


# ---------------------------------------------------------------------------
# occupation sampling and rollouts


def sample_occupation_state(env, pi, mu, rng) -> int:
    """One draw from the discounted state occupation ``d^pi_{nu, mu}``.

    Start from ``reset()``; at each step stop with probability ``1 - gamma``,
    otherwise act with ``pi`` and step.
    """
    pi = np.asarray(pi, dtype=float)
    s = env.reset(rng=rng)
    while rng.random() >= 1.0 - env.gamma:
        a = int(rng.choice(env.n_actions, p=pi[s]))
        s, _ = env.step(s, a, mu, rng=rng)
    return int(s)


def sample_occupation_states(env, pi, mu, n: int, rng) -> np.ndarray:
    """Vectorised :func:`sample_occupation_state` for ``n`` independent draws."""
    sampler = RowSampler(pi)
    states = _reset_many(env, n, rng)
    active = np.flatnonzero(rng.random(n) >= 1.0 - env.gamma)
    while active.size:
        cur = states[active]
        actions = _sample_actions(sampler, cur, rng)
        states[active], _ = _step_many(env, cur, actions, mu, rng)
        active = active[rng.random(active.size) >= 1.0 - env.gamma]
    return states


def rollout_q_estimate(env, pi, mu, s: int, a: int, t_rollout: int, eta: float, rng) -> float:
    """Single-trajectory truncated estimate of the regularized ``Q(s, a)``.

    ``r(s, a) + sum_{t=1..T} gamma^t [r(s_t, a_t) - eta log pi(a_t|s_t)]``
    with ``a_t ~ pi(.|s_t)``.
    """
    pi = np.asarray(pi, dtype=float)
    gamma = env.gamma
    s_t, total = env.step(s, a, mu, rng=rng)
    disc = 1.0
    for t in range(1, t_rollout + 1):
        disc *= gamma
        a_t = int(rng.choice(env.n_actions, p=pi[s_t]))
        p = pi[s_t, a_t]
        assert p > 0, "sampled a zero-probability action"
        s_next, r = env.step(s_t, a_t, mu, rng=rng)
        total += disc * (r - eta * math.log(p))
        s_t = s_next
    return total


def rollout_q_estimates(env, pi, mu, states, actions, t_rollout: int, eta: float, rng):
    """Vectorised :func:`rollout_q_estimate` over paired ``states``/``actions``."""
    pi = np.asarray(pi, dtype=float)
    sampler = RowSampler(pi)
    log_pi = np.log(pi).reshape(-1)
    cur, total = _step_many(env, states, actions, mu, rng)
    total = np.array(total, dtype=float)
    disc = 1.0
    for t in range(1, t_rollout + 1):
        disc *= env.gamma
        a_t = _sample_actions(sampler, cur, rng)
        lp = log_pi.take(cur * env.n_actions + a_t)
        nxt, r = _step_many(env, cur, a_t, mu, rng)
        total += disc * (r - eta * lp)
        cur = nxt
    if not np.all(np.isfinite(total)):
        raise MfgError("rollout produced non-finite returns")
    return total


# ---------------------------------------------------------------------------
# Sample-Based TRPO


def _trpo_chunk(env, pi, mu, n, t_rollout, eta, rng):
    n_actions = env.n_actions
    states = sample_occupation_states(env, pi, mu, n, rng)
    actions = rng.integers(0, n_actions, size=n)
    returns = rollout_q_estimates(env, pi, mu, states, actions, t_rollout, eta, rng)
    flat = states * n_actions + actions
    size = env.n_states * n_actions
    return (np.bincount(flat, weights=returns, minlength=size),
            np.bincount(flat, minlength=size))


def sample_based_trpo(env, mu, cfg: SampledTrpoConfig, stream=(), workers=None) -> MixturePolicy:
    """Sample-based TRPO against a frozen mean field.

    At iteration ``l`` it draws ``I_l`` pairs ``(s_i ~ d^{pi_l}_{nu,mu},
    a_i ~ U(A))``, estimates each ``Q(s_i, a_i)`` with one truncated rollout,
    forms ``Q(s, a) = |A| sum_i Q_i 1[(s_i,a_i)=(s,a)] / n(s)`` on visited
    states (unvisited actions keep 0) and applies the softmax update there.

    ``cfg.q_estimator = "per_action"`` swaps the estimate for the per-pair
    sample mean ``sum_i Q_i / n(s, a)``. It is unbiased as well but does not
    multiply the common offset of ``Q`` by count fluctuations, so it is far
    less noisy when values are large relative to action gaps. Unvisited
    actions of a visited state then take the mean of the visited ones, which
    leaves them neutral in the update.

    ``stream`` is a tuple of integers folded into every task seed.
    """
    n_states, n_actions = env.n_states, env.n_actions
    mu = as_dist(mu, n_states)
    if cfg.warm_start is None:
        pi = uniform_policy(n_states, n_actions)
    else:
        pi = as_policy(cfg.warm_start, n_states, n_actions).copy()
    t_rollout = cfg.t_rollout or rollout_horizon(n_actions, env.reward_bound, cfg.eta,
                                                 env.gamma, cfg.epsilon)
    snapshots = [pi]
    for ell in range(cfg.big_l):
        total = cfg.samples_at(ell)

        def task(chunk, ell=ell, pi=pi):
            c, n = chunk
            return _trpo_chunk(env, pi, mu, n, t_rollout, cfg.eta,
                               task_rng(cfg.seed, *stream, ell, c))

        sums = np.zeros(n_states * n_actions)
        counts = np.zeros(n_states * n_actions, dtype=np.int64)
        for s_part, c_part in _run_tasks(task, _chunks(total), workers):
            sums += s_part
            counts += c_part
        sums = sums.reshape(n_states, n_actions)
        counts = counts.reshape(n_states, n_actions)
        visits = counts.sum(axis=1)
        visited = visits > 0
        q_hat = _q_estimate(sums, counts, visits, visited, cfg.q_estimator)
        pi = policy_update(pi, q_hat, cfg.eta, ell, visited)
        snapshots.append(pi)
    return MixturePolicy(snapshots)


def _q_estimate(sums, counts, visits, visited, kind):
    n_actions = sums.shape[1]
    q_hat = np.zeros(sums.shape)
    if kind == "importance":
        q_hat[visited] = n_actions * sums[visited] / visits[visited, None]
        return q_hat
    seen = counts > 0
    q_hat[seen] = sums[seen] / counts[seen]
    fill = q_hat.sum(axis=1) / np.maximum(seen.sum(axis=1), 1)
    return np.where(seen, q_hat, fill[:, None])


def mixture_policy_draw(mix: MixturePolicy, rng) -> np.ndarray:
    """Pick one snapshot uniformly; the mixture then acts with it for an episode."""
    return mix.policies[int(rng.integers(0, len(mix)))]


# ---------------------------------------------------------------------------
# population estimation


def level_probabilities(beta, k: int) -> np.ndarray:
    """``P(level = l) = beta_l prod_{j=l+1..k} (1 - beta_j)``, with ``beta_0 := 1``."""
    schedule = as_schedule(beta)
    probs = np.empty(k + 1)
    tail = 1.0
    for ell in range(k, 0, -1):
        b = schedule(ell)
        probs[ell] = b * tail
        tail *= 1.0 - b
    probs[0] = tail
    if abs(probs.sum() - 1.0) > 1e-12:
        raise MfgError(f"level probabilities sum to {probs.sum()!r}")
    return probs


def sample_level(beta, k: int, rng, size=None):
    """Draw from ``Cat_k`` over ``{0..k}`` (one draw, or an array of ``size``)."""
    if k < 1:
        raise InvalidArgumentError("sample_level needs k >= 1")
    sampler = RowSampler(level_probabilities(beta, k)[None, :])
    n = 1 if size is None else size
    draws = sampler.draw(np.zeros(n, dtype=np.intp), rng.random(n))
    return int(draws[0]) if size is None else draws


def _snapshot_sampler(policy):
    """``(sampler, n_snapshots)`` for a plain policy or a mixture."""
    if isinstance(policy, MixturePolicy):
        return RowSampler(policy.stacked()), len(policy)
    return RowSampler(np.asarray(policy, dtype=float)), 1


def _advance(env, states, policy, mu, steps, rng):
    """Run ``steps`` transitions; each trajectory acts with one drawn snapshot."""
    if steps == 0 or states.size == 0:
        return states
    sampler, count = _snapshot_sampler(policy)
    offset = rng.integers(0, count, size=states.size) * env.n_states
    for _ in range(steps):
        actions = sampler.draw(offset + states, rng.random(states.size))
        states, _ = _step_many(env, states, actions, mu, rng)
    return states


def init_state_from_history(env, history, level: int, big_m: int, rng, start=None) -> int:
    """Reset, then ``M`` steps under each stored ``(pi_j, mu_j)``, ``j = 1..level``.

    ``start`` replaces ``reset()`` by a draw from that distribution; it is how
    a run whose ``mu_0`` differs from the restart distribution seeds level 0.
    """
    if not 0 <= level <= len(history):
        raise InvalidArgumentError(f"level {level} outside 0..{len(history)}")
    states = _init_states_many(env, history, np.array([level]), big_m, rng, start)
    return int(states[0])


def _init_states_many(env, history, levels, big_m, rng, start=None):
    n = len(levels)
    if start is None:
        states = _reset_many(env, n, rng)
    else:
        states = RowSampler(np.asarray(start, dtype=float)[None, :]).draw(
            np.zeros(n, dtype=np.intp), rng.random(n))
    for j in range(1, int(levels.max(initial=0)) + 1):
        active = np.flatnonzero(levels >= j)
        pol, mu_j = history[j - 1]
        states[active] = _advance(env, states[active], pol, mu_j, big_m, rng)
    return states


def _pushforward_chunk(env, pi_k, history, beta, big_m, mu, n, rng, start):
    depth = len(history)
    if depth >= 1:
        levels = sample_level(beta, depth, rng, size=n)
    else:
        levels = np.zeros(n, dtype=int)
    states = _init_states_many(env, history, levels, big_m, rng, start)
    states = _advance(env, states, pi_k, mu, big_m, rng)
    return np.bincount(states, minlength=env.n_states)


def population_pushforward_estimate(env, pi_k, history, beta, big_m: int, p: int, mu,
                                    seed: int = 0, stream=(), workers=None,
                                    start=None) -> np.ndarray:
    """Empirical estimate of ``mu (P^{pi_k}_{mu})^M`` from ``p`` oracle trajectories.

    Each trajectory draws a level from ``Cat_{len(history)}``, is initialised
    by :func:`init_state_from_history` and then runs ``M`` steps under
    ``pi_k`` with mean field ``mu``; the terminal-state indicators are averaged.
    ``start`` is forwarded to :func:`init_state_from_history`.
    """
    if p < 1:
        raise InvalidArgumentError("P must be >= 1")
    mu = as_dist(mu, env.n_states)
    if start is not None:
        start = as_dist(start, env.n_states, "start")

    def task(chunk):
        c, n = chunk
        return _pushforward_chunk(env, pi_k, history, beta, big_m, mu, n,
                                  task_rng(seed, *stream, c), start)

    counts = np.zeros(env.n_states, dtype=np.int64)
    for part in _run_tasks(task, _chunks(p), workers):
        counts += part
    return counts / p


def sample_based_mftrpo(env, cfg: SampledMftrpoConfig, exact_mdp=None) -> RunTrace:
    """Outer loop of Sample-Based MF-TRPO.

    The solver itself only calls ``reset``/``step``. When ``exact_mdp`` is
    given (or the oracle wraps a known MF-MDP) the trace carries exact
    exploitability of ``(average of pi_k's snapshots, mu_k)`` as a diagnostic.
    """
    n_states = env.n_states
    if exact_mdp is None:
        exact_mdp = getattr(env, "mdp", None)
    nu = getattr(env, "nu", None)
    if cfg.mu0 is not None:
        mu = as_dist(cfg.mu0, n_states, "mu0").copy()
    elif nu is not None:
        mu = np.array(nu, dtype=float)
    else:
        raise InvalidArgumentError("mu0 is required when the oracle does not expose nu")
    # level 0 of the population chain must be distributed as mu_0
    level0 = None if nu is not None and np.array_equal(mu, nu) else mu.copy()
    eta = cfg.trpo.eta
    workers = cfg.workers
    every = cfg.eval_every or evaluation_cadence(cfg.big_k)
    trace = RunTrace("sampled-mftrpo", metadata={
        "eta": eta, "L": cfg.trpo.big_l, "K": cfg.big_k, "M": cfg.big_m,
        "P": cfg.p_trajectories, "I": cfg.trpo.i_per_iter,
        "policy_for_exploitability": "per-state average of mixture snapshots"})
    pi_warm = cfg.trpo.warm_start
    pi0 = uniform_policy(n_states, env.n_actions) if pi_warm is None else pi_warm
    if exact_mdp is not None:
        trace.records.append(record_metrics(exact_mdp, pi0, mu, mu, eta, 0,
                                            0.0 if cfg.record_wall_time else None))
    if 0 in cfg.snapshot_steps:
        trace.mu_snapshots[0] = mu.copy()
        trace.policy_snapshots[0] = np.array(pi0)
    history = []
    start = time.perf_counter()
    mix = None
    for k in range(1, cfg.big_k + 1):
        try:
            inner = replace(cfg.trpo, warm_start=pi_warm, seed=cfg.seed)
            mix = sample_based_trpo(env, mu, inner, stream=(STAGE_TRPO, k), workers=workers)
            if cfg.warm_start:
                pi_warm = mix.last
            e_hat = population_pushforward_estimate(
                env, mix, history, cfg.beta, cfg.big_m, cfg.p_trajectories, mu,
                seed=cfg.seed, stream=(STAGE_POPULATION, k), workers=workers, start=level0)
            prev = mu
            mu = mu + cfg.beta(k) * (e_hat - mu)
            history.append((mix, mu))
            if exact_mdp is not None and should_record(k, cfg.big_k, every):
                wall = (time.perf_counter() - start) * 1e3 if cfg.record_wall_time else None
                trace.records.append(record_metrics(exact_mdp, mix.average(), mu, prev,
                                                    eta, k, wall))
            if k in cfg.snapshot_steps:
                trace.mu_snapshots[k] = mu.copy()
                trace.policy_snapshots[k] = mix.average()
        except MfgError as exc:
            raise SolverError(k, exc) from exc
    trace.final_mu = mu
    trace.final_policy = mix.average()
    if trace.records:
        trace.final_exploitability = trace.records[-1].exploitability
        trace.final_exploitability_unreg = trace.records[-1].exploitability_unreg
    return trace
