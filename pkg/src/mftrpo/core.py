"""Exact tabular mathematics of a finite mean-field MDP.

Policies are ``(n_states, n_actions)`` arrays of action probabilities,
population distributions are length-``n_states`` vectors and kernels are
``(n_states, n_states)`` row-stochastic matrices. Everything here is a pure
function of its inputs.

The entropy term enters the per-step reward as a bonus,
``r(s, a, mu) - eta * log pi(a|s)``, which is the convention under which the
soft Bellman optimality equation ``J = eta * logsumexp(Q / eta)`` and the
softmax best response hold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp, softmax, xlogy

from .errors import ConvergenceError, InvalidArgumentError, NumericalError

SIMPLEX_ATOL = 1e-10
DIRECT_SOLVE_MAX_STATES = 2000
STATIONARY_HARD_CAP = 1_000_000
STATIONARY_RHO_FALLBACK = 0.999


@dataclass(frozen=True)
class MfMdp:
    """Finite mean-field MDP ``(S, A, P, r, gamma)``.

    ``transition_fn(mu)`` returns the full ``(S, A, S)`` tensor
    ``P(s'|s, a, mu)`` and ``reward_fn(mu)`` the ``(S, A)`` table
    ``r(s, a, mu)``. Vectorised callables keep exact evaluations cheap; the
    per-entry accessors :meth:`transition` and :meth:`reward` are provided for
    oracle-style use.
    """

    n_states: int
    n_actions: int
    transition_fn: Callable[[np.ndarray], np.ndarray]
    reward_fn: Callable[[np.ndarray], np.ndarray]
    gamma: float
    reward_bound: float
    name: str = "mfmdp"
    info: Optional[dict] = None

    def __post_init__(self):
        if self.n_states < 1 or self.n_actions < 1:
            raise InvalidArgumentError("n_states and n_actions must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidArgumentError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.reward_bound < 0:
            raise InvalidArgumentError("reward_bound must be non-negative")

    @classmethod
    def from_tables(cls, transitions, rewards, gamma, name="tabular"):
        """MF-MDP whose kernel and reward ignore the mean field."""
        p = np.array(transitions, dtype=float)
        r = np.array(rewards, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2] or r.shape != p.shape[:2]:
            raise InvalidArgumentError(
                f"inconsistent table shapes {p.shape} and {r.shape}")
        check_transition_tensor(p)
        p.setflags(write=False)
        r.setflags(write=False)
        return cls(p.shape[0], p.shape[1], lambda mu: p, lambda mu: r, float(gamma),
                   float(np.max(np.abs(r))) if r.size else 0.0, name)

    def transitions(self, mu) -> np.ndarray:
        return self.transition_fn(mu)

    def rewards(self, mu) -> np.ndarray:
        return self.reward_fn(mu)

    def transition(self, s: int, a: int, mu) -> np.ndarray:
        return self.transition_fn(mu)[s, a]

    def reward(self, s: int, a: int, mu) -> float:
        return float(self.reward_fn(mu)[s, a])


@dataclass(frozen=True)
class ValueTable:
    """State values ``j`` and state-action values ``q``."""

    j: np.ndarray
    q: np.ndarray

    def value(self, xi) -> float:
        """``J(pi, mu, xi)`` for an initial distribution ``xi``."""
        return float(np.dot(xi, self.j))


# ---------------------------------------------------------------------------
# validation


def check_transition_tensor(p: np.ndarray, atol: float = SIMPLEX_ATOL) -> None:
    if np.any(p < 0) or not np.allclose(p.sum(axis=-1), 1.0, rtol=0, atol=atol):
        raise InvalidArgumentError("transition rows must be probability vectors")


def as_dist(mu, n_states: int, name: str = "distribution") -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (n_states,):
        raise InvalidArgumentError(f"{name} has shape {mu.shape}, expected ({n_states},)")
    if np.any(mu < -SIMPLEX_ATOL) or abs(mu.sum() - 1.0) > SIMPLEX_ATOL:
        raise InvalidArgumentError(f"{name} is not a probability vector")
    return mu


def as_policy(pi, n_states: int, n_actions: int) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (n_states, n_actions):
        raise InvalidArgumentError(
            f"policy has shape {pi.shape}, expected ({n_states}, {n_actions})")
    if np.any(pi < -SIMPLEX_ATOL) or not np.allclose(pi.sum(axis=1), 1.0, rtol=0,
                                                     atol=SIMPLEX_ATOL):
        raise InvalidArgumentError("policy rows are not probability vectors")
    return pi


def as_kernel(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise InvalidArgumentError(f"kernel must be square, got shape {k.shape}")
    if np.any(k < -SIMPLEX_ATOL) or not np.allclose(k.sum(axis=1), 1.0, rtol=0,
                                                    atol=SIMPLEX_ATOL):
        raise InvalidArgumentError("kernel rows are not probability vectors")
    return k


def uniform_policy(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


def point_mass(n_states: int, state: int) -> np.ndarray:
    mu = np.zeros(n_states)
    mu[state] = 1.0
    return mu


def value_bound(mdp: MfMdp, eta: float) -> float:
    """``(||r||_inf + eta log|A|) / (1 - gamma)``."""
    return (mdp.reward_bound + eta * math.log(mdp.n_actions)) / (1.0 - mdp.gamma)


# ---------------------------------------------------------------------------
# kernels and distributions


def induced_kernel(mdp: MfMdp, pi, mu) -> np.ndarray:
    """State-to-state kernel ``K(s, s') = sum_a pi(a|s) P(s'|s, a, mu)``."""
    pi = as_policy(pi, mdp.n_states, mdp.n_actions)
    mu = as_dist(mu, mdp.n_states)
    return np.einsum("sa,sat->st", pi, mdp.transitions(mu))


def kernel_power_apply(mu, k, m: int) -> np.ndarray:
    """``mu K^m`` by ``m`` successive vector-matrix products."""
    k = as_kernel(k)
    mu = as_dist(mu, k.shape[0])
    if m < 0:
        raise InvalidArgumentError(f"power must be non-negative, got {m}")
    out = mu.copy()
    for _ in range(m):
        out = out @ k
    return out


def _mixing_rate_estimate(k: np.ndarray) -> float:
    if k.shape[0] == 1:
        return 0.0
    if k.shape[0] > 500:
        return STATIONARY_RHO_FALLBACK
    moduli = np.sort(np.abs(np.linalg.eigvals(k)))
    return float(moduli[-2])


def stationary_distribution(k, tol: float = 1e-10, max_steps: int | None = None) -> np.ndarray:
    """Stationary distribution of a unichain kernel by power iteration.

    The iterate starts at the uniform distribution and is pushed through
    ``K^(2^j)`` at round ``j`` (repeated squaring), so ``n`` rounds cover
    ``2^n - 1`` plain power steps. The step budget defaults to
    ``ceil(log(tol) / log(rho))`` with ``rho`` the second largest eigenvalue
    modulus, capped at one million.

    Raises
    ------
    ConvergenceError
        If ``||Gamma K - Gamma||_1 > tol`` once the step budget is spent,
        which signals a periodic or multichain kernel.
    """
    k = as_kernel(k)
    n = k.shape[0]
    if max_steps is None:
        rho = _mixing_rate_estimate(k)
        if rho <= 0.0:
            max_steps = 1
        else:
            rho = min(max(rho, 1e-3), 1.0 - 1e-9) if rho < 1.0 else STATIONARY_RHO_FALLBACK
            max_steps = math.ceil(math.log(tol) / math.log(rho))
        # slack for transients before geometric decay sets in
        max_steps = min(4 * max_steps + 64, STATIONARY_HARD_CAP)
    x = np.full(n, 1.0 / n)
    power = k.copy()
    done, stride = 0, 1
    while True:
        residual = float(np.abs(x @ k - x).sum())
        if residual <= tol:
            x = np.clip(x, 0.0, None)
            return x / x.sum()
        if done >= max_steps:
            raise ConvergenceError("stationary distribution did not converge", residual, done)
        x = x @ power
        x /= x.sum()
        done += stride
        power = power @ power
        stride *= 2


# ---------------------------------------------------------------------------
# regularized evaluation


def regularized_policy_reward(pi: np.ndarray, rewards: np.ndarray, eta: float) -> np.ndarray:
    """``sum_a pi(a|s) [r(s, a) - eta log pi(a|s)]`` with ``0 log 0 = 0``."""
    return np.sum(pi * rewards, axis=1) - eta * np.sum(xlogy(pi, pi), axis=1)


def policy_evaluation_regularized(mdp: MfMdp, pi, mu, eta: float,
                                  method: str = "auto") -> ValueTable:
    """Regularized value ``J`` and Q-function of ``pi`` against a frozen ``mu``.

    ``method`` is ``"direct"`` (dense solve of ``(I - gamma K) J = r_pi``),
    ``"iterative"`` (Bellman fixed point to 1e-12) or ``"auto"``, which picks
    the direct solve up to 2000 states.
    """
    if eta < 0:
        raise InvalidArgumentError(f"eta must be non-negative, got {eta}")
    pi = as_policy(pi, mdp.n_states, mdp.n_actions)
    mu = as_dist(mu, mdp.n_states)
    p = mdp.transitions(mu)
    r = mdp.rewards(mu)
    kernel = np.einsum("sa,sat->st", pi, p)
    r_pi = regularized_policy_reward(pi, r, eta)
    gamma = mdp.gamma
    if method == "auto":
        method = "direct" if mdp.n_states <= DIRECT_SOLVE_MAX_STATES else "iterative"
    if method == "direct":
        try:
            j = np.linalg.solve(np.eye(mdp.n_states) - gamma * kernel, r_pi)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"policy evaluation system is singular: {exc}") from exc
    elif method == "iterative":
        j = np.zeros(mdp.n_states)
        threshold = 1e-12 * max(1.0, float(np.abs(r_pi).max()))
        for it in range(1, 1_000_000):
            j_next = r_pi + gamma * (kernel @ j)
            delta = float(np.abs(j_next - j).max())
            j = j_next
            if delta * gamma <= threshold * (1.0 - gamma) or gamma == 0.0:
                break
        else:
            raise ConvergenceError("iterative policy evaluation stalled", delta, it)
    else:
        raise InvalidArgumentError(f"unknown method {method!r}")
    if not np.all(np.isfinite(j)):
        raise NumericalError("policy evaluation produced non-finite values")
    q = r + gamma * (p @ j)
    return ValueTable(j, q)


def optimal_value_table(mdp: MfMdp, mu, eta: float, tol: float = 1e-8,
                        max_iter: int = 1_000_000, j0=None) -> ValueTable:
    """Fixed point of the (soft, if ``eta > 0``) Bellman optimality operator.

    With ``eta == 0`` the log-sum-exp degenerates to a hard max, which gives
    the unregularized optimal values used for unregularized exploitability.
    Iteration stops when the sup-norm change is at most ``tol * (1 - gamma)``.
    """
    if eta < 0:
        raise InvalidArgumentError(f"eta must be non-negative, got {eta}")
    mu = as_dist(mu, mdp.n_states)
    p = mdp.transitions(mu)
    r = mdp.rewards(mu)
    gamma = mdp.gamma
    j = np.zeros(mdp.n_states) if j0 is None else np.array(j0, dtype=float)
    threshold = tol * (1.0 - gamma)
    delta = math.inf
    for it in range(1, max_iter + 1):
        q = r + gamma * (p @ j)
        j_next = eta * logsumexp(q / eta, axis=1) if eta > 0 else q.max(axis=1)
        delta = float(np.abs(j_next - j).max())
        j = j_next
        if delta <= threshold:
            q = r + gamma * (p @ j)
            return ValueTable(j, q)
    raise ConvergenceError("soft value iteration did not converge", delta, max_iter)


def softmax_policy(q: np.ndarray, eta: float) -> np.ndarray:
    """``exp(Q / eta)`` normalised per row (max-subtracted)."""
    return softmax(q / eta, axis=1)


def soft_value_iteration(mdp: MfMdp, mu, eta: float, tol: float = 1e-8,
                         max_iter: int = 1_000_000, j0=None):
    """Regularized best response against a frozen mean field.

    Returns
    -------
    (ValueTable, ndarray)
        Optimal soft values and the unique best response
        ``pi_mu(a|s) = softmax(Q(s, .) / eta)``.
    """
    if eta <= 0:
        raise InvalidArgumentError(f"soft value iteration needs eta > 0, got {eta}")
    table = optimal_value_table(mdp, mu, eta, tol, max_iter, j0)
    return table, softmax_policy(table.q, eta)


def occupation_marginal(mdp: MfMdp, pi, mu, xi) -> np.ndarray:
    """Spatial marginal solving ``d = (1 - gamma) xi + gamma d K``."""
    kernel = induced_kernel(mdp, pi, mu)
    xi = as_dist(xi, mdp.n_states, "initial distribution")
    a = (np.eye(mdp.n_states) - mdp.gamma * kernel).T
    try:
        d = np.linalg.solve(a, (1.0 - mdp.gamma) * xi)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"occupation system is singular: {exc}") from exc
    return np.clip(d, 0.0, None)


def occupation_measure(mdp: MfMdp, pi, mu, xi) -> np.ndarray:
    """Normalised discounted state-action occupation ``d(s, a)``."""
    pi = as_policy(pi, mdp.n_states, mdp.n_actions)
    return occupation_marginal(mdp, pi, mu, xi)[:, None] * pi
