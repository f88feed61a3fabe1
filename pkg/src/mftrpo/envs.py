"""Benchmark environments: grid crowd modeling and the two-islands graph.

Grid coordinates are ``(x, y)`` with ``x`` the column and ``y`` the row,
origin at the top-left cell. Traversable cells are numbered row by row.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ._rows import RowSampler
from .core import MfMdp, as_dist, point_mass
from .errors import ConstructionError, InvalidArgumentError

LEFT, RIGHT, UP, DOWN, STAY = range(5)
ACTION_NAMES = ("left", "right", "up", "down", "stay")
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))
MOVE_BONUS = 0.2


@dataclass
class GridSpec:
    width: int
    height: int
    walls: frozenset = frozenset()
    kappa: float = 0.2
    slipperiness: float = 0.1
    target: Optional[tuple] = None
    mu_floor: float = 1e-10
    initial_cell: tuple = (0, 0)

    def __post_init__(self):
        self.walls = frozenset(tuple(w) for w in self.walls)
        if self.width < 1 or self.height < 1:
            raise ConstructionError("grid dimensions must be positive")
        if self.kappa < 0:
            raise ConstructionError("kappa must be non-negative")
        if not 0.0 <= self.slipperiness < 1.0:
            raise ConstructionError("slipperiness must lie in [0, 1)")
        if self.mu_floor <= 0:
            raise ConstructionError("mu_floor must be positive")
        for name, cell in (("initial_cell", self.initial_cell), ("target", self.target)):
            if cell is not None and not self._traversable(tuple(cell)):
                raise ConstructionError(f"{name} {tuple(cell)} is not a traversable cell")

    def _traversable(self, cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height and cell not in self.walls

    def cells(self):
        return [(x, y) for y in range(self.height) for x in range(self.width)
                if (x, y) not in self.walls]


@dataclass
class IslandsSpec:
    n_states: int = 14
    branching: int = 2
    crowd_kappa: float = 0.2
    island2: frozenset = field(default_factory=lambda: frozenset(range(7, 14)))
    seed: int = 0
    mu_floor: float = 1e-10
    initial_state: int = 2

    def __post_init__(self):
        self.island2 = frozenset(int(s) for s in self.island2)
        if self.branching != 2:
            raise ConstructionError("only branching factor 2 is supported")
        island1 = set(range(self.n_states)) - self.island2
        if not self.island2 <= set(range(self.n_states)):
            raise ConstructionError("island2 contains states outside the state space")
        if len(island1) < 3 or len(self.island2) < 3:
            raise ConstructionError("each island needs at least 3 states")
        if not 0 <= self.initial_state < self.n_states:
            raise ConstructionError("initial_state out of range")
        if self.mu_floor <= 0:
            raise ConstructionError("mu_floor must be positive")


def walled_grid5(target: bool = True, kappa: float = 0.2) -> GridSpec:
    """5x5 grid with walls (1,2), (2,2), (3,2); optional target bottom-right."""
    return GridSpec(5, 5, frozenset({(1, 2), (2, 2), (3, 2)}), kappa=kappa,
                    target=(4, 4) if target else None, initial_cell=(0, 0))


def four_rooms(size: int = 11, target: bool = False, kappa: float = 0.2) -> GridSpec:
    """Four symmetric rooms separated by a cross of walls with one door per wall segment."""
    mid = size // 2
    door_a, door_b = mid // 2, mid + (size - mid) // 2
    walls = set()
    for i in range(size):
        if i not in (door_a, door_b):
            walls.add((mid, i))
            walls.add((i, mid))
    return GridSpec(size, size, frozenset(walls), kappa=kappa,
                    target=(size - 1, size - 1) if target else None, initial_cell=(0, 0))


def _check_connected(cells, index):
    seen = {cells[0]}
    queue = deque([cells[0]])
    while queue:
        x, y = queue.popleft()
        for dx, dy in MOVES[:4]:
            nxt = (x + dx, y + dy)
            if nxt in index and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    if len(seen) != len(cells):
        raise ConstructionError(
            f"traversable cells are disconnected ({len(seen)} of {len(cells)} reachable)")


def grid_transition_table(spec: GridSpec) -> np.ndarray:
    cells = spec.cells()
    index = {c: i for i, c in enumerate(cells)}
    n = len(cells)
    p = np.zeros((n, 5, n))
    slip = spec.slipperiness / 4.0
    for i, (x, y) in enumerate(cells):
        landing = []
        for dx, dy in MOVES:
            nxt = (x + dx, y + dy)
            landing.append(index.get(nxt, i))
        for a in range(5):
            for b in range(5):
                p[i, a, landing[b]] += (1.0 - spec.slipperiness) if a == b else slip
    return p


def build_grid_crowd(spec: GridSpec, gamma: float = 0.9) -> MfMdp:
    """Crowd-aversion grid game.

    ``r(s, a, mu) = -kappa log(max(mu(s), floor)) + 0.2 [a = stay] - 0.2 [a != stay]``
    plus ``max(0.3 - 0.1 d(s, target), 0)`` with ``d`` the l1 coordinate
    distance when a target is set. Blocked moves leave the agent in place
    but still pay the movement penalty.
    """
    cells = spec.cells()
    if not cells:
        raise ConstructionError("grid has no traversable cells")
    index = {c: i for i, c in enumerate(cells)}
    _check_connected(cells, index)
    p = grid_transition_table(spec)
    p.setflags(write=False)
    n = len(cells)
    base = np.full((n, 5), -MOVE_BONUS)
    base[:, STAY] = MOVE_BONUS
    if spec.target is not None:
        tx, ty = spec.target
        dist = np.array([abs(x - tx) + abs(y - ty) for x, y in cells], dtype=float)
        base += np.maximum(0.3 - 0.1 * dist, 0.0)[:, None]
    base.setflags(write=False)
    kappa, floor = spec.kappa, spec.mu_floor

    def reward_fn(mu):
        crowd = -kappa * np.log(np.maximum(mu, floor))
        return base + crowd[:, None]

    bound = kappa * abs(math.log(floor)) + MOVE_BONUS + (0.3 if spec.target is not None else 0.0)
    info = {"family": "grid", "cells": cells, "width": spec.width, "height": spec.height,
            "walls": sorted(spec.walls), "target": spec.target,
            "initial_state": index[tuple(spec.initial_cell)]}
    return MfMdp(n, 5, lambda mu: p, reward_fn, gamma, bound, "grid-crowd", info)


def islands_graph(spec: IslandsSpec):
    """Out-neighbours per state: ``out[s][a]`` is the node selected by action ``a``.

    Each island is a cycle (``a = 0`` moves forward, ``a = 1`` backward). The
    bridge joins the last node of island 1 with the first node of island 2,
    replacing the forward edge of the former and the backward edge of the latter.
    """
    island1 = sorted(set(range(spec.n_states)) - spec.island2)
    island2 = sorted(spec.island2)
    out = {}
    for cyc in (island1, island2):
        c = len(cyc)
        for pos, s in enumerate(cyc):
            out[s] = [cyc[(pos + 1) % c], cyc[(pos - 1) % c]]
    a, b = island1[-1], island2[0]
    out[a][0] = b
    out[b][1] = a
    return [out[s] for s in range(spec.n_states)], (a, b)


def build_two_islands(spec: IslandsSpec, gamma: float = 0.9) -> MfMdp:
    """Two cyclic islands joined by one bridge; island 2 doubles the crowd reward.

    ``P(.|s, a)`` puts a seeded random weight on staying and the rest on the
    neighbour selected by ``a``. ``r(s, mu) = -kappa log(max(mu(s), floor))``
    times 2 on island 2 and 1 on island 1, identical across actions.
    """
    out, bridge = islands_graph(spec)
    n = spec.n_states
    rng = np.random.default_rng(spec.seed)
    p = np.zeros((n, 2, n))
    for s in range(n):
        for a in range(2):
            stay = rng.uniform(0.05, 0.95)
            p[s, a, s] += stay
            p[s, a, out[s][a]] += 1.0 - stay
    adjacency = csr_matrix((p.sum(axis=1) > 0).astype(float))
    n_comp, _ = connected_components(adjacency, directed=True, connection="strong")
    if n_comp != 1:
        raise ConstructionError("islands graph is not strongly connected")
    p.setflags(write=False)
    weight = np.array([2.0 if s in spec.island2 else 1.0 for s in range(n)])
    kappa, floor = spec.crowd_kappa, spec.mu_floor

    def reward_fn(mu):
        crowd = -kappa * np.log(np.maximum(mu, floor)) * weight
        return np.repeat(crowd[:, None], 2, axis=1)

    bound = 2.0 * kappa * abs(math.log(floor))
    info = {"family": "islands", "island2": sorted(spec.island2), "bridge": bridge,
            "out_edges": out, "initial_state": spec.initial_state}
    return MfMdp(n, 2, lambda mu: p, reward_fn, gamma, bound, "two-islands", info)


def default_nu(mdp: MfMdp) -> np.ndarray:
    """Point mass at the environment's starting state (state 0 if unknown)."""
    start = (mdp.info or {}).get("initial_state", 0)
    return point_mass(mdp.n_states, start)


class TabularOracle:
    """Reset/step sampling access to a known MF-MDP.

    ``reset`` draws from ``nu``; ``step`` samples the exact transition row and
    reports the exact reward. The ``*_many`` variants act on arrays of states
    and take an explicit generator, which is how the sample-based solvers use
    the oracle from parallel tasks. Tables are cached per mean field.
    """

    def __init__(self, mdp: MfMdp, nu, seed=None):
        self.mdp = mdp
        self.nu = as_dist(nu, mdp.n_states, "nu")
        self._nu_sampler = RowSampler(self.nu[None, :])
        self.rng = np.random.default_rng(seed)
        self._cache = (None, None)

    n_states = property(lambda self: self.mdp.n_states)
    n_actions = property(lambda self: self.mdp.n_actions)
    gamma = property(lambda self: self.mdp.gamma)
    reward_bound = property(lambda self: self.mdp.reward_bound)

    def clone(self, seed=None) -> "TabularOracle":
        return TabularOracle(self.mdp, self.nu, seed)

    def _tables(self, mu):
        mu = np.asarray(mu, dtype=float)
        key = mu.tobytes()
        cached_key, tables = self._cache  # single read: safe to share across threads
        if key != cached_key:
            p = self.mdp.transitions(mu)
            tables = (RowSampler(p), self.mdp.rewards(mu).reshape(-1))
            self._cache = (key, tables)
        return tables

    def reset(self, rng=None) -> int:
        return int(self.reset_many(1, rng or self.rng)[0])

    def step(self, s: int, a: int, mu, rng=None):
        nxt, rew = self.step_many(np.array([s]), np.array([a]), mu, rng or self.rng)
        return int(nxt[0]), float(rew[0])

    def reset_many(self, n: int, rng) -> np.ndarray:
        return self._nu_sampler.draw(np.zeros(n, dtype=np.intp), rng.random(n))

    def step_many(self, states, actions, mu, rng):
        sampler, rewards = self._tables(mu)
        flat = np.asarray(states) * self.mdp.n_actions + np.asarray(actions)
        return sampler.draw(flat, rng.random(flat.shape[0])), rewards.take(flat)


def make_oracle(mdp: MfMdp, nu=None, seed=None) -> TabularOracle:
    return TabularOracle(mdp, default_nu(mdp) if nu is None else nu, seed)


def write_tables_csv(mdp: MfMdp, mu, path) -> None:
    """Dump ``P(s'|s, a, mu)`` and ``r(s, a, mu)`` as ``s,a,s_next,prob,reward`` rows."""
    mu = as_dist(mu, mdp.n_states)
    p, r = mdp.transitions(mu), mdp.rewards(mu)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["s", "a", "s_next", "prob", "reward"])
        for s in range(mdp.n_states):
            for a in range(mdp.n_actions):
                for t in np.flatnonzero(p[s, a]):
                    writer.writerow([s, a, int(t), repr(float(p[s, a, t])),
                                     repr(float(r[s, a]))])


def grid_to_image(mdp: MfMdp, values) -> np.ndarray:
    """Place per-state values on the grid; walls are NaN."""
    info = mdp.info or {}
    if info.get("family") != "grid":
        raise InvalidArgumentError("grid_to_image needs a grid environment")
    img = np.full((info["height"], info["width"]), np.nan)
    for (x, y), v in zip(info["cells"], values):
        img[y, x] = v
    return img
