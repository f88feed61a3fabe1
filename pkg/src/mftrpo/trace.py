"""Per-iteration run records shared by every solver."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

METRIC_COLUMNS = ("k", "exploitability_reg", "exploitability_unreg", "mu_drift_l1",
                  "value", "wall_ms")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    exploitability: float
    exploitability_unreg: float
    mu_drift: float
    value: float
    wall_ms: Optional[float] = None

    def row(self):
        return (self.k, self.exploitability, self.exploitability_unreg, self.mu_drift,
                self.value, self.wall_ms)


@dataclass
class RunTrace:
    """Metrics and snapshots of one solver run.

    ``records[0]`` describes the initial pair ``(pi_0, mu_0)`` and is only
    present when the solver evaluates iteration 0; every completed outer
    iteration ``k`` adds one record. ``final_policy`` is the policy reported
    with ``final_mu`` (for MF-TRPO, the inner solve against ``mu_K``).
    """

    algorithm: str
    records: list = field(default_factory=list)
    mu_snapshots: dict = field(default_factory=dict)
    policy_snapshots: dict = field(default_factory=dict)
    final_mu: Optional[np.ndarray] = None
    final_policy: Optional[np.ndarray] = None
    final_exploitability: float = math.nan
    final_exploitability_unreg: float = math.nan
    metadata: dict = field(default_factory=dict)

    def iteration_records(self):
        return [r for r in self.records if r.k > 0]

    @property
    def initial(self) -> Optional[IterationRecord]:
        for r in self.records:
            if r.k == 0:
                return r
        return None

    def exploitabilities(self) -> np.ndarray:
        return np.array([r.exploitability for r in self.records])

    def ks(self) -> np.ndarray:
        return np.array([r.k for r in self.records])


def evaluation_cadence(big_k: int) -> int:
    """Evaluate every iteration up to K = 1000, else every ceil(K / 1000)."""
    return 1 if big_k <= 1000 else math.ceil(big_k / 1000)


def should_record(k: int, big_k: int, every: int) -> bool:
    return k == 0 or k == big_k or k % every == 0
