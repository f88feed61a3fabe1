"""Step-size schedules ``k -> beta_k`` for the population update."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class ConstantSchedule:
    beta: float

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidArgumentError(f"beta must lie in [0, 1], got {self.beta}")

    def __call__(self, k: int) -> float:
        return self.beta


@dataclass(frozen=True)
class HarmonicSchedule:
    """``beta_k = min(1, c / k)``."""

    c: float

    def __post_init__(self):
        if self.c <= 0:
            raise InvalidArgumentError(f"harmonic schedule needs c > 0, got {self.c}")

    def __call__(self, k: int) -> float:
        return min(1.0, self.c / k)


def as_schedule(beta):
    """Accept a float (constant schedule) or any callable ``k -> beta_k``."""
    if callable(beta):
        return beta
    return ConstantSchedule(float(beta))
