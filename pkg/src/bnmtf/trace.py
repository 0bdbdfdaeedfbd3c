"""Stopping rules and per-iteration traces shared by all inference engines."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional


@dataclass(frozen=True)
class StopRule:
    """Stop after ``max_iterations``, or earlier once the relative change in
    training MSE over the last ``window`` iterations falls below ``tolerance``."""

    max_iterations: int = 1000
    tolerance: Optional[float] = None
    window: int = 10

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if self.window < 1:
            raise ValueError("window must be at least 1")

    def converged(self, mse_history: list[float]) -> bool:
        if self.tolerance is None or len(mse_history) <= self.window:
            return False
        old = mse_history[-1 - self.window]
        new = mse_history[-1]
        if old == 0:
            return new == 0
        return abs(new - old) / abs(old) < self.tolerance


@dataclass
class TraceRecord:
    """Training MSE, cumulative wall time and (VB only) ELBO per iteration.

    Entry 0 is the initial state, so a run of n iterations has n + 1 entries.
    """

    iterations: list[int] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    elbo: Optional[list[float]] = None

    def __len__(self) -> int:
        return len(self.iterations)

    def record(self, iteration: int, seconds: float, mse: float, elbo: Optional[float] = None):
        self.iterations.append(iteration)
        self.seconds.append(seconds)
        self.train_mse.append(mse)
        if elbo is not None:
            if self.elbo is None:
                self.elbo = []
            self.elbo.append(elbo)

    @property
    def final_mse(self) -> float:
        return self.train_mse[-1]

    @property
    def n_iterations(self) -> int:
        return self.iterations[-1] if self.iterations else 0


class Clock:
    def __init__(self):
        self.start = time.perf_counter()

    def __call__(self) -> float:
        return time.perf_counter() - self.start
