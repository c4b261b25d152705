"""Exponential per-example learning-rate decay.

The schedule spans the whole training stream: the rate depends only on the
cumulative number of stream examples seen, and in particular never restarts
at task boundaries. Replayed buffer items are re-presentations and do not
advance the example counter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ExpDecaySchedule:
    """lr(N) = lr0 * gamma**N, evaluated in log space for stability."""

    lr0: float
    gamma: float = 1.0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")

    def lr_at(self, examples_seen: int) -> float:
        """Learning rate after ``examples_seen`` stream examples."""
        if examples_seen < 0:
            raise ValueError(f"examples_seen must be >= 0, got {examples_seen}")
        return self.lr0 * math.exp(examples_seen * math.log(self.gamma))


def gamma_for_final_fraction(fraction: float, total_examples: int) -> float:
    """Decay factor that lands the rate at exactly ``lr0 * fraction`` after
    ``total_examples`` examples: gamma = fraction**(1/total_examples)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if total_examples < 1:
        raise ValueError(f"total_examples must be >= 1, got {total_examples}")
    return float(fraction ** (1.0 / total_examples))
