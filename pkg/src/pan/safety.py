"""Stopping-distance calculators for the perception safety envelope.

Braking distance follows the constant-deceleration equation of motion with
a friction-limited deceleration of mu * g; reaction distance is speed times
reaction time. Their sum motivates splitting detection metrics at the
~25 m range.
"""

from __future__ import annotations

from dataclasses import dataclass

KMH_TO_MS = 1000.0 / 3600.0


@dataclass
class SafetyInput:
    v0: float          # initial speed, m/s
    mu: float = 0.7    # tire-road friction coefficient (dry asphalt)
    g: float = 9.81    # m/s^2
    t_r: float = 1.0   # reaction time, s

    def __post_init__(self):
        if self.v0 < 0:
            raise ValueError("speed must be nonnegative")
        if self.mu <= 0 or self.g <= 0:
            raise ValueError("friction coefficient and gravity must be positive")
        if self.t_r < 0:
            raise ValueError("reaction time must be nonnegative")


def braking_distance(inp: SafetyInput) -> float:
    """Distance to brake from v0 to rest: v0^2 / (2 * mu * g)."""
    return inp.v0 ** 2 / (2.0 * inp.mu * inp.g)


def reaction_distance(inp: SafetyInput) -> float:
    """Distance covered before braking starts: v0 * t_r."""
    return inp.v0 * inp.t_r


def total_stopping_distance(inp: SafetyInput) -> float:
    return braking_distance(inp) + reaction_distance(inp)
