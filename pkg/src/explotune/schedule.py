"""Sigmoid exploration-schedule family and its feasible box.

A schedule maps a step index t in {1, ..., T} to an exploration level

    eta(t) = theta0 / (1 + exp(-theta2 * (T - t - theta1)))

which is nonincreasing in t whenever theta2 > 0, starts near theta0 early
in the episode, and decays toward 0 as t approaches the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

THETA2_MIN = 1e-6
THETA2_MAX = 2.0
ALPHA_FLOOR = 1e-4


class InfeasibleScheduleError(ValueError):
    """Raised when schedule parameters violate the feasible box."""


@dataclass(frozen=True)
class Schedule:
    """Exploration schedule parameters plus the episode horizon.

    theta0: peak exploration level in [0, 1].
    theta1: time offset (in steps) of the sigmoid midpoint, in [0, T].
    theta2: decay rate per step, in (0, THETA2_MAX].
    horizon: number of decision steps T.
    """

    theta0: float
    theta1: float
    theta2: float
    horizon: int

    def __post_init__(self):
        T = self.horizon
        if T < 1:
            raise InfeasibleScheduleError(f"horizon must be >= 1, got {T}")
        if not (0.0 <= self.theta0 <= 1.0):
            raise InfeasibleScheduleError(f"theta0 out of [0, 1]: {self.theta0}")
        if not (0.0 <= self.theta1 <= T):
            raise InfeasibleScheduleError(f"theta1 out of [0, {T}]: {self.theta1}")
        if not (0.0 < self.theta2 <= THETA2_MAX):
            raise InfeasibleScheduleError(
                f"theta2 out of (0, {THETA2_MAX}]: {self.theta2}"
            )

    @property
    def theta(self) -> tuple[float, float, float]:
        return (self.theta0, self.theta1, self.theta2)


def evaluate_schedule(s: Schedule, t: int | float) -> float:
    """Exploration level at step t.

    t ranges over 1..T during an episode; t = 0 is additionally allowed for
    pre-loop bookkeeping. The result lies in [0, theta0] and equals
    theta0 / 2 exactly when T - t - theta1 == 0.
    """
    if not (0 <= t <= s.horizon):
        raise InfeasibleScheduleError(
            f"step index {t} outside [0, {s.horizon}]"
        )
    z = s.theta2 * (s.horizon - t - s.theta1)
    # exp overflow is impossible for feasible parameters (|z| <= 2*T) only
    # for modest T; guard anyway so extreme horizons stay total.
    if z >= 0:
        return s.theta0 / (1.0 + math.exp(-z)) if z < 700 else s.theta0
    e = math.exp(z)
    return s.theta0 * e / (1.0 + e)


def clamp_to_feasible(raw, T: int, theta2_max: float = THETA2_MAX) -> Schedule:
    """Clip an unconstrained parameter triple into the feasible box.

    Total function: any finite triple maps to a valid Schedule. Idempotent.
    """
    t0, t1, t2 = (float(v) for v in raw)
    return Schedule(
        theta0=min(max(t0, 0.0), 1.0),
        theta1=min(max(t1, 0.0), float(T)),
        theta2=min(max(t2, THETA2_MIN), theta2_max),
        horizon=T,
    )


def map_eta_to_parameter(kind: str, eta: float) -> float:
    """Map a raw schedule value onto the decision rule's parameter range.

    epsilon and tau live in [0, 1]; the UCB level alpha is clipped into
    [ALPHA_FLOOR, 0.5] to avoid degenerate normal quantiles.
    """
    if kind == "ucb":
        return min(max(eta, ALPHA_FLOOR), 0.5)
    return min(max(eta, 0.0), 1.0)
