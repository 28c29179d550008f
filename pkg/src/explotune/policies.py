"""Decision rules: epsilon-greedy, UCB, shrunk Thompson sampling, and the
greedy estimators used by the contextual bandit and the glucose MDP.

All selection functions are pure given an explicit numpy Generator. Ties are
broken uniformly at random except mdp_greedy, which deterministically
prefers action 0 to keep MDP rollouts cheap to reproduce.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .schedule import Schedule, evaluate_schedule, map_eta_to_parameter

# Fixed exploration formulas used as untuned comparators (t >= 1).
FORMULAS = {
    "1/t": lambda t: 1.0 / t,
    "0.5/t": lambda t: 0.5 / t,
    "0.8^t": lambda t: 0.8 ** t,
    "0.5-0.45/t": lambda t: 0.5 - 0.45 / t,
}


class ArmStats:
    """Per-arm pull counts, mean rewards, and sums of squared deviations.

    Means are defined once an arm has one pull, variances once it has two;
    updates use Welford's recurrence.
    """

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("need at least one arm")
        self.n = np.zeros(k, dtype=int)
        self.mean = np.zeros(k)
        self.m2 = np.zeros(k)

    @property
    def k(self) -> int:
        return self.n.size

    def update(self, arm: int, reward: float) -> None:
        self.n[arm] += 1
        delta = reward - self.mean[arm]
        self.mean[arm] += delta / self.n[arm]
        self.m2[arm] += delta * (reward - self.mean[arm])

    def sd(self, arm: int) -> float:
        if self.n[arm] < 2:
            raise ValueError(f"arm {arm} needs >= 2 pulls for a variance")
        return float(np.sqrt(self.m2[arm] / (self.n[arm] - 1)))


def argmax_random_tie(values, rng: np.random.Generator) -> int:
    """Index of the maximum, ties broken uniformly at random."""
    values = np.asarray(values, dtype=float)
    best = np.max(values)
    candidates = np.flatnonzero(values == best)
    if candidates.size == 1:
        return int(candidates[0])
    return int(rng.choice(candidates))


def epsilon_greedy_select(stats: ArmStats, epsilon: float,
                          rng: np.random.Generator) -> int:
    """Greedy arm with probability 1 - eps + eps/k, others eps/k each."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if np.any(stats.n < 1):
        raise ValueError("every arm must be pulled once before selection")
    if rng.random() < epsilon:
        return int(rng.integers(stats.k))
    return argmax_random_tie(stats.mean, rng)


def ucb_select(stats: ArmStats, alpha: float,
               rng: np.random.Generator) -> int:
    """Arm with the greatest one-sided upper (1 - alpha) confidence bound.

    Bound: mean + z_{1-alpha} * s / sqrt(n) with the sample SD; arms with
    fewer than two pulls get an infinite bound (forced exploration).
    """
    if not 0.0 < alpha <= 0.5:
        raise ValueError(f"alpha must lie in (0, 0.5], got {alpha}")
    z = norm.ppf(1.0 - alpha)
    bounds = np.full(stats.k, np.inf)
    ok = stats.n >= 2
    if np.any(ok):
        sd = np.sqrt(stats.m2[ok] / (stats.n[ok] - 1))
        bounds[ok] = stats.mean[ok] + z * sd / np.sqrt(stats.n[ok])
    return argmax_random_tie(bounds, rng)


def ts_select(confidence, tau: float, rng: np.random.Generator) -> int:
    """Shrunk Thompson sampling.

    Draws one mean per arm from its confidence distribution and selects the
    argmax of omega + tau * (draw - omega), where omega is the confidence
    mean. tau = 0 collapses to the greedy posterior-mean rule; tau = 1 is
    standard Thompson sampling.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    omega = np.asarray(confidence.means(), dtype=float)
    if not np.all(np.isfinite(omega)):
        raise ValueError("confidence distribution has an undefined mean")
    draws = np.asarray(confidence.sample_means(rng), dtype=float)
    return argmax_random_tie(omega + tau * (draws - omega), rng)


def contextual_greedy(arm_coefs, context, rng: np.random.Generator) -> int:
    """Arm maximizing context . beta_hat over the fitted per-arm models."""
    betas = np.asarray(arm_coefs, dtype=float)
    x = np.asarray(context, dtype=float)
    return argmax_random_tie(betas @ x, rng)


def mdp_greedy(q_estimator, state) -> int:
    """Action with the larger estimated one-step expected reward.

    Ties resolve to action 0 (declared rule; no randomness in MDP greedy).
    """
    r0 = q_estimator.predict_reward(state, 0)
    r1 = q_estimator.predict_reward(state, 1)
    return 0 if r0 >= r1 else 1


@dataclass(frozen=True)
class PolicyVariant:
    """A named decision rule plus the source of its exploration parameter.

    kind: "epsilon" | "ucb" | "ts" | "gittins".
    source: "fixed" (constant value), "formula" (named function of t), or
    "tuned" (schedule optimized online). estimator selects the glucose
    dynamics model ("ar2-linear" | "ar1-linear" | "ar2-np") and is ignored
    elsewhere.
    """

    name: str
    kind: str
    source: str = "fixed"
    value: float | None = None
    formula: str | None = None
    estimator: str | None = None

    def __post_init__(self):
        if self.kind not in ("epsilon", "ucb", "ts", "gittins"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "gittins":
            return
        if self.source == "fixed":
            if self.value is None:
                raise ValueError(f"variant {self.name!r} needs a fixed value")
        elif self.source == "formula":
            if self.formula not in FORMULAS:
                raise ValueError(
                    f"variant {self.name!r}: unknown formula {self.formula!r}"
                )
        elif self.source != "tuned":
            raise ValueError(f"unknown parameter source {self.source!r}")

    def parameter_at(self, t: int, schedule: Schedule | None = None) -> float:
        """Exploration parameter at step t, mapped into the rule's range."""
        if self.kind == "gittins":
            raise ValueError("the Gittins rule takes no exploration parameter")
        if self.source == "fixed":
            raw = self.value
        elif self.source == "formula":
            raw = FORMULAS[self.formula](t)
        else:
            if schedule is None:
                raise ValueError("tuned variant needs a schedule")
            raw = evaluate_schedule(schedule, t)
        return map_eta_to_parameter(self.kind, raw)
