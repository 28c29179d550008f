"""Shared episode data structures and regret accounting."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class StepRecord:
    """One logged decision: step index, action, realized reward.

    context holds the realized context (contextual bandit) or None.
    mu_star is the per-step optimal mean used for regret accounting; it is
    filled on the simulation side where the true environment is known, and
    None for environments without a defined optimum (the MDP).
    """

    t: int
    action: int | float
    reward: float
    context: tuple | None = None
    mu_star: float | None = None


class History:
    """Append-only, time-ordered record of an episode's decisions."""

    def __init__(self):
        self._records: list[StepRecord] = []

    def append(self, record: StepRecord) -> None:
        if self._records and record.t <= self._records[-1].t:
            raise ValueError(
                f"steps must be strictly increasing: {record.t} after "
                f"{self._records[-1].t}"
            )
        self._records.append(record)

    @property
    def records(self) -> tuple[StepRecord, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)


@dataclass
class EpisodeRecord:
    """Completed episode: history plus per-step schedule values and totals.

    cumulative holds the running sum of the per-step objective (regret for
    bandits, cohort-mean reward for the MDP); its last entry equals the
    episode total.
    """

    variant: str
    seed: int
    history: History = field(default_factory=History)
    eta: list[float] = field(default_factory=list)
    theta: list[tuple[float, float, float] | None] = field(default_factory=list)
    cumulative: list[float] = field(default_factory=list)

    def log_step(self, record: StepRecord, eta: float,
                 theta: tuple[float, float, float] | None,
                 step_value: float) -> None:
        self.history.append(record)
        self.eta.append(eta)
        self.theta.append(theta)
        prev = self.cumulative[-1] if self.cumulative else 0.0
        self.cumulative.append(prev + step_value)

    @property
    def total(self) -> float:
        return self.cumulative[-1] if self.cumulative else 0.0


def cumulative_regret(history: History, env) -> float:
    """Realized cumulative regret sum_t (mu*_t - U^t) against env.

    mu*_t is the environment's best mean reward, constant for MABs and
    context-dependent for contextual bandits (the record's context is used).
    Environments without a defined optimum raise ValueError.
    """
    if not hasattr(env, "optimal_mean"):
        raise ValueError(f"{type(env).__name__} has no defined optimal mean")
    total = 0.0
    for rec in history:
        if rec.context is not None:
            mu_star = env.optimal_mean(rec.context)
        else:
            mu_star = env.optimal_mean()
        total += mu_star - rec.reward
    return total
