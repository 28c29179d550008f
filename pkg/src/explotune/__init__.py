"""Model-based tuning of exploration schedules for bandits and MDPs.

The package tunes the exploration parameter of epsilon-greedy, UCB, and
Thompson-sampling decision rules by simulating candidate schedules inside
models sampled from the agent's current confidence distribution, then
optimizing the schedule parameters with a Gaussian-process optimizer.
"""

from .schedule import Schedule, evaluate_schedule, clamp_to_feasible
from .core import History, StepRecord, EpisodeRecord, cumulative_regret

__all__ = [
    "Schedule",
    "evaluate_schedule",
    "clamp_to_feasible",
    "History",
    "StepRecord",
    "EpisodeRecord",
    "cumulative_regret",
]

__version__ = "0.1.0"
