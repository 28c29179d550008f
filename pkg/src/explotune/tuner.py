"""Per-step tuning of the exploration schedule against simulated rollouts.

The tuned objective is the Monte Carlo mean, over models sampled from the
current confidence distribution, of the cumulative regret (bandits) or
negative cohort-mean cumulative reward (MDP) that the schedule would incur
over a fresh full-horizon episode. Within one tuning call every schedule is
evaluated on the same sampled models and the same noise streams (common
random numbers), and the box-constrained search runs on the GP optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import bayesopt
from .core import EpisodeRecord, StepRecord
from .environments import (
    BernoulliMab,
    GaussianMab,
    GlucoseMdp,
    LinearContextualBandit,
)
from .gittins import GittinsTable, gittins_select
from .models import (
    NP_MIN_TRANSITIONS,
    BetaArmPosterior,
    ContextModelFit,
    ContextualConfidence,
    GlucoseConfidence,
    GlucoseDynamicsModel,
    NormalArmPosterior,
    NotIdentifiableError,
    NpGlucoseConfidence,
    NpGlucoseModel,
    PointMassConfidence,
    SampledContextualModel,
    fit_context_model,
    fit_np_conditional,
    fit_ols,
    fit_regression_forest,
    glucose_design_row,
)
from .policies import (
    ArmStats,
    PolicyVariant,
    epsilon_greedy_select,
    mdp_greedy,
    contextual_greedy,
    ts_select,
    ucb_select,
)
from .rollouts import (
    BanditWarmStart,
    ContextualWarmStart,
    GlucoseWarmStart,
    simulate_bandit_rollouts,
    simulate_contextual_rollouts,
    simulate_glucose_rollouts,
)
from .schedule import (
    THETA2_MAX,
    THETA2_MIN,
    Schedule,
    clamp_to_feasible,
    evaluate_schedule,
    map_eta_to_parameter,
)


@dataclass(frozen=True)
class TuningConfig:
    """Knobs of one tuning call and of the episode-level retuning cadence."""

    n_model_draws: int = 25
    n_rollouts_per_draw: int = 2
    retune_interval: int = 1
    budget: int = 30
    variant: str = "confidence-averaged"   # or "point-estimate"
    rollout_mode: str = "full"             # or "remaining"
    objective: str = "auto"                # regret | neg-reward | auto
    n_init: int = 8
    n_candidates: int = 512

    def __post_init__(self):
        if self.n_model_draws < 1 or self.n_rollouts_per_draw < 1:
            raise ValueError("draw and rollout counts must be >= 1")
        if self.retune_interval < 1:
            raise ValueError("retune_interval must be >= 1")
        if self.variant not in ("confidence-averaged", "point-estimate"):
            raise ValueError(f"unknown tuning variant {self.variant!r}")
        if self.rollout_mode not in ("full", "remaining"):
            raise ValueError(f"unknown rollout mode {self.rollout_mode!r}")
        if self.objective not in ("auto", "regret", "neg-reward"):
            raise ValueError(f"unknown objective {self.objective!r}")


def default_bounds(T: int):
    return [(0.0, 1.0), (0.0, float(T)), (THETA2_MIN, THETA2_MAX)]


def _param_fn(policy_kind: str, theta):
    """Resolve a schedule, constant, or callable into eta(t) -> parameter."""
    if isinstance(theta, Schedule):
        return lambda t: map_eta_to_parameter(
            policy_kind, evaluate_schedule(theta, t))
    if callable(theta):
        return lambda t: map_eta_to_parameter(policy_kind, theta(t))
    value = float(theta)
    return lambda t: map_eta_to_parameter(policy_kind, value)


def _as_contextual_model(env: LinearContextualBandit) -> SampledContextualModel:
    return SampledContextualModel(
        beta=env.beta.copy(),
        noise_sd=np.full(2, env.noise_sd),
        context=ContextModelFit(mean=env.context_mean.copy(),
                                cov=env.context_cov.copy()),
    )


def _simulate(param_at, policy_kind, models, T, rng, kernel_kwargs, warm):
    model = models[0]
    if isinstance(model, (BernoulliMab, GaussianMab)):
        return simulate_bandit_rollouts(param_at, policy_kind, models, T, rng,
                                        warm=warm)
    if isinstance(model, (SampledContextualModel, LinearContextualBandit)):
        models = [m if isinstance(m, SampledContextualModel)
                  else _as_contextual_model(m) for m in models]
        return simulate_contextual_rollouts(param_at, models, T, rng, warm=warm)
    if isinstance(model, (GlucoseDynamicsModel, NpGlucoseModel)):
        return simulate_glucose_rollouts(param_at, models, T, rng,
                                         warm=warm, **kernel_kwargs)
    raise TypeError(f"no rollout kernel for {type(model).__name__}")


def rollout_objective(theta, model, policy_kind: str, T: int,
                      rng: np.random.Generator, *,
                      warm=None, **kernel_kwargs) -> float:
    """One simulated episode's objective under a single generative model.

    Returns cumulative realized regret for bandit models and negative
    cohort-mean cumulative reward for glucose models. theta may be a
    Schedule, a constant, or a callable of the step index.
    """
    param_at = _param_fn(policy_kind, theta)
    return float(_simulate(param_at, policy_kind, [model], T, rng,
                           kernel_kwargs, warm)[0])


class FrozenObjective:
    """Tuning objective with models and noise streams frozen at creation.

    Every call re-seeds the rollout generator identically, so two schedule
    values are compared on the same sampled models and the same random
    numbers; calling twice at one point returns the same value.
    """

    def __init__(self, confidence, cfg: TuningConfig, policy_kind: str,
                 T: int, rng: np.random.Generator, *,
                 warm=None, kernel_kwargs=None):
        draws = [confidence.sample_model(rng)
                 for _ in range(cfg.n_model_draws)]
        self.models = [m for m in draws
                       for _ in range(cfg.n_rollouts_per_draw)]
        self.seed = int(rng.integers(2 ** 63))
        self.policy_kind = policy_kind
        self.T = T
        self.warm = warm
        self.kernel_kwargs = kernel_kwargs or {}

    def __call__(self, raw_theta) -> float:
        schedule = clamp_to_feasible(raw_theta, self.T)
        param_at = _param_fn(self.policy_kind, schedule)
        rng = np.random.default_rng(self.seed)
        values = _simulate(param_at, self.policy_kind, self.models, self.T,
                           rng, self.kernel_kwargs, self.warm)
        return float(np.mean(values))


def estimate_objective(theta, confidence, cfg: TuningConfig,
                       policy_kind: str, T: int,
                       rng: np.random.Generator, *,
                       warm=None, **kernel_kwargs) -> float:
    """Monte Carlo objective: mean over model draws x rollouts per draw."""
    frozen = FrozenObjective(confidence, cfg, policy_kind, T, rng,
                             warm=warm, kernel_kwargs=kernel_kwargs)
    return frozen(np.asarray(theta if not isinstance(theta, Schedule)
                             else theta.theta, dtype=float))


def tune_theta(confidence, cfg: TuningConfig, policy_kind: str, T: int,
               budget: int, rng: np.random.Generator, *,
               bounds=None, warm=None, kernel_kwargs=None) -> Schedule:
    """Minimize the frozen tuning objective over the schedule box."""
    frozen = FrozenObjective(confidence, cfg, policy_kind, T, rng,
                             warm=warm, kernel_kwargs=kernel_kwargs)
    point, _ = bayesopt.minimize(
        frozen, bounds if bounds is not None else default_bounds(T),
        budget, rng, n_init=min(cfg.n_init, budget),
        n_candidates=cfg.n_candidates,
    )
    return clamp_to_feasible(point, T)


# ---------------------------------------------------------------------------
# Episode runners (the outer loop against the true environment)


def run_pe_episode(env, variant: PolicyVariant, cfg: TuningConfig, T: int,
                   seed, *, bounds=None) -> EpisodeRecord:
    """Run one episode of the variant against the true environment.

    Tuned variants refit the confidence model and re-optimize the schedule
    every retune_interval steps; fixed and formula variants skip tuning but
    share the same action/reward code path, so a schedule pinned at zero is
    step-for-step identical to the pure greedy rule under the same seed.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    seed_repr = int(ss.entropy if np.isscalar(ss.entropy) else ss.entropy[0])
    if isinstance(env, (BernoulliMab, GaussianMab)):
        return _run_bandit_episode(env, variant, cfg, T, ss, seed_repr, bounds)
    if isinstance(env, LinearContextualBandit):
        return _run_contextual_episode(env, variant, cfg, T, ss, seed_repr,
                                       bounds)
    if isinstance(env, GlucoseMdp):
        return _run_glucose_episode(env, variant, cfg, T, ss, seed_repr,
                                    bounds)
    raise TypeError(f"unsupported environment {type(env).__name__}")


def _bandit_confidence(posterior, cfg: TuningConfig):
    if cfg.variant == "point-estimate":
        return PointMassConfidence(posterior.point_model())
    return posterior


def _bandit_warm(stats: ArmStats, posterior, bernoulli: bool, t: int):
    if bernoulli:
        return BanditWarmStart(counts=stats.n.copy(), mean=stats.mean.copy(),
                               m2=stats.m2.copy(), post_a=posterior.a.copy(),
                               post_b=posterior.b.copy(), start_t=t)
    nig = (posterior.m.copy(), posterior.kappa.copy(),
           posterior.shape.copy(), posterior.scale.copy())
    return BanditWarmStart(counts=stats.n.copy(), mean=stats.mean.copy(),
                           m2=stats.m2.copy(), nig=nig, start_t=t)


def _run_bandit_episode(env, variant, cfg, T, ss, seed_repr, bounds):
    env_rng, policy_rng, tune_rng = map(np.random.default_rng, ss.spawn(3))
    k = env.k
    bernoulli = isinstance(env, BernoulliMab)
    stats = ArmStats(k)
    posterior = BetaArmPosterior(k) if bernoulli else NormalArmPosterior(k)
    for arm in range(k):
        r = env.pull(arm, env_rng)
        stats.update(arm, r)
        posterior.update(arm, r)

    record = EpisodeRecord(variant=variant.name, seed=seed_repr)
    table = GittinsTable() if variant.kind == "gittins" else None
    schedule = None
    mu_star = env.optimal_mean()
    for t in range(1, T + 1):
        if variant.source == "tuned" and (t - 1) % cfg.retune_interval == 0:
            warm = (_bandit_warm(stats, posterior, bernoulli, t)
                    if cfg.rollout_mode == "remaining" else None)
            schedule = tune_theta(
                _bandit_confidence(posterior, cfg), cfg, variant.kind, T,
                cfg.budget, tune_rng, bounds=bounds, warm=warm,
            )
        if variant.kind == "gittins":
            param = float("nan")
            action = gittins_select(posterior, t, T, policy_rng, table)
        else:
            param = variant.parameter_at(t, schedule)
            if variant.kind == "epsilon":
                action = epsilon_greedy_select(stats, param, policy_rng)
            elif variant.kind == "ucb":
                action = ucb_select(stats, param, policy_rng)
            else:
                action = ts_select(posterior, param, policy_rng)
        reward = env.pull(action, env_rng)
        stats.update(action, reward)
        posterior.update(action, reward)
        record.log_step(
            StepRecord(t=t, action=action, reward=reward, mu_star=mu_star),
            eta=param,
            theta=schedule.theta if schedule is not None else None,
            step_value=mu_star - reward,
        )
    return record


def _run_contextual_episode(env, variant, cfg, T, ss, seed_repr, bounds):
    if variant.kind != "epsilon":
        raise ValueError("the contextual bandit supports epsilon-greedy only")
    env_rng, policy_rng, tune_rng = map(np.random.default_rng, ss.spawn(3))
    d = env.d
    arm_X: list[list[np.ndarray]] = [[], []]
    arm_y: list[list[float]] = [[], []]
    z_obs: list[np.ndarray] = []

    def observe(arm, x):
        reward = env.pull(arm, x, env_rng)
        arm_X[arm].append(x)
        arm_y[arm].append(reward)
        return reward

    for arm in (0, 1):
        x = env.draw_context(env_rng)
        z_obs.append(x[1:])
        observe(arm, x)

    record = EpisodeRecord(variant=variant.name, seed=seed_repr)
    schedule = None
    for t in range(1, T + 1):
        x = env.draw_context(env_rng)
        z_obs.append(x[1:])
        fits = None
        if min(len(arm_y[0]), len(arm_y[1])) >= d:
            fits = [fit_ols(np.vstack(arm_X[a]), np.array(arm_y[a]))
                    for a in (0, 1)]
        if (variant.source == "tuned" and fits is not None
                and len(z_obs) >= d and (t - 1) % cfg.retune_interval == 0):
            confidence = ContextualConfidence(
                fits, fit_context_model(np.vstack(z_obs)),
                point_mass=cfg.variant == "point-estimate",
            )
            warm = None
            if cfg.rollout_mode == "remaining":
                warm = ContextualWarmStart(
                    xtx=np.stack([np.vstack(arm_X[a]).T @ np.vstack(arm_X[a])
                                  for a in (0, 1)]),
                    xty=np.stack([np.vstack(arm_X[a]).T @ np.array(arm_y[a])
                                  for a in (0, 1)]),
                    counts=np.array([len(arm_y[0]), len(arm_y[1])],
                                    dtype=float),
                    start_t=t,
                )
            schedule = tune_theta(confidence, cfg, "epsilon", T, cfg.budget,
                                  tune_rng, bounds=bounds, warm=warm)
        if variant.source == "tuned" and schedule is None:
            param = 1.0   # not yet identifiable: explore uniformly
        else:
            param = variant.parameter_at(t, schedule)
        if fits is None or policy_rng.random() < param:
            action = int(policy_rng.integers(2))
        else:
            action = contextual_greedy([f.beta for f in fits], x, policy_rng)
        reward = observe(action, x)
        mu_star = env.optimal_mean(x)
        record.log_step(
            StepRecord(t=t, action=action, reward=reward,
                       context=tuple(x), mu_star=mu_star),
            eta=param,
            theta=schedule.theta if schedule is not None else None,
            step_value=mu_star - reward,
        )
    return record


def _run_glucose_episode(env, variant, cfg, T, ss, seed_repr, bounds):
    if variant.kind != "epsilon":
        raise ValueError("the glucose MDP supports epsilon-greedy only")
    estimator = variant.estimator or "ar2-linear"
    order = 1 if estimator == "ar1-linear" else 2
    nonparametric = estimator == "ar2-np"
    env_rng, policy_rng, tune_rng, est_rng = map(np.random.default_rng,
                                                 ss.spawn(4))
    n_pat = env.n_patients
    states = [env.initial_state(env_rng) for _ in range(n_pat)]
    X_rows, y_next = [], []
    rf_states, rf_actions, rf_rewards = [], [], []
    di_pool, ex_pool = [], []
    for s in states:
        di_pool += [s.di1, s.di2]
        ex_pool += [s.ex1, s.ex2]

    def take_step(i, action):
        s = states[i]
        X_rows.append((glucose_design_row(s, action, 2),
                       glucose_design_row(s, action, 1)))
        rf_states.append(s.as_array())
        rf_actions.append(action)
        nxt, reward = env.glucose_step(s, action, env_rng)
        y_next.append(nxt.gl1)
        rf_rewards.append(reward)
        di_pool.append(nxt.di1)
        ex_pool.append(nxt.ex1)
        states[i] = nxt
        return reward

    for i in range(n_pat):
        take_step(i, 0)

    record = EpisodeRecord(variant=variant.name, seed=seed_repr)
    record.meta = {"np_substitutions": 0}
    schedule = None
    for t in range(1, T + 1):
        if variant.source == "tuned" and (t - 1) % cfg.retune_interval == 0:
            confidence = None
            y = np.array(y_next)
            if nonparametric and len(y) >= NP_MIN_TRANSITIONS:
                F = np.array([row2[[1, 2, 3, 4, 5, 6, 7, 8]]
                              for row2, _ in X_rows])
                np_fit = fit_np_conditional(
                    F, y, seed=int(est_rng.integers(2 ** 31)))
                confidence = NpGlucoseConfidence(np_fit, di_pool, ex_pool)
            else:
                if nonparametric:
                    record.meta["np_substitutions"] += 1
                X = np.array([row2 if order == 2 else row1
                              for row2, row1 in X_rows])
                try:
                    fit = fit_ols(X, y)
                    confidence = GlucoseConfidence(
                        fit, di_pool, ex_pool, order,
                        point_mass=cfg.variant == "point-estimate",
                    )
                except NotIdentifiableError:
                    confidence = None
            if confidence is not None:
                warm = None
                if cfg.rollout_mode == "remaining":
                    warm = _glucose_warm(states, X_rows, y, order, t)
                schedule = tune_theta(
                    confidence, cfg, "epsilon", T, cfg.budget, tune_rng,
                    bounds=bounds,
                    kernel_kwargs={"n_patients": n_pat, "agent_order": order},
                    warm=warm,
                )
        if variant.source == "tuned" and schedule is None:
            param = 1.0
        else:
            param = variant.parameter_at(t, schedule)
        q = fit_regression_forest(
            np.vstack(rf_states), np.array(rf_actions), np.array(rf_rewards),
            seed=int(est_rng.integers(2 ** 31)),
        )
        step_rewards, acts = [], []
        for i in range(n_pat):
            greedy = mdp_greedy(q, states[i])
            if policy_rng.random() < param:
                action = int(policy_rng.integers(2))
            else:
                action = greedy
            step_rewards.append(take_step(i, action))
            acts.append(action)
        record.log_step(
            StepRecord(t=t, action=float(np.mean(acts)),
                       reward=float(np.mean(step_rewards))),
            eta=param,
            theta=schedule.theta if schedule is not None else None,
            step_value=float(np.mean(step_rewards)),
        )
    return record


def _glucose_warm(states, X_rows, y, order, t):
    X = np.array([row2 if order == 2 else row1 for row2, row1 in X_rows])
    st = {
        "gl1": np.array([s.gl1 for s in states]),
        "di1": np.array([s.di1 for s in states]),
        "ex1": np.array([s.ex1 for s in states]),
        "gl2": np.array([s.gl2 for s in states]),
        "di2": np.array([s.di2 for s in states]),
        "ex2": np.array([s.ex2 for s in states]),
        "a1": np.array([s.a1 for s in states]),
    }
    return GlucoseWarmStart(states=st, xtx=X.T @ X, xty=X.T @ y,
                            yty=float(y @ y), n_rows=len(y), start_t=t)
