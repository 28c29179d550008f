"""Generative models of the four simulation domains.

Arms and actions are 0-indexed throughout. Every environment is an immutable
description of a data-generating process; all stochastic sampling goes
through an explicit numpy Generator so replicates can run in parallel on
independent streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Glucose transition coefficients: intercept, one-step lags of
# (glucose, diet, exercise), two-step lags of the same, then the action just
# taken and the previous action.
GLUCOSE_BETA = np.array([10.0, 0.9, 0.1, -0.01, 0.0, 0.1, -0.01, -10.0, -4.0])


class BernoulliMab:
    """k-armed bandit with Bernoulli rewards."""

    def __init__(self, p):
        p = np.asarray(p, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("need at least 2 arms")
        if np.any((p < 0) | (p > 1)):
            raise ValueError("success probabilities must lie in [0, 1]")
        self.p = p

    @property
    def k(self) -> int:
        return self.p.size

    def pull(self, arm: int, rng: np.random.Generator) -> float:
        if not 0 <= arm < self.k:
            raise IndexError(f"arm {arm} out of range for {self.k} arms")
        return float(rng.random() < self.p[arm])

    def optimal_mean(self) -> float:
        return float(np.max(self.p))

    def arm_means(self) -> np.ndarray:
        return self.p


class GaussianMab:
    """k-armed bandit with normal rewards.

    sigma may be a scalar (common noise level, the default configuration) or
    one value per arm (used for models sampled from a posterior).
    """

    def __init__(self, mu, sigma):
        mu = np.asarray(mu, dtype=float)
        if mu.ndim != 1 or mu.size < 2:
            raise ValueError("need at least 2 arms")
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), mu.shape).copy()
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
        self.mu = mu
        self.sigma = sigma

    @property
    def k(self) -> int:
        return self.mu.size

    def pull(self, arm: int, rng: np.random.Generator) -> float:
        if not 0 <= arm < self.k:
            raise IndexError(f"arm {arm} out of range for {self.k} arms")
        return float(self.mu[arm] + self.sigma[arm] * rng.standard_normal())

    def optimal_mean(self) -> float:
        return float(np.max(self.mu))

    def arm_means(self) -> np.ndarray:
        return self.mu


class LinearContextualBandit:
    """Two-arm bandit whose mean rewards are linear in a random context.

    Contexts are x = (1, z) with z multivariate normal; the reward of arm a
    is x . beta[a] plus centred normal noise.
    """

    def __init__(self, beta, context_mean, context_cov, noise_sd):
        beta = np.asarray(beta, dtype=float)
        if beta.shape[0] != 2:
            raise ValueError("exactly 2 arms are supported")
        self.beta = beta
        self.context_mean = np.asarray(context_mean, dtype=float)
        self.context_cov = np.asarray(context_cov, dtype=float)
        self.d = beta.shape[1]
        if self.context_mean.shape != (self.d - 1,):
            raise ValueError("context_mean must have length d - 1")
        if noise_sd <= 0:
            raise ValueError("noise_sd must be positive")
        self.noise_sd = float(noise_sd)
        self._cov_chol = np.linalg.cholesky(self.context_cov)

    @property
    def k(self) -> int:
        return 2

    def draw_context(self, rng: np.random.Generator) -> np.ndarray:
        z = self.context_mean + self._cov_chol @ rng.standard_normal(self.d - 1)
        return np.concatenate(([1.0], z))

    def pull(self, arm: int, context, rng: np.random.Generator) -> float:
        if not 0 <= arm < 2:
            raise IndexError(f"arm {arm} out of range for 2 arms")
        x = np.asarray(context, dtype=float)
        return float(x @ self.beta[arm] + self.noise_sd * rng.standard_normal())

    def optimal_mean(self, context) -> float:
        x = np.asarray(context, dtype=float)
        return float(np.max(self.beta @ x))


def default_contextual_bandit() -> LinearContextualBandit:
    """Declared default parameters for the two-arm contextual bandit."""
    return LinearContextualBandit(
        beta=[[0.4, 0.2, -0.2], [0.2, 0.5, 0.2]],
        context_mean=[0.0, 0.0],
        context_cov=np.eye(2),
        noise_sd=0.5,
    )


@dataclass(frozen=True)
class GlucoseState:
    """Two lags of (glucose, diet, exercise) plus the two previous actions.

    Index 1 is the most recent lag; a1 is the last action taken before the
    current decision and a2 the one before that.
    """

    gl1: float
    di1: float
    ex1: float
    gl2: float
    di2: float
    ex2: float
    a1: float
    a2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.gl1, self.di1, self.ex1,
                         self.gl2, self.di2, self.ex2, self.a1, self.a2])


def glucose_features(state: GlucoseState, action: int) -> np.ndarray:
    """Transition design row: intercept, both covariate lags, the action
    being taken now, and the previous action."""
    return np.array([1.0, state.gl1, state.di1, state.ex1,
                     state.gl2, state.di2, state.ex2,
                     float(action), state.a1])


def glucose_reward(gl: float) -> float:
    """Piecewise-quadratic penalty for departing from normal glucose.

    The boundary gl == 70 belongs to the upper branch; the reward is
    deliberately discontinuous there.
    """
    gl = float(gl)
    if not np.isfinite(gl):
        raise ValueError(f"glucose level must be finite, got {gl}")
    if gl < 70.0:
        return -0.005 * gl * gl + 0.95 * gl - 45.0
    return -0.0002 * gl * gl + 0.022 * gl - 0.5


def glucose_reward_array(gl: np.ndarray) -> np.ndarray:
    """Vectorized glucose_reward for simulation kernels."""
    gl = np.asarray(gl, dtype=float)
    low = -0.005 * gl * gl + 0.95 * gl - 45.0
    high = -0.0002 * gl * gl + 0.022 * gl - 0.5
    return np.where(gl < 70.0, low, high)


@dataclass(frozen=True)
class GlucoseMdp:
    """Cohort MDP where glucose follows a second-order autoregression.

    Diet and exercise are i.i.d. over time and patients: normal with sd
    covariate_sd with probability covariate_prob, else exactly zero.
    """

    beta: np.ndarray = field(default_factory=lambda: GLUCOSE_BETA.copy())
    glucose_noise_sd: float = 5.0
    covariate_sd: float = 10.0
    covariate_prob: float = 0.6
    n_patients: int = 15

    def __post_init__(self):
        if self.glucose_noise_sd <= 0:
            raise ValueError("glucose_noise_sd must be positive")
        if not 0.0 <= self.covariate_prob <= 1.0:
            raise ValueError("covariate_prob must lie in [0, 1]")
        if np.asarray(self.beta).shape != (9,):
            raise ValueError("beta must have 9 coefficients")

    def draw_covariate(self, rng: np.random.Generator) -> float:
        if rng.random() < self.covariate_prob:
            return float(self.covariate_sd * rng.standard_normal())
        return 0.0

    def initial_state(self, rng: np.random.Generator) -> GlucoseState:
        """No-treatment steady state: both glucose lags at 100, covariates
        from their marginals, prior actions zero."""
        return GlucoseState(
            gl1=100.0, di1=self.draw_covariate(rng), ex1=self.draw_covariate(rng),
            gl2=100.0, di2=self.draw_covariate(rng), ex2=self.draw_covariate(rng),
            a1=0.0, a2=0.0,
        )

    def glucose_step(self, state: GlucoseState, action: int,
                     rng: np.random.Generator):
        """Advance one patient one step; returns (next_state, reward)."""
        mean = float(glucose_features(state, action) @ self.beta)
        gl = mean + self.glucose_noise_sd * rng.standard_normal()
        di = self.draw_covariate(rng)
        ex = self.draw_covariate(rng)
        next_state = GlucoseState(
            gl1=gl, di1=di, ex1=ex,
            gl2=state.gl1, di2=state.di1, ex2=state.ex1,
            a1=float(action), a2=state.a1,
        )
        return next_state, glucose_reward(gl)


def default_bernoulli_means(k: int) -> list[float]:
    """Declared default Bernoulli arm means for 2, 5, or 10 arms."""
    if k == 2:
        return [0.3, 0.7]
    if k == 5:
        return [0.3, 0.4, 0.5, 0.6, 0.7]
    if k == 10:
        return list(np.linspace(0.1, 0.73, 10))
    raise ValueError(f"no default means declared for k={k}")


def default_gaussian_means(k: int) -> list[float]:
    """Gaussian arm means equally spaced in [0, 1]."""
    if k < 2:
        raise ValueError("need at least 2 arms")
    return list(np.linspace(0.0, 1.0, k))
