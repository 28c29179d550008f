"""Vectorized policy rollouts inside sampled generative models.

Each kernel advances R independent simulated learning-episodes in lockstep,
one per sampled model, so a Monte Carlo objective evaluation is a handful of
numpy operations per step instead of R python loops. Randomness consumption
per step is independent of the actions taken, which keeps common-random-number
streams aligned across schedule values until trajectories actually diverge.

The single-rollout entry points in the tuner are these kernels with R = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .environments import BernoulliMab, GaussianMab, glucose_reward_array
from .models import (
    NIG_PRIOR,
    GlucoseDynamicsModel,
    NpGlucoseModel,
    SampledContextualModel,
)

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(16)
_RIDGE = 1e-6


def _rowwise_argmax_tie(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Row-wise argmax with uniform tie-breaking (one draw per entry)."""
    u = rng.random(values.shape)
    best = values.max(axis=1, keepdims=True)
    return np.argmax(np.where(values == best, u, -1.0), axis=1)


# ---------------------------------------------------------------------------
# Multi-armed bandits


@dataclass
class BanditWarmStart:
    """Mid-episode agent state for remaining-horizon rollouts."""

    counts: np.ndarray
    mean: np.ndarray
    m2: np.ndarray
    post_a: np.ndarray | None = None      # Beta posteriors
    post_b: np.ndarray | None = None
    nig: tuple | None = None              # (m, kappa, shape, scale)
    start_t: int = 1


def simulate_bandit_rollouts(param_at, kind: str, models, T: int,
                             rng: np.random.Generator,
                             warm: BanditWarmStart | None = None) -> np.ndarray:
    """Cumulative realized regret of each rollout over the loop steps.

    param_at maps a step index to the (already range-mapped) exploration
    parameter. Without a warm start, every arm is pulled once before step 1
    and those pulls do not count toward regret.
    """
    R = len(models)
    k = models[0].k
    bernoulli = isinstance(models[0], BernoulliMab)
    if bernoulli:
        P = np.vstack([m.p for m in models])
        mu_star = P.max(axis=1)
    else:
        MU = np.vstack([m.mu for m in models])
        SIG = np.vstack([np.broadcast_to(m.sigma, (k,)) for m in models])
        mu_star = MU.max(axis=1)

    def draw_rewards(actions):
        rows = np.arange(R)
        if bernoulli:
            return (rng.random(R) < P[rows, actions]).astype(float)
        return MU[rows, actions] + SIG[rows, actions] * rng.standard_normal(R)

    if warm is None:
        counts = np.ones((R, k))
        if bernoulli:
            seed_rewards = (rng.random((R, k)) < P).astype(float)
        else:
            seed_rewards = MU + SIG * rng.standard_normal((R, k))
        mean = seed_rewards.copy()
        m2 = np.zeros((R, k))
        if kind == "ts":
            if bernoulli:
                a = 1.0 + seed_rewards
                b = 1.0 + (1.0 - seed_rewards)
            else:
                m = np.full((R, k), NIG_PRIOR["m"])
                kap = np.full((R, k), NIG_PRIOR["kappa"])
                shape = np.full((R, k), NIG_PRIOR["shape"])
                scale = np.full((R, k), NIG_PRIOR["scale"])
                delta = seed_rewards - m
                scale = scale + kap * delta ** 2 / (2.0 * (kap + 1.0))
                m = (kap * m + seed_rewards) / (kap + 1.0)
                kap = kap + 1.0
                shape = shape + 0.5
        start_t = 1
    else:
        counts = np.broadcast_to(warm.counts, (R, k)).astype(float).copy()
        mean = np.broadcast_to(warm.mean, (R, k)).astype(float).copy()
        m2 = np.broadcast_to(warm.m2, (R, k)).astype(float).copy()
        if kind == "ts":
            if bernoulli:
                a = np.broadcast_to(warm.post_a, (R, k)).astype(float).copy()
                b = np.broadcast_to(warm.post_b, (R, k)).astype(float).copy()
            else:
                m, kap, shape, scale = (
                    np.broadcast_to(v, (R, k)).astype(float).copy()
                    for v in warm.nig
                )
        start_t = warm.start_t

    rows = np.arange(R)
    regret = np.zeros(R)
    for t in range(start_t, T + 1):
        param = param_at(t)
        if kind == "epsilon":
            greedy = _rowwise_argmax_tie(mean, rng)
            explore = rng.random(R) < param
            uniform = rng.integers(k, size=R)
            actions = np.where(explore, uniform, greedy)
        elif kind == "ucb":
            z = norm.ppf(1.0 - param)
            bounds = np.full((R, k), np.inf)
            ok = counts >= 2
            sd = np.sqrt(np.where(ok, m2, 0.0) / np.maximum(counts - 1.0, 1.0))
            np.copyto(bounds, mean + z * sd / np.sqrt(counts), where=ok)
            actions = _rowwise_argmax_tie(bounds, rng)
        elif kind == "ts":
            if bernoulli:
                omega = a / (a + b)
                draws = rng.beta(a, b)
            else:
                omega = m
                draws = m + rng.standard_t(2.0 * shape) * np.sqrt(
                    scale / (shape * kap))
            actions = _rowwise_argmax_tie(omega + param * (draws - omega), rng)
        else:
            raise ValueError(f"unknown rollout policy kind {kind!r}")

        rewards = draw_rewards(actions)
        regret += mu_star - rewards

        idx = (rows, actions)
        counts[idx] += 1.0
        delta = rewards - mean[idx]
        mean[idx] += delta / counts[idx]
        m2[idx] += delta * (rewards - mean[idx])
        if kind == "ts":
            if bernoulli:
                a[idx] += rewards
                b[idx] += 1.0 - rewards
            else:
                m0, k0 = m[idx], kap[idx]
                kap[idx] = k0 + 1.0
                m[idx] = (k0 * m0 + rewards) / (k0 + 1.0)
                shape[idx] += 0.5
                scale[idx] += k0 * (rewards - m0) ** 2 / (2.0 * (k0 + 1.0))
    return regret


# ---------------------------------------------------------------------------
# Contextual bandit


@dataclass
class ContextualWarmStart:
    xtx: np.ndarray       # (2, d, d)
    xty: np.ndarray       # (2, d)
    counts: np.ndarray    # (2,)
    start_t: int = 1


def simulate_contextual_rollouts(param_at, models, T: int,
                                 rng: np.random.Generator,
                                 warm: ContextualWarmStart | None = None,
                                 ) -> np.ndarray:
    """Epsilon-greedy rollouts in sampled contextual models.

    The simulated agent refits per-arm least squares (with a tiny always-on
    ridge, numerically equivalent to the rank-deficiency fallback) every step
    and explores uniformly until each arm has d observations.
    """
    R = len(models)
    d = models[0].beta.shape[1]
    BETA = np.stack([m.beta for m in models])              # (R, 2, d)
    NOISE = np.stack([m.noise_sd for m in models])         # (R, 2)
    cmean = np.stack([m.context.mean for m in models])     # (R, d-1)
    cchol = np.stack([np.linalg.cholesky(m.context.cov) for m in models])

    if warm is None:
        xtx = np.zeros((R, 2, d, d))
        xty = np.zeros((R, 2, d))
        counts = np.zeros((R, 2))
        start_t = 1
    else:
        xtx = np.broadcast_to(warm.xtx, (R, 2, d, d)).copy()
        xty = np.broadcast_to(warm.xty, (R, 2, d)).copy()
        counts = np.broadcast_to(warm.counts, (R, 2)).astype(float).copy()
        start_t = warm.start_t

    rows = np.arange(R)
    eye = _RIDGE * np.eye(d)

    def draw_contexts():
        z = cmean + np.einsum("rij,rj->ri", cchol,
                              rng.standard_normal((R, d - 1)))
        return np.concatenate([np.ones((R, 1)), z], axis=1)

    def observe(x, actions):
        mean_rewards = np.einsum("rd,rd->r", BETA[rows, actions], x)
        rewards = mean_rewards + NOISE[rows, actions] * rng.standard_normal(R)
        idx = (rows, actions)
        xtx[idx] += x[:, :, None] * x[:, None, :]
        xty[idx] += x * rewards[:, None]
        counts[idx] += 1.0
        return rewards

    if warm is None:
        for arm in (0, 1):
            observe(draw_contexts(), np.full(R, arm))

    regret = np.zeros(R)
    for t in range(start_t, T + 1):
        x = draw_contexts()
        param = param_at(t)
        coefs = np.linalg.solve(xtx + eye, xty[..., None])[..., 0]  # (R,2,d)
        scores = np.einsum("rad,rd->ra", coefs, x)
        greedy = _rowwise_argmax_tie(scores, rng)
        unready = counts.min(axis=1) < d
        explore = (rng.random(R) < param) | unready
        uniform = rng.integers(2, size=R)
        actions = np.where(explore, uniform, greedy)
        rewards = observe(x, actions)
        best = np.einsum("rad,rd->ra", BETA, x).max(axis=1)
        regret += best - rewards
    return regret


# ---------------------------------------------------------------------------
# Glucose MDP


@dataclass
class GlucoseWarmStart:
    states: dict            # arrays of shape (n_patients,)
    xtx: np.ndarray
    xty: np.ndarray
    yty: float
    n_rows: int
    start_t: int = 1


def _state_arrays(R, n_pat, di0, ex0, di1, ex1):
    return {
        "gl1": np.full((R, n_pat), 100.0), "di1": di0, "ex1": ex0,
        "gl2": np.full((R, n_pat), 100.0), "di2": di1, "ex2": ex1,
        "a1": np.zeros((R, n_pat)),
    }


def _design(st, action, order):
    ones = np.ones_like(action, dtype=float)
    if order == 2:
        cols = [ones, st["gl1"], st["di1"], st["ex1"],
                st["gl2"], st["di2"], st["ex2"], action, st["a1"]]
    else:
        cols = [ones, st["gl1"], st["di1"], st["ex1"], action]
    return np.stack(cols, axis=-1)


def _np_features(st, action):
    return np.stack([st["gl1"], st["di1"], st["ex1"],
                     st["gl2"], st["di2"], st["ex2"], action, st["a1"]],
                    axis=-1)


def _mixture_covariates(model, shape, rng):
    """Covariate draws for seeding rollout initial states."""
    di, ex = model.draw_covariates(shape, rng)
    return di, ex


def simulate_glucose_rollouts(param_at, models, T: int,
                              rng: np.random.Generator, *,
                              n_patients: int = 15, agent_order: int = 2,
                              warm: GlucoseWarmStart | None = None,
                              ) -> np.ndarray:
    """Negative cohort-mean cumulative reward of epsilon-greedy rollouts.

    The simulated agent pools all patients, refits a linear glucose model
    each step, and takes the greedy action to be the one with the larger
    Gauss-Hermite estimate of next-step expected reward under its own fit.
    Covariate pools are shared across the sampled models of one confidence
    distribution, so they are read from the first model.
    """
    R = len(models)
    nonparametric = isinstance(models[0], NpGlucoseModel)
    if nonparametric:
        np_fit = models[0].fit
    else:
        BETA = np.stack([m.beta for m in models])          # (R, p_model)
        noise = np.array([m.noise_sd for m in models])
        model_order = models[0].order
    pool_model = models[0]
    p_agent = 9 if agent_order == 2 else 5

    shape2 = (R, n_patients)
    if warm is None:
        di0, ex0 = _mixture_covariates(pool_model, shape2, rng)
        di1, ex1 = _mixture_covariates(pool_model, shape2, rng)
        st = _state_arrays(R, n_patients, di0, ex0, di1, ex1)
        xtx = np.zeros((R, p_agent, p_agent))
        xty = np.zeros((R, p_agent))
        yty = np.zeros(R)
        n_rows = 0
        start_t = 1
    else:
        st = {key: np.broadcast_to(v, shape2).astype(float).copy()
              for key, v in warm.states.items()}
        xtx = np.broadcast_to(warm.xtx, (R, p_agent, p_agent)).copy()
        xty = np.broadcast_to(warm.xty, (R, p_agent)).copy()
        yty = np.full(R, float(warm.yty))
        n_rows = warm.n_rows
        start_t = warm.start_t

    ridge = _RIDGE * np.eye(p_agent)

    def transition(actions):
        """Sample next glucose for every trajectory under its model."""
        if nonparametric:
            F = _np_features(st, actions).reshape(R * n_patients, -1)
            gl = np_fit.sample_batch(F, rng).reshape(shape2)
        else:
            X = _design(st, actions, model_order)
            mean_gl = np.einsum("rpd,rd->rp", X, BETA)
            gl = mean_gl + noise[:, None] * rng.standard_normal(shape2)
        return gl

    def absorb(actions, gl):
        """Record the transition in the agent's pooled accumulators and
        advance the lagged state."""
        nonlocal n_rows, xtx, xty, yty
        Xa = _design(st, actions, agent_order)
        xtx += np.einsum("rpi,rpj->rij", Xa, Xa)
        xty += np.einsum("rpi,rp->ri", Xa, gl)
        yty += np.einsum("rp,rp->r", gl, gl)
        n_rows += n_patients
        di, ex = _mixture_covariates(pool_model, shape2, rng)
        st["gl2"], st["di2"], st["ex2"] = st["gl1"], st["di1"], st["ex1"]
        st["gl1"], st["di1"], st["ex1"] = gl, di, ex
        st["a1"] = actions.astype(float)

    if warm is None:
        # One observed no-treatment transition per patient before the loop.
        actions0 = np.zeros(shape2)
        absorb(actions0, transition(actions0))

    total = np.zeros(R)
    for t in range(start_t, T + 1):
        identifiable = n_rows >= p_agent
        if identifiable:
            coefs = np.linalg.solve(xtx + ridge, xty[..., None])[..., 0]
            rss = np.maximum(yty - np.einsum("ri,ri->r", coefs, xty), 0.0)
            sigma = np.sqrt(rss / max(n_rows - p_agent, 1))
            sigma = np.maximum(sigma, 1e-6)
            eu = []
            for a in (0.0, 1.0):
                Xa = _design(st, np.full(shape2, a), agent_order)
                mean_gl = np.einsum("rpd,rd->rp", Xa, coefs)
                gl_nodes = (mean_gl[..., None]
                            + np.sqrt(2.0) * sigma[:, None, None] * _GH_NODES)
                eu.append(glucose_reward_array(gl_nodes) @ _GH_WEIGHTS
                          / np.sqrt(np.pi))
            greedy = (eu[1] > eu[0]).astype(int)
        else:
            greedy = np.zeros(shape2, dtype=int)

        param = param_at(t)
        explore = rng.random(shape2) < param
        uniform = rng.integers(2, size=shape2)
        actions = np.where(explore, uniform, greedy).astype(float)

        gl = transition(actions)
        total += glucose_reward_array(gl).mean(axis=1)
        absorb(actions, gl)
    return -total
