"""Gaussian-process global minimizer over a box.

A Matern-5/2 surrogate on unit-cube-scaled inputs with standardized
observations; hyperparameters come from a small marginal-likelihood grid, and
candidates are scored by expected improvement. Everything is driven by an
explicit Generator, so a fixed seed reproduces the full evaluation sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, qmc

JITTER = 1e-8
LENGTH_SCALES = (0.1, 0.25, 0.5, 1.0, 2.0)
NOISE_LEVELS = (1e-6, 1e-4, 1e-2, 1e-1)
DEFAULT_INIT_POINTS = 8
DEFAULT_CANDIDATES = 512
_LOCAL_CANDIDATES = 64
_LOCAL_SD = 0.05
_HYPERPARAM_REFRESH = 5


@dataclass
class GpSurrogate:
    X: np.ndarray            # (n, d), unit-cube scaled
    y_mean: float
    y_sd: float
    length_scale: float
    noise: float
    chol: np.ndarray
    alpha: np.ndarray        # K^-1 y_standardized


def _matern52(A: np.ndarray, B: np.ndarray, length_scale: float) -> np.ndarray:
    d2 = np.maximum(
        np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T),
        0.0,
    )
    r = np.sqrt(5.0 * d2) / length_scale
    return (1.0 + r + r * r / 3.0) * np.exp(-r)


def _log_marginal_likelihood(K: np.ndarray, y: np.ndarray):
    chol = np.linalg.cholesky(K)
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y))
    lml = (-0.5 * y @ alpha - np.sum(np.log(np.diag(chol)))
           - 0.5 * len(y) * np.log(2.0 * np.pi))
    return lml, chol, alpha


def gp_fit(X, y, hyperparams: tuple[float, float] | None = None) -> GpSurrogate:
    """Fit the surrogate; hyperparams=(length_scale, noise) skips the grid."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(X) < 2:
        raise ValueError("need at least 2 points")
    if np.all(np.all(X == X[0], axis=1)):
        raise ValueError("all inputs are identical")
    y_mean = float(np.mean(y))
    y_sd = float(np.std(y))
    if y_sd < 1e-12:
        y_sd = 1.0
    ys = (y - y_mean) / y_sd

    if hyperparams is not None:
        grid = [hyperparams]
    else:
        grid = [(ls, nv) for ls in LENGTH_SCALES for nv in NOISE_LEVELS]
    best = None
    for ls, nv in grid:
        K = _matern52(X, X, ls) + (nv + JITTER) * np.eye(len(X))
        try:
            lml, chol, alpha = _log_marginal_likelihood(K, ys)
        except np.linalg.LinAlgError:
            continue
        if best is None or lml > best[0]:
            best = (lml, ls, nv, chol, alpha)
    if best is None:
        raise np.linalg.LinAlgError("no hyperparameter setting factorized")
    _, ls, nv, chol, alpha = best
    return GpSurrogate(X=X, y_mean=y_mean, y_sd=y_sd, length_scale=ls,
                       noise=nv, chol=chol, alpha=alpha)


def _predict_batch(g: GpSurrogate, Xq: np.ndarray):
    Ks = _matern52(g.X, Xq, g.length_scale)
    mean = Ks.T @ g.alpha
    v = np.linalg.solve(g.chol, Ks)
    var = np.maximum(1.0 - np.sum(v * v, axis=0), 0.0)
    return mean * g.y_sd + g.y_mean, var * g.y_sd ** 2


def gp_predict(g: GpSurrogate, x) -> tuple[float, float]:
    """Posterior mean and variance at one unit-cube point."""
    x = np.asarray(x, dtype=float)
    if np.any(x < -1e-9) or np.any(x > 1.0 + 1e-9):
        raise ValueError(f"query point {x} outside the unit cube")
    mean, var = _predict_batch(g, x[None, :])
    return float(mean[0]), float(var[0])


def expected_improvement(mean, variance, best_so_far):
    """EI for minimization; zero-variance points give max(best - mean, 0)."""
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.asarray(variance, dtype=float))
    improve = best_so_far - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, improve / np.where(sd > 0, sd, 1.0), 0.0)
        ei = np.where(sd > 0,
                      improve * norm.cdf(z) + sd * norm.pdf(z),
                      np.maximum(improve, 0.0))
    if ei.ndim == 0:
        return float(ei)
    return ei


def _finite_or_penalized(y: np.ndarray) -> np.ndarray:
    """Replace non-finite objective values with a large finite penalty."""
    y = np.asarray(y, dtype=float)
    bad = ~np.isfinite(y)
    if not np.any(bad):
        return y
    good = y[~bad]
    if good.size == 0:
        return np.zeros_like(y)
    penalty = good.max() + 10.0 * (good.max() - good.min()) + 1.0
    out = y.copy()
    out[bad] = penalty
    return out


def minimize(objective, bounds, budget: int, rng: np.random.Generator, *,
             n_init: int = DEFAULT_INIT_POINTS,
             n_candidates: int = DEFAULT_CANDIDATES):
    """Sequential GP minimization of a (possibly noisy) objective.

    Evaluates a quasi-random initial design, then repeatedly evaluates the
    EI-maximizing candidate drawn from uniform samples plus local
    perturbations of the incumbent. Returns (best point, estimated minimum),
    where "best" means lowest posterior mean among evaluated points.
    """
    bounds = np.asarray(bounds, dtype=float)
    d = bounds.shape[0]
    lo, hi = bounds[:, 0], bounds[:, 1]
    span = hi - lo
    if budget < n_init:
        raise ValueError(f"budget {budget} below initial design size {n_init}")

    sobol = qmc.Sobol(d, scramble=True, seed=int(rng.integers(2 ** 32)))
    U = sobol.random(n_init)
    ys = [float(objective(lo + span * u)) for u in U]
    X = list(U)

    surrogate = None
    hyper = None
    while len(X) < budget:
        Xa = np.vstack(X)
        ya = _finite_or_penalized(np.array(ys))
        refresh = hyper is None or len(X) <= n_init + 2 \
            or len(X) % _HYPERPARAM_REFRESH == 0
        surrogate = gp_fit(Xa, ya, hyperparams=None if refresh else hyper)
        hyper = (surrogate.length_scale, surrogate.noise)

        mean_at_obs, _ = _predict_batch(surrogate, Xa)
        incumbent = Xa[int(np.argmin(mean_at_obs))]
        best = float(np.min(mean_at_obs))

        cand = rng.random((n_candidates, d))
        local = np.clip(
            incumbent + _LOCAL_SD * rng.standard_normal((_LOCAL_CANDIDATES, d)),
            0.0, 1.0,
        )
        cand = np.vstack([cand, local])
        mean, var = _predict_batch(surrogate, cand)
        pick = cand[int(np.argmax(expected_improvement(mean, var, best)))]
        X.append(pick)
        ys.append(float(objective(lo + span * pick)))

    Xa = np.vstack(X)
    ya = _finite_or_penalized(np.array(ys))
    surrogate = gp_fit(Xa, ya, hyperparams=hyper)
    mean_at_obs, _ = _predict_batch(surrogate, Xa)
    ibest = int(np.argmin(mean_at_obs))
    return lo + span * Xa[ibest], float(mean_at_obs[ibest])
