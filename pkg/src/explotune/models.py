"""Estimation of generative models and confidence distributions from history.

Confidence objects all expose ``sample_model(rng)`` returning a complete
generative model that the rollout machinery can simulate, so tuning code
never needs to know which estimator produced them. Bandit posteriors also
expose ``means()`` / ``sample_means(rng)`` for the Thompson rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .environments import BernoulliMab, GaussianMab, GlucoseState

# Weak default priors. Beta(1, 1) per Bernoulli arm; for Gaussian arms a
# normal-inverse-gamma whose prior mean sits mid-range with little weight.
NIG_PRIOR = dict(m=0.5, kappa=0.01, shape=2.0, scale=0.5)


class NotIdentifiableError(ValueError):
    """Fewer rows than columns: the caller keeps its previous fit."""


# ---------------------------------------------------------------------------
# Conjugate bandit posteriors


class BetaArmPosterior:
    """Independent Beta(a, b) posteriors over Bernoulli arm means."""

    def __init__(self, k: int, a0: float = 1.0, b0: float = 1.0):
        if a0 <= 0 or b0 <= 0:
            raise ValueError("prior parameters must be positive")
        self.a = np.full(k, float(a0))
        self.b = np.full(k, float(b0))

    @property
    def k(self) -> int:
        return self.a.size

    def update(self, arm: int, reward: float) -> None:
        if reward not in (0.0, 1.0):
            raise ValueError(f"Bernoulli reward must be 0 or 1, got {reward}")
        self.a[arm] += reward
        self.b[arm] += 1.0 - reward

    def means(self) -> np.ndarray:
        return self.a / (self.a + self.b)

    def sample_means(self, rng: np.random.Generator) -> np.ndarray:
        return rng.beta(self.a, self.b)

    def sample_model(self, rng: np.random.Generator) -> BernoulliMab:
        return BernoulliMab(rng.beta(self.a, self.b))

    def point_model(self) -> BernoulliMab:
        return BernoulliMab(self.means())


class NormalArmPosterior:
    """Independent normal-inverse-gamma posteriors for Gaussian arms.

    Parameterization: sigma^2 ~ InvGamma(shape, scale) and
    mean | sigma^2 ~ N(m, sigma^2 / kappa). The confidence distribution of
    each arm mean is the marginal location-scale t with 2*shape degrees of
    freedom, location m, and scale sqrt(scale / (shape * kappa)).
    """

    def __init__(self, k: int, m: float = NIG_PRIOR["m"],
                 kappa: float = NIG_PRIOR["kappa"],
                 shape: float = NIG_PRIOR["shape"],
                 scale: float = NIG_PRIOR["scale"]):
        if kappa <= 0 or shape <= 0 or scale <= 0:
            raise ValueError("kappa, shape, scale must all be positive")
        self.m = np.full(k, float(m))
        self.kappa = np.full(k, float(kappa))
        self.shape = np.full(k, float(shape))
        self.scale = np.full(k, float(scale))

    @property
    def k(self) -> int:
        return self.m.size

    def update(self, arm: int, reward: float) -> None:
        m, kappa = self.m[arm], self.kappa[arm]
        self.kappa[arm] = kappa + 1.0
        self.m[arm] = (kappa * m + reward) / (kappa + 1.0)
        self.shape[arm] += 0.5
        self.scale[arm] += kappa * (reward - m) ** 2 / (2.0 * (kappa + 1.0))

    def means(self) -> np.ndarray:
        return self.m.copy()

    def sample_means(self, rng: np.random.Generator) -> np.ndarray:
        t = rng.standard_t(2.0 * self.shape)
        return self.m + t * np.sqrt(self.scale / (self.shape * self.kappa))

    def sample_model(self, rng: np.random.Generator) -> GaussianMab:
        var = self.scale / rng.gamma(self.shape)
        mu = self.m + np.sqrt(var / self.kappa) * rng.standard_normal(self.k)
        return GaussianMab(mu, np.sqrt(var))

    def point_model(self) -> GaussianMab:
        # Posterior-mean model; posterior mean of sigma^2 needs shape > 1.
        var = self.scale / np.maximum(self.shape - 1.0, 0.5)
        return GaussianMab(self.m, np.sqrt(var))


def update_posterior(posterior, arm: int, reward: float):
    """Conjugate update in place; returns the posterior for chaining."""
    posterior.update(arm, reward)
    return posterior


class PointMassConfidence:
    """Degenerate confidence distribution concentrated on one model."""

    def __init__(self, model):
        self.model = model

    def sample_model(self, rng: np.random.Generator):
        return self.model


# ---------------------------------------------------------------------------
# Linear dynamics / reward fits


@dataclass
class LinearDynamicsFit:
    """OLS fit: coefficients, residual variance, coefficient covariance."""

    beta: np.ndarray
    sigma2: float
    cov: np.ndarray
    n_obs: int

    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def sample_coefs(self, rng: np.random.Generator) -> np.ndarray:
        """Draw from N(beta_hat, cov); a zero covariance returns beta_hat."""
        if not np.any(self.cov):
            return self.beta.copy()
        scale = float(np.mean(np.diag(self.cov)))
        jitter = 0.0
        for _ in range(6):
            try:
                chol = np.linalg.cholesky(self.cov + jitter * np.eye(len(self.beta)))
                break
            except np.linalg.LinAlgError:
                jitter = max(jitter * 10.0, 1e-12 * max(scale, 1.0))
        else:
            raise np.linalg.LinAlgError("coefficient covariance not PSD")
        return self.beta + chol @ rng.standard_normal(len(self.beta))


def fit_ols(X, y) -> LinearDynamicsFit:
    """Least squares with a scale-aware ridge fallback on rank deficiency.

    sigma2 = RSS / (n - p); covariance = sigma2 * (X'X)^-1 (ridge-adjusted
    inverse when the design is singular). Raises NotIdentifiableError with
    fewer rows than columns.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n < p:
        raise NotIdentifiableError(f"{n} rows < {p} columns")
    xtx = X.T @ X
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < p:
        # Ridge scaled to the design's magnitude so an unseen binary column
        # gets a plausible (not astronomically vague) coefficient variance.
        lam = 1e-6 * max(float(np.mean(np.diag(xtx))), 1.0)
        xtx = xtx + lam * np.eye(p)
        beta = np.linalg.solve(xtx, X.T @ y)
    resid = y - X @ beta
    dof = max(n - p, 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(xtx)
    return LinearDynamicsFit(beta=beta, sigma2=sigma2, cov=cov, n_obs=n)


# ---------------------------------------------------------------------------
# Context distribution


@dataclass
class ContextModelFit:
    """Multivariate normal fitted to the random part of observed contexts."""

    mean: np.ndarray
    cov: np.ndarray

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        chol = np.linalg.cholesky(self.cov)
        return self.mean + chol @ rng.standard_normal(self.mean.size)


def fit_context_model(contexts) -> ContextModelFit:
    """Sample mean and covariance, diagonal-regularized to positive definite."""
    Z = np.atleast_2d(np.asarray(contexts, dtype=float))
    n, d = Z.shape
    if n < d + 1:
        raise NotIdentifiableError(f"need at least {d + 1} contexts, got {n}")
    mean = Z.mean(axis=0)
    centered = Z - mean
    cov = centered.T @ centered / (n - 1) + 1e-8 * np.eye(d)
    return ContextModelFit(mean=mean, cov=cov)


# ---------------------------------------------------------------------------
# Regression forest (one-step reward estimator)


class RegressionForest:
    """Bagged regression-tree ensemble over (state features, action) rows."""

    def __init__(self, model: RandomForestRegressor, n_features: int):
        self._model = model
        self.n_features = n_features

    def predict_rows(self, X) -> np.ndarray:
        return self._model.predict(np.asarray(X, dtype=float))

    def predict_reward(self, state, action: int) -> float:
        s = state.as_array() if isinstance(state, GlucoseState) else np.asarray(state)
        row = np.concatenate([s, [float(action)]])
        return float(self._model.predict(row[None, :])[0])


def fit_regression_forest(state_features, actions, rewards, *,
                          n_trees: int = 50, min_leaf: int = 5,
                          max_depth: int | None = None,
                          bootstrap: bool = True,
                          seed: int = 0) -> RegressionForest:
    """Fit the conditional one-step-reward estimator.

    Requires at least one sample per action so the greedy argmax is defined
    for both choices.
    """
    S = np.atleast_2d(np.asarray(state_features, dtype=float))
    a = np.asarray(actions, dtype=float)
    y = np.asarray(rewards, dtype=float)
    for act in (0.0, 1.0):
        if not np.any(a == act):
            raise ValueError(f"no samples for action {int(act)}")
    X = np.column_stack([S, a])
    model = RandomForestRegressor(
        n_estimators=n_trees, min_samples_leaf=min_leaf, max_depth=max_depth,
        bootstrap=bootstrap, random_state=int(seed) % (2 ** 31),
    )
    model.fit(X, y)
    return RegressionForest(model, X.shape[1])


# ---------------------------------------------------------------------------
# Two-step nonparametric conditional density of next glucose

NP_MIN_TRANSITIONS = 50
_BANDWIDTH_GRID = np.logspace(np.log10(0.25), np.log10(4.0), 8)


@dataclass
class NpConditionalFit:
    """Forest conditional mean plus a kernel model of its residuals.

    Sampling draws a stored residual with probability proportional to a
    Gaussian product kernel between the query covariates and the residual's
    covariates, then jitters it by the residual bandwidth. x_bandwidths and
    resid_bandwidth come from cross-validated multipliers on per-dimension
    reference scales.
    """

    forest: RegressionForest
    X: np.ndarray
    residuals: np.ndarray
    x_bandwidths: np.ndarray
    resid_bandwidth: float

    def predict_mean(self, F) -> np.ndarray:
        return self.forest.predict_rows(np.atleast_2d(np.asarray(F, dtype=float)))

    def _log_weights(self, F: np.ndarray) -> np.ndarray:
        diff = (F[:, None, :] - self.X[None, :, :]) / self.x_bandwidths
        return -0.5 * np.einsum("ijd,ijd->ij", diff, diff)

    def sample_batch(self, F, rng: np.random.Generator) -> np.ndarray:
        """One next-glucose draw per query row of F."""
        F = np.atleast_2d(np.asarray(F, dtype=float))
        logw = self._log_weights(F)
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        cdf = np.cumsum(w, axis=1)
        u = rng.random(F.shape[0]) * cdf[:, -1]
        idx = np.minimum((cdf < u[:, None]).sum(axis=1), len(self.residuals) - 1)
        jitter = self.resid_bandwidth * rng.standard_normal(F.shape[0])
        return self.predict_mean(F) + self.residuals[idx] + jitter


def _reference_bandwidths(X: np.ndarray, resid: np.ndarray):
    n, d = X.shape
    rate = n ** (-1.0 / (d + 5))  # joint density over covariates + residual
    sx = X.std(axis=0, ddof=1)
    hx = np.where(sx > 0, sx * rate, 1.0)
    se = resid.std(ddof=1)
    he = se * rate if se > 0 else 1e-8
    return hx, he


def fit_np_conditional(X, y, *, seed: int = 0, min_transitions: int = NP_MIN_TRANSITIONS,
                       n_trees: int = 50, min_leaf: int = 5,
                       cv_folds: int = 5, cv_cap: int = 1000) -> NpConditionalFit:
    """Fit the two-step conditional-density estimator.

    Step 1 fits the forest conditional mean. Step 2 keeps its residuals and
    grid-searches multipliers of the reference bandwidths by k-fold
    cross-validated held-out log density of residual given covariates (the
    joint-over-marginal kernel ratio).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n < min_transitions:
        raise NotIdentifiableError(
            f"nonparametric fit needs >= {min_transitions} transitions, got {n}"
        )
    # Dummy per-row actions are irrelevant here; fit the forest directly.
    model = RandomForestRegressor(
        n_estimators=n_trees, min_samples_leaf=min_leaf,
        random_state=int(seed) % (2 ** 31),
    )
    model.fit(X, y)
    forest = RegressionForest(model, d)
    resid = y - model.predict(X)

    hx_ref, he_ref = _reference_bandwidths(X, resid)
    rng = np.random.default_rng(seed)
    if n > cv_cap:
        keep = rng.choice(n, size=cv_cap, replace=False)
        Xcv, ecv = X[keep], resid[keep]
    else:
        Xcv, ecv = X, resid
    lx, le = _cv_bandwidth_multipliers(Xcv, ecv, hx_ref, he_ref, cv_folds, rng)
    return NpConditionalFit(
        forest=forest, X=X, residuals=resid,
        x_bandwidths=lx * hx_ref, resid_bandwidth=float(le * he_ref),
    )


def _cv_bandwidth_multipliers(X, e, hx_ref, he_ref, folds, rng):
    """Joint grid search over covariate/residual bandwidth multipliers."""
    n = len(e)
    order = rng.permutation(n)
    fold_of = np.empty(n, dtype=int)
    fold_of[order] = np.arange(n) % folds
    scores = np.zeros((len(_BANDWIDTH_GRID), len(_BANDWIDTH_GRID)))
    for f in range(folds):
        test = fold_of == f
        if not np.any(test) or np.all(test):
            continue
        Xtr, Xte = X[~test], X[test]
        etr, ete = e[~test], e[test]
        diff = (Xte[:, None, :] - Xtr[None, :, :]) / hx_ref
        q = np.einsum("ijd,ijd->ij", diff, diff)
        r = ((ete[:, None] - etr[None, :]) / he_ref) ** 2
        for i, lam_x in enumerate(_BANDWIDTH_GRID):
            wx = np.exp(-0.5 * q / lam_x ** 2)
            sx = wx.sum(axis=1)
            for j, lam_e in enumerate(_BANDWIDTH_GRID):
                ke = np.exp(-0.5 * r / lam_e ** 2) / (
                    lam_e * he_ref * np.sqrt(2.0 * np.pi))
                dens = (wx * ke).sum(axis=1) / np.maximum(sx, 1e-300)
                scores[i, j] += np.log(np.maximum(dens, 1e-300)).sum()
    i, j = np.unravel_index(np.argmax(scores), scores.shape)
    return _BANDWIDTH_GRID[i], _BANDWIDTH_GRID[j]


def np_sample_next_glucose(fit: NpConditionalFit, features,
                           rng: np.random.Generator) -> float:
    """Single draw from the fitted conditional law of next glucose."""
    return float(fit.sample_batch(np.asarray(features, dtype=float)[None, :], rng)[0])


# ---------------------------------------------------------------------------
# Glucose dynamics models and confidence wrappers


def glucose_design_row(state: GlucoseState, action: int, order: int) -> np.ndarray:
    """Design row for the linear dynamics fit of the requested lag order."""
    if order == 2:
        return np.array([1.0, state.gl1, state.di1, state.ex1,
                         state.gl2, state.di2, state.ex2,
                         float(action), state.a1])
    if order == 1:
        return np.array([1.0, state.gl1, state.di1, state.ex1, float(action)])
    raise ValueError(f"unsupported lag order {order}")


GLUCOSE_DESIGN_DIM = {1: 5, 2: 9}


@dataclass
class GlucoseDynamicsModel:
    """Sampled linear glucose model plus empirical covariate pools."""

    beta: np.ndarray
    noise_sd: float
    di_pool: np.ndarray
    ex_pool: np.ndarray
    order: int = 2

    def glucose_mean(self, rows: np.ndarray) -> np.ndarray:
        return rows @ self.beta

    def draw_covariates(self, size, rng: np.random.Generator):
        di = self.di_pool[rng.integers(len(self.di_pool), size=size)]
        ex = self.ex_pool[rng.integers(len(self.ex_pool), size=size)]
        return di, ex


@dataclass
class NpGlucoseModel:
    """Nonparametric glucose model: conditional-density transition sampler."""

    fit: NpConditionalFit
    di_pool: np.ndarray
    ex_pool: np.ndarray
    order: int = 2

    def draw_covariates(self, size, rng: np.random.Generator):
        di = self.di_pool[rng.integers(len(self.di_pool), size=size)]
        ex = self.ex_pool[rng.integers(len(self.ex_pool), size=size)]
        return di, ex


class GlucoseConfidence:
    """Confidence distribution over linear glucose dynamics.

    Coefficients are sampled from the asymptotic normal N(beta_hat, cov);
    the residual variance stays fixed at its estimate. Covariate pools are
    shared empirical distributions.
    """

    def __init__(self, fit: LinearDynamicsFit, di_pool, ex_pool,
                 order: int = 2, point_mass: bool = False):
        self.fit = fit
        self.di_pool = np.asarray(di_pool, dtype=float)
        self.ex_pool = np.asarray(ex_pool, dtype=float)
        self.order = order
        self.point_mass = point_mass

    def sample_model(self, rng: np.random.Generator) -> GlucoseDynamicsModel:
        beta = self.fit.beta.copy() if self.point_mass else self.fit.sample_coefs(rng)
        return GlucoseDynamicsModel(
            beta=beta, noise_sd=float(np.sqrt(self.fit.sigma2)),
            di_pool=self.di_pool, ex_pool=self.ex_pool, order=self.order,
        )


class NpGlucoseConfidence:
    """Point-mass confidence on the fitted nonparametric dynamics."""

    def __init__(self, fit: NpConditionalFit, di_pool, ex_pool):
        self.fit = fit
        self.di_pool = np.asarray(di_pool, dtype=float)
        self.ex_pool = np.asarray(ex_pool, dtype=float)

    def sample_model(self, rng: np.random.Generator) -> NpGlucoseModel:
        return NpGlucoseModel(fit=self.fit, di_pool=self.di_pool,
                              ex_pool=self.ex_pool)


# ---------------------------------------------------------------------------
# Contextual-bandit confidence


@dataclass
class SampledContextualModel:
    """Complete contextual generative model: per-arm coefficients, per-arm
    noise levels, and a context distribution."""

    beta: np.ndarray          # (2, d)
    noise_sd: np.ndarray      # (2,)
    context: ContextModelFit

    @property
    def k(self) -> int:
        return 2

    def draw_context(self, rng: np.random.Generator) -> np.ndarray:
        return np.concatenate(([1.0], self.context.draw(rng)))

    def pull(self, arm: int, context, rng: np.random.Generator) -> float:
        x = np.asarray(context, dtype=float)
        return float(x @ self.beta[arm] + self.noise_sd[arm] * rng.standard_normal())

    def optimal_mean(self, context) -> float:
        return float(np.max(self.beta @ np.asarray(context, dtype=float)))


class ContextualConfidence:
    """Per-arm least-squares sampling distributions plus the context model."""

    def __init__(self, arm_fits: list[LinearDynamicsFit],
                 context_fit: ContextModelFit, point_mass: bool = False):
        if len(arm_fits) != 2:
            raise ValueError("exactly 2 arms are supported")
        self.arm_fits = arm_fits
        self.context_fit = context_fit
        self.point_mass = point_mass

    def sample_model(self, rng: np.random.Generator) -> SampledContextualModel:
        betas, sds = [], []
        for fit in self.arm_fits:
            betas.append(fit.beta.copy() if self.point_mass
                         else fit.sample_coefs(rng))
            sds.append(np.sqrt(max(fit.sigma2, 1e-12)))
        return SampledContextualModel(
            beta=np.vstack(betas), noise_sd=np.array(sds),
            context=self.context_fit,
        )
