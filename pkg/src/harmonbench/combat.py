"""Parametric ComBat harmonization with empirical-Bayes shrinkage.

Each feature is modelled as ``y = alpha + X beta + gamma_site + delta_site * eps``.
``fit`` estimates the grand mean, covariate coefficients and pooled scale
from the training data, then the per-site location (``gamma_star``) and
scale (``delta_star2``) corrections, optionally shrunk towards per-site
priors. ``transform`` applies a fitted model to samples from known sites
without refitting anything.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, ConvergenceError, DataError, NumericalError, UnknownSiteError

log = logging.getLogger(__name__)

# Callables invoked as ``observer(features, sites, covariates)`` on every
# transform; used by the experiment runner to audit what reaches the model.
transform_observers = []

# Below this prior variance of the site scale estimates the inverse-gamma
# hyperprior is undefined and shrinkage is switched off for the site.
DEGENERATE_S2 = 1e-12


@dataclass(frozen=True)
class CombatConfig:
    use_eb: bool = True
    max_iters: int = 500
    tol: float = 1e-4
    ridge_eps: float = 1e-8
    sigma_floor: float = 1e-8

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("combat tol must be positive")
        if int(self.max_iters) < 1:
            raise ConfigError("combat max_iters must be at least 1")
        if not self.sigma_floor > 0:
            raise ConfigError("combat sigma_floor must be positive")
        if self.ridge_eps < 0:
            raise ConfigError("combat ridge_eps must be non-negative")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown combat option(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class SitePrior:
    gamma_bar: float
    tau2: float
    lam: float
    theta: float
    degenerate: bool = False


@dataclass
class CombatModel:
    alpha: np.ndarray          # (p,)
    beta: np.ndarray           # (t, p)
    sigma: np.ndarray          # (p,)
    sites: tuple               # known sites in row order of gamma_star
    counts: np.ndarray         # (s,)
    gamma_hat: np.ndarray      # (s, p) pre-shrinkage
    delta_hat2: np.ndarray     # (s, p) pre-shrinkage
    gamma_star: np.ndarray     # (s, p)
    delta_star2: np.ndarray    # (s, p)
    priors: tuple              # SitePrior per site
    config: CombatConfig = field(default_factory=CombatConfig)
    iterations: tuple = ()     # EB iterations used per site

    @property
    def n_covariates(self):
        return self.beta.shape[0]

    @property
    def n_features(self):
        return self.alpha.shape[0]

    def site_rows(self, sites):
        index = {s: i for i, s in enumerate(self.sites)}
        sites = np.asarray(sites).astype(str)
        unknown = set(sites.tolist()) - index.keys()
        if unknown:
            raise UnknownSiteError(unknown)
        return np.array([index[s] for s in sites.tolist()], dtype=int)

    def to_dict(self):
        return {
            "format": "harmonbench.combat/1",
            "config": asdict(self.config),
            "sites": list(self.sites),
            "counts": self.counts.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "sigma": self.sigma.tolist(),
            "gamma_hat": self.gamma_hat.tolist(),
            "delta_hat2": self.delta_hat2.tolist(),
            "gamma_star": self.gamma_star.tolist(),
            "delta_star2": self.delta_star2.tolist(),
            "priors": [asdict(pr) for pr in self.priors],
            "iterations": list(self.iterations),
        }

    @classmethod
    def from_dict(cls, d):
        p = len(d["alpha"])
        beta = np.asarray(d["beta"], dtype=float).reshape(-1, p)
        return cls(
            alpha=np.asarray(d["alpha"], dtype=float),
            beta=beta,
            sigma=np.asarray(d["sigma"], dtype=float),
            sites=tuple(d["sites"]),
            counts=np.asarray(d["counts"], dtype=int),
            gamma_hat=np.asarray(d["gamma_hat"], dtype=float).reshape(-1, p),
            delta_hat2=np.asarray(d["delta_hat2"], dtype=float).reshape(-1, p),
            gamma_star=np.asarray(d["gamma_star"], dtype=float).reshape(-1, p),
            delta_star2=np.asarray(d["delta_star2"], dtype=float).reshape(-1, p),
            priors=tuple(SitePrior(**pr) for pr in d["priors"]),
            config=CombatConfig.from_dict(d["config"]),
            iterations=tuple(d.get("iterations", ())),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def moment_match_inverse_gamma(m, s2):
    """Inverse-gamma shape and scale whose mean is ``m`` and variance ``s2``.

    Returns ``(lam, theta, degenerate)``; ``degenerate`` is set when ``s2`` is
    too small for the moments to define a prior, in which case ``lam`` and
    ``theta`` are NaN.
    """
    if not s2 > DEGENERATE_S2:
        return float("nan"), float("nan"), True
    lam = (2.0 * s2 + m * m) / s2
    theta = (m * s2 + m**3) / s2
    return lam, theta, False


def _as_covariates(covariates, n):
    if covariates is None:
        return np.zeros((n, 0))
    c = np.asarray(covariates, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    if c.shape[0] != n:
        raise DataError(f"covariate matrix has {c.shape[0]} rows, expected {n}")
    if not np.all(np.isfinite(c)):
        raise DataError("covariates contain non-finite values")
    return c


def _postmean(g_hat, g_bar, n, d_star, t2):
    return (t2 * n * g_hat + d_star * g_bar) / (t2 * n + d_star)


def _postvar(sum2, n, lam, theta):
    return (theta + 0.5 * sum2) / (n / 2.0 + lam - 1.0)


def eb_fixed_point(z, g_hat, d_hat2, prior: SitePrior, tol, max_iters):
    """Solve the coupled location/scale posterior equations for one site.

    ``z`` is the (n_i, p) block of standardized data for the site. Returns
    ``(gamma_star, delta_star2, iterations)``.
    """
    n = z.shape[0]
    g_old = g_hat.copy()
    d_old = d_hat2.copy()
    change = np.inf
    for it in range(1, max_iters + 1):
        g_new = _postmean(g_hat, prior.gamma_bar, n, d_old, prior.tau2)
        sum2 = ((z - g_new) ** 2).sum(axis=0)
        d_new = _postvar(sum2, n, prior.lam, prior.theta)
        dg = np.abs(g_new - g_old) / np.maximum(np.abs(g_old), 1e-6)
        dd = np.abs(d_new - d_old) / np.abs(d_old)
        change = float(max(dg.max(), dd.max()))
        g_old, d_old = g_new, d_new
        if change < tol:
            return g_new, d_new, it
    raise ConvergenceError(
        f"empirical-Bayes iteration did not converge after {max_iters} iterations "
        f"(last relative change {change:.3g})",
        last_change=change,
    )


def _design(site_idx, n_sites, cov):
    onehot = np.zeros((len(site_idx), n_sites))
    onehot[np.arange(len(site_idx)), site_idx] = 1.0
    return np.hstack([onehot, cov])


def fit(features, sites, covariates=None, config: CombatConfig | None = None) -> CombatModel:
    config = config or CombatConfig()
    Y = np.asarray(features, dtype=float)
    if Y.ndim != 2 or Y.shape[1] < 1:
        raise DataError("features must be an n x p matrix with p >= 1")
    if not np.all(np.isfinite(Y)):
        raise DataError("features contain non-finite values")
    n, p = Y.shape
    site_arr = np.asarray(sites).astype(str)
    if site_arr.shape != (n,):
        raise DataError("need one site label per row")
    cov = _as_covariates(covariates, n)
    site_list, site_idx, counts = np.unique(site_arr, return_inverse=True, return_counts=True)
    small = [s for s, c in zip(site_list, counts) if c < 2]
    if small:
        raise DataError(f"site(s) with fewer than 2 samples: {', '.join(small)}")
    s = len(site_list)

    # Regression on [site indicators | covariates]; the grand mean is the
    # count-weighted average of the site intercepts, which makes the location
    # effects sum to zero under the same weights. Only the covariate block is
    # ridge-penalized: site intercepts stay exact within-site means, and the
    # penalty alone keeps the solve well-posed when a covariate is (nearly)
    # collinear with the site indicators.
    D = _design(site_idx, s, cov)
    penalty = np.r_[np.zeros(s), np.full(cov.shape[1], config.ridge_eps)]
    gram = D.T @ D + np.diag(penalty)
    B = np.linalg.solve(gram, D.T @ Y)
    weights = counts / n
    alpha = weights @ B[:s]
    beta = B[s:]
    resid = Y - D @ B
    var_pooled = np.mean(resid**2, axis=0)
    sigma = np.sqrt(np.maximum(var_pooled, config.sigma_floor**2))

    z = (Y - alpha - cov @ beta) / sigma
    gamma_hat = np.zeros((s, p))
    delta_hat2 = np.zeros((s, p))
    for i in range(s):
        zi = z[site_idx == i]
        gamma_hat[i] = zi.mean(axis=0)
        delta_hat2[i] = zi.var(axis=0)
    for i in range(s):
        if np.all(delta_hat2[i] <= config.sigma_floor**2):
            raise NumericalError(f"site {site_list[i]} has zero within-site variance on every feature")
    delta_hat2 = np.maximum(delta_hat2, config.sigma_floor**2)

    priors = []
    gamma_star = gamma_hat.copy()
    delta_star2 = delta_hat2.copy()
    iterations = []
    for i in range(s):
        if config.use_eb and p >= 2:
            g_bar = float(gamma_hat[i].mean())
            tau2 = float(gamma_hat[i].var(ddof=1))
            m = float(delta_hat2[i].mean())
            s2 = float(delta_hat2[i].var(ddof=1))
            lam, theta, degenerate = moment_match_inverse_gamma(m, s2)
        else:
            g_bar, tau2, lam, theta, degenerate = 0.0, 0.0, float("nan"), float("nan"), True
        prior = SitePrior(g_bar, tau2, lam, theta, degenerate)
        priors.append(prior)
        if config.use_eb and not degenerate:
            g, d, it = eb_fixed_point(z[site_idx == i], gamma_hat[i], delta_hat2[i], prior, config.tol, config.max_iters)
            gamma_star[i], delta_star2[i] = g, d
            iterations.append(it)
        else:
            if config.use_eb:
                log.warning("site %s: degenerate scale prior, shrinkage disabled", site_list[i])
            iterations.append(0)

    return CombatModel(
        alpha=alpha,
        beta=beta,
        sigma=sigma,
        sites=tuple(site_list.tolist()),
        counts=counts.astype(int),
        gamma_hat=gamma_hat,
        delta_hat2=delta_hat2,
        gamma_star=gamma_star,
        delta_star2=delta_star2,
        priors=tuple(priors),
        config=config,
        iterations=tuple(iterations),
    )


def standardize(model: CombatModel, features, covariates=None):
    Y = np.asarray(features, dtype=float)
    cov = _as_covariates(covariates, Y.shape[0])
    return (Y - model.alpha - cov @ model.beta) / model.sigma


def transform(model: CombatModel, features, sites, covariates=None) -> np.ndarray:
    Y = np.asarray(features, dtype=float)
    if Y.ndim != 2 or Y.shape[1] != model.n_features:
        raise DataError(f"expected {model.n_features} feature columns, got shape {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise DataError("features contain non-finite values")
    rows = model.site_rows(sites)
    if rows.shape != (Y.shape[0],):
        raise DataError("need one site label per row")
    cov = _as_covariates(covariates, Y.shape[0])
    for observer in transform_observers:
        observer(Y, sites, cov)
    if cov.shape[1] != model.n_covariates:
        raise DataError(
            f"covariate width {cov.shape[1]} does not match the {model.n_covariates} used at fit time"
        )
    mean = model.alpha + cov @ model.beta
    z = (Y - mean) / model.sigma
    return model.sigma * (z - model.gamma_star[rows]) / np.sqrt(model.delta_star2[rows]) + mean


def fit_transform(features, sites, covariates=None, config=None):
    model = fit(features, sites, covariates, config)
    return model, transform(model, features, sites, covariates)
