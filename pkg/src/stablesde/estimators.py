"""Scikit-learn style estimators wrapping the inference drivers.

Both estimators take a raw observation record as ``X`` (1-D array,
single-column 2-D array, or an ObservationSet) and expose fitted
results through trailing-underscore attributes, so they compose with
``get_params``/``set_params``/``clone`` and sklearn pipelines that
only need ``fit``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .expressions import ModelSpec
from .mcmc import MCMCConfig, PriorSpec, run_chain
from .quasi import OptimizerConfig, fisher_info, quasi_loglik, quasi_mle
from .simulate import ObservationSet

_RW_SCALE = 2.38**2


def _as_observations(X, t_end: float) -> ObservationSet:
    """Coerce estimator input into an observation set."""
    if isinstance(X, ObservationSet):
        return X
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError("X must be a 1-D series or a single-column 2-D array")
    return ObservationSet(arr, t_end=float(t_end))


class _ModelParamsMixin:
    """Shared model construction from primitive constructor params."""

    def _build_model(self) -> ModelSpec:
        if self.bounds is None:
            raise ValueError("bounds must be a {name: (low, high)} mapping")
        return ModelSpec(self.drift, self.scale, self.alpha, self.gamma, self.bounds)

    def _check_beta(self) -> float:
        beta = float(self.beta)
        if not 1.0 <= beta < 2.0:
            raise ValueError("beta must lie in [1, 2)")
        return beta


class StableQuasiMLE(_ModelParamsMixin, BaseEstimator):
    """Quasi-maximum-likelihood estimator for a stable-driven SDE.

    Parameters
    ----------
    drift, scale : str
        Coefficient expressions in the state symbol ``x``.
    alpha, gamma : tuple of str
        Drift and scale parameter names.
    bounds : dict
        name -> (low, high) box for every parameter.
    beta : float
        Stability index of the driving noise, in [1, 2).
    t_end : float
        Terminal time assigned to array input (ignored when X is an
        ObservationSet).
    restarts : int
        Perturbed restarts when the optimizer stalls on the boundary.
    seed : int
        Seed for the restart perturbations.

    Attributes
    ----------
    model_ : ModelSpec
    theta_ : ThetaVector
        Maximizer over the box.
    loglik_ : float
    converged_ : bool
    info_ : QuasiInfo
        Rate matrix and information matrices at the maximizer.
    """

    def __init__(
        self,
        drift="0",
        scale="g",
        alpha=(),
        gamma=("g",),
        bounds=None,
        beta=1.5,
        t_end=1.0,
        restarts=3,
        seed=0,
    ):
        self.drift = drift
        self.scale = scale
        self.alpha = alpha
        self.gamma = gamma
        self.bounds = bounds
        self.beta = beta
        self.t_end = t_end
        self.restarts = restarts
        self.seed = seed

    def fit(self, X, y=None):
        model = self._build_model()
        beta = self._check_beta()
        obs = _as_observations(X, self.t_end)
        opt = OptimizerConfig(restarts=int(self.restarts), seed=int(self.seed))
        result = quasi_mle(model, obs, beta, opt=opt)
        self.model_ = model
        self.theta_ = result.theta
        self.loglik_ = float(result.loglik)
        self.converged_ = bool(result.converged)
        self.info_ = fisher_info(model, result.theta, obs, beta)
        return self

    def score(self, X, y=None) -> float:
        """Quasi log-likelihood of a record under the fitted parameters."""
        check_is_fitted(self, "theta_")
        obs = _as_observations(X, self.t_end)
        return float(quasi_loglik(self.model_, self.theta_, obs, self._check_beta()))


class StablePosteriorSampler(_ModelParamsMixin, BaseEstimator):
    """Posterior sampler for a stable-driven SDE (Gibbs or correlated joint moves).

    Parameters
    ----------
    drift, scale, alpha, gamma, bounds, beta, t_end
        As in :class:`StableQuasiMLE`.
    iterations : int
        Chain length (including the initial state).
    variant : str
        ``"mwg"`` for variance-refreshing Gibbs moves, ``"cpm"`` for
        correlated joint moves.
    rho : float or None
        Autoregressive correlation of the variance proposal (cpm only).
    prior : str
        ``"normal"`` or ``"uniform"`` over the model box.
    prior_mean, prior_sd : array-like or None
        Moments of the normal prior; default standard normal.
    proposal_scale : float
        Multiplier on the default (2.38^2 / p) I proposal covariance.
    scale_by_rate : bool
        Premultiply innovations by the inverse rate matrix.
    init : str
        Starting point: ``"center"`` of the box or ``"mle"``.
    burn_in : int
        Draws dropped before computing posterior summaries.
    seed : int
        Chain seed; fixed seeds give bit-identical traces.

    Attributes
    ----------
    model_ : ModelSpec
    trace_ : ChainTrace
    thetas_ : ndarray of shape (iterations, p)
    acceptance_rate_ : float
    posterior_mean_, posterior_sd_ : ndarray of shape (p,)
    """

    def __init__(
        self,
        drift="0",
        scale="g",
        alpha=(),
        gamma=("g",),
        bounds=None,
        beta=1.5,
        t_end=1.0,
        iterations=1000,
        variant="mwg",
        rho=None,
        prior="normal",
        prior_mean=None,
        prior_sd=None,
        proposal_scale=1.0,
        scale_by_rate=True,
        init="center",
        burn_in=0,
        seed=0,
    ):
        self.drift = drift
        self.scale = scale
        self.alpha = alpha
        self.gamma = gamma
        self.bounds = bounds
        self.beta = beta
        self.t_end = t_end
        self.iterations = iterations
        self.variant = variant
        self.rho = rho
        self.prior = prior
        self.prior_mean = prior_mean
        self.prior_sd = prior_sd
        self.proposal_scale = proposal_scale
        self.scale_by_rate = scale_by_rate
        self.init = init
        self.burn_in = burn_in
        self.seed = seed

    def _build_prior(self, p: int) -> PriorSpec:
        if self.prior == "uniform":
            return PriorSpec.uniform(p)
        if self.prior != "normal":
            raise ValueError("prior must be 'normal' or 'uniform'")
        mean = self.prior_mean if self.prior_mean is not None else np.zeros(p)
        sd = self.prior_sd if self.prior_sd is not None else np.ones(p)
        return PriorSpec.normal(np.broadcast_to(mean, p), np.broadcast_to(sd, p))

    def fit(self, X, y=None):
        model = self._build_model()
        beta = self._check_beta()
        obs = _as_observations(X, self.t_end)
        scale = float(self.proposal_scale)
        if scale <= 0:
            raise ValueError("proposal_scale must be positive")
        cov = None if scale == 1.0 else scale * (_RW_SCALE / model.dim) * np.eye(model.dim)
        config = MCMCConfig(
            iterations=int(self.iterations),
            proposal_cov=cov,
            seed=int(self.seed),
            variant=self.variant,
            rho=self.rho,
            scale_by_rate=bool(self.scale_by_rate),
        )
        if self.init == "center":
            start = model.box_center()
        elif self.init == "mle":
            start = quasi_mle(model, obs, beta).theta
        else:
            raise ValueError("init must be 'center' or 'mle'")
        trace = run_chain(model, obs, beta, self._build_prior(model.dim), config, start)
        burn = int(self.burn_in)
        if not 0 <= burn <= trace.thetas.shape[0] - 2:
            raise ValueError("burn_in must leave at least 2 draws")
        kept = trace.thetas[burn:]
        self.model_ = model
        self.trace_ = trace
        self.thetas_ = trace.thetas
        self.acceptance_rate_ = float(trace.acceptance_rate)
        self.posterior_mean_ = kept.mean(axis=0)
        self.posterior_sd_ = kept.std(axis=0, ddof=1)
        return self
