"""Stable quasi-likelihood: residuals, scores, information, and the MLE.

For an observation record X_0..X_N with step h, the scaled residuals

    eps_n(theta) = (X_{nh} - X_{(n-1)h} - a(X_{(n-1)h}) h) / (c(X_{(n-1)h}) h^{1/beta})

are iid standard stable draws when theta is the generating parameter.
The quasi log-likelihood sums -log c + log phi_beta(eps); its score,
rate matrix, and the three information matrices (marginal I, complete
I_dag, and their gap I_star = I_dag - I) drive both the optimizer and
the samplers.  The complete-likelihood ratio used by the Gibbs sampler
is Gaussian given the auxiliary variances and never evaluates phi_beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import ModelViolationError
from .expressions import ModelSpec, ThetaVector, diff_expr, eval_expr
from .simulate import ObservationSet
from .stable import QuadratureConfig, fisher_constants, stable_pdf, stable_scores

__all__ = [
    "PathTerms",
    "QuasiInfo",
    "MLEResult",
    "OptimizerConfig",
    "residuals",
    "path_terms",
    "quasi_loglik",
    "complete_loglik_ratio",
    "complete_ratio_from_terms",
    "rate_matrix",
    "quasi_score",
    "fisher_info",
    "maximize_box",
    "quasi_mle",
]


@dataclass(frozen=True)
class PathTerms:
    """Per-interval quantities entering every likelihood formula.

    eps are the scaled residuals, log_scale the values log c(X_{(n-1)h}).
    """

    eps: np.ndarray
    log_scale: np.ndarray


def _coefficients(model: ModelSpec, theta: ThetaVector, obs: ObservationSet):
    prev = obs.values[:-1]
    a = np.broadcast_to(np.asarray(model.drift_at(theta, prev), dtype=float), prev.shape)
    c = np.broadcast_to(np.asarray(model.scale_at(theta, prev), dtype=float), prev.shape)
    bad = ~(np.isfinite(c) & (c > 0.0))
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise ModelViolationError(
            f"scale coefficient is not strictly positive at state {prev[idx]!r}",
            index=idx,
        )
    if not np.all(np.isfinite(a)):
        idx = int(np.flatnonzero(~np.isfinite(a))[0])
        raise ModelViolationError(
            f"drift coefficient is not finite at state {prev[idx]!r}", index=idx
        )
    return a, c


def residuals(model: ModelSpec, theta: ThetaVector, obs: ObservationSet, beta: float) -> np.ndarray:
    """Scaled one-step residuals eps_n(theta), length N.

    Raises
    ------
    ModelViolationError
        If the scale coefficient fails strict positivity at some state
        (the error carries the observation index).
    """
    a, c = _coefficients(model, theta, obs)
    h = obs.step
    return (obs.increments() - a * h) / (c * h ** (1.0 / beta))


def path_terms(model: ModelSpec, theta: ThetaVector, obs: ObservationSet, beta: float) -> PathTerms:
    """Residuals and log-scales in one pass; used to cache chain state."""
    a, c = _coefficients(model, theta, obs)
    h = obs.step
    eps = (obs.increments() - a * h) / (c * h ** (1.0 / beta))
    return PathTerms(eps=eps, log_scale=np.log(c))


def quasi_loglik(
    model: ModelSpec,
    theta: ThetaVector,
    obs: ObservationSet,
    beta: float,
    quad: QuadratureConfig | None = None,
    include_step_constant: bool = False,
) -> float:
    """Stable quasi log-likelihood sum(-log c + log phi_beta(eps)).

    The theta-free constant -(N/beta) log h is omitted by default, so
    values are comparable across theta but not across step sizes;
    ``include_step_constant=True`` adds it back.
    """
    terms = path_terms(model, theta, obs, beta)
    pdf = stable_pdf(terms.eps, beta, quad)
    with np.errstate(divide="ignore"):
        ll = float(np.sum(np.log(pdf)) - np.sum(terms.log_scale))
    if include_step_constant:
        ll -= terms.eps.size / beta * math.log(obs.step)
    return ll


def complete_ratio_from_terms(cur: PathTerms, prop: PathTerms, variances: np.ndarray) -> float:
    """Complete log-likelihood ratio (proposed minus current) given V.

    Equals sum(log c - log c*) + 0.5 sum((eps^2 - eps*^2)/V); the
    variance-law factors shared by the two complete likelihoods cancel
    and are never evaluated.
    """
    return float(
        np.sum(cur.log_scale - prop.log_scale)
        + 0.5 * np.sum((cur.eps**2 - prop.eps**2) / variances)
    )


def complete_loglik_ratio(
    model: ModelSpec,
    theta: ThetaVector,
    theta_star: ThetaVector,
    obs: ObservationSet,
    variances,
    beta: float,
) -> float:
    """Log of the complete-likelihood ratio at theta_star versus theta."""
    variances = np.asarray(variances, dtype=float)
    if variances.shape != (obs.n_increments,):
        raise ValueError("variances must have one entry per increment")
    if not np.all(variances > 0.0):
        raise ValueError("variances must be strictly positive")
    cur = path_terms(model, theta, obs, beta)
    prop = path_terms(model, theta_star, obs, beta)
    return complete_ratio_from_terms(cur, prop, variances)


def rate_matrix(n_increments: int, h: float, beta: float, p_alpha: int, p_gamma: int) -> np.ndarray:
    """Diagonal localization rates diag(sqrt(N) h^{1-1/beta}, ..., sqrt(N), ...).

    The drift block carries the extra h^{1-1/beta} factor (equal to one
    at beta = 1); the scale block scales at sqrt(N) alone.
    """
    if n_increments < 1:
        raise ValueError("n_increments must be >= 1")
    if not h > 0:
        raise ValueError("h must be positive")
    root_n = math.sqrt(n_increments)
    diag = np.concatenate(
        [
            np.full(p_alpha, root_n * h ** (1.0 - 1.0 / beta)),
            np.full(p_gamma, root_n),
        ]
    )
    return np.diag(diag)


def _gradient_values(exprs, model: ModelSpec, theta: ThetaVector, x: np.ndarray) -> np.ndarray:
    bindings = model.bindings(theta, x)
    rows = [
        np.broadcast_to(np.asarray(eval_expr(e, bindings), dtype=float), x.shape)
        for e in exprs
    ]
    return np.array(rows) if rows else np.empty((0, x.size))


def _drift_grad(model: ModelSpec):
    return [diff_expr(model.drift, n) for n in model.alpha_names]


def _scale_grad(model: ModelSpec):
    return [diff_expr(model.scale, n) for n in model.gamma_names]


def quasi_score(
    model: ModelSpec,
    theta: ThetaVector,
    obs: ObservationSet,
    beta: float,
    quad: QuadratureConfig | None = None,
):
    """Gradient of the quasi log-likelihood and its rate-scaled form.

    Returns
    -------
    score : ndarray, shape (p,)
        Drift block -h^{1-1/beta} sum g(eps) da/c, scale block
        -sum (1 + eps g(eps)) dc/c.
    delta : ndarray, shape (p,)
        D_N^{-1} score, the localized score entering the limit theory.
    """
    a, c = _coefficients(model, theta, obs)
    h = obs.step
    eps = (obs.increments() - a * h) / (c * h ** (1.0 / beta))
    g, _ = stable_scores(eps, beta, quad)
    prev = obs.values[:-1]

    da = _gradient_values(_drift_grad(model), model, theta, prev)
    dc = _gradient_values(_scale_grad(model), model, theta, prev)
    score_alpha = -(h ** (1.0 - 1.0 / beta)) * (da / c) @ g
    score_gamma = -(dc / c) @ (1.0 + eps * g)
    score = np.concatenate([score_alpha, score_gamma])

    n = obs.n_increments
    rates = np.concatenate(
        [
            np.full(model.p_alpha, math.sqrt(n) * h ** (1.0 - 1.0 / beta)),
            np.full(model.p_gamma, math.sqrt(n)),
        ]
    )
    return score, score / rates


@dataclass(frozen=True)
class QuasiInfo:
    """Rate matrix, localized score, and the three information matrices.

    I is the quasi-likelihood information, I_dag its complete-data
    counterpart, and I_star = I_dag - I >= 0 the augmentation gap.  All
    three are block diagonal across the drift and scale blocks.
    """

    D_N: np.ndarray
    Delta_N: np.ndarray
    I: np.ndarray
    I_dag: np.ndarray
    I_star: np.ndarray


def fisher_info(
    model: ModelSpec,
    theta: ThetaVector,
    obs: ObservationSet,
    beta: float,
    quad: QuadratureConfig | None = None,
) -> QuasiInfo:
    """Empirical information matrices along the observed path.

    The block integrals are left-endpoint Riemann sums over the
    observation grid: (1/T) sum h (da)(da)^T / c^2 for the drift block
    and (1/T) sum h (dc)(dc)^T / c^2 for the scale block, multiplied by
    the stable information constants of each likelihood flavor.
    """
    a, c = _coefficients(model, theta, obs)
    h = obs.step
    t_end = obs.t_end
    prev = obs.values[:-1]
    da = _gradient_values(_drift_grad(model), model, theta, prev)
    dc = _gradient_values(_scale_grad(model), model, theta, prev)

    w = h / t_end / c**2
    sigma_alpha = (da * w) @ da.T
    sigma_gamma = (dc * w) @ dc.T

    k = fisher_constants(beta, quad)
    p = model.dim

    def blocks(const_alpha, const_gamma):
        m = np.zeros((p, p))
        m[: model.p_alpha, : model.p_alpha] = const_alpha * sigma_alpha
        m[model.p_alpha :, model.p_alpha :] = const_gamma * sigma_gamma
        return m

    info = blocks(k.c_alpha, k.c_gamma)
    info_dag = blocks(k.c_alpha_dagger, k.c_gamma_dagger)
    _, delta = quasi_score(model, theta, obs, beta, quad)
    return QuasiInfo(
        D_N=rate_matrix(obs.n_increments, h, beta, model.p_alpha, model.p_gamma),
        Delta_N=delta,
        I=info,
        I_dag=info_dag,
        I_star=info_dag - info,
    )


@dataclass(frozen=True)
class OptimizerConfig:
    """Nelder-Mead controls for the box-constrained maximizer."""

    max_iter: int = 2000
    xatol: float = 1e-8
    fatol: float = 1e-10
    restarts: int = 3
    boundary_tol: float = 1e-6
    seed: int = 0


@dataclass(frozen=True)
class MLEResult:
    theta: ThetaVector
    loglik: float
    converged: bool
    n_iter: int = field(default=0, compare=False)


def _fold_into_box(z: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    # Triangle-wave reflection maps the whole line into [lo, hi] so the
    # unconstrained simplex can never step outside the box.
    width = hi - lo
    t = np.mod(z - lo, 2.0 * width)
    return np.where(t < width, lo + t, hi - (t - width))


def maximize_box(fun, x0, bounds, opt: OptimizerConfig | None = None):
    """Maximize a function over a box via reflected Nelder-Mead.

    Parameters
    ----------
    fun : callable
        Objective mapping a parameter vector inside the box to a float;
        may return -inf for degenerate points.
    x0 : array-like
        Starting point, inside the box.
    bounds : sequence of (low, high)
        Finite box, one pair per coordinate.
    opt : OptimizerConfig, optional

    Returns
    -------
    (x_best, f_best, converged, n_iter)
        Restarts from perturbed starts when a maximizer sticks to the
        boundary; the best vertex over all runs is returned.
    """
    if opt is None:
        opt = OptimizerConfig()
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ValueError("starting point must lie inside the box")
    rng = np.random.default_rng(opt.seed)

    def neg(z):
        return -fun(_fold_into_box(z, lo, hi))

    best = (None, -np.inf, False, 0)
    start = x0
    for attempt in range(opt.restarts + 1):
        res = optimize.minimize(
            neg,
            start,
            method="Nelder-Mead",
            options={
                "maxiter": opt.max_iter,
                "xatol": opt.xatol,
                "fatol": opt.fatol,
            },
        )
        x = _fold_into_box(res.x, lo, hi)
        value = -res.fun
        if value > best[1]:
            best = (x, value, bool(res.success), int(res.nit))
        at_edge = np.any(
            (x - lo < opt.boundary_tol * (hi - lo))
            | (hi - x < opt.boundary_tol * (hi - lo))
        )
        if not at_edge:
            break
        # Stuck on the boundary: retry from a jittered interior point.
        start = lo + (hi - lo) * (0.25 + 0.5 * rng.random(lo.size))
    return best


def quasi_mle(
    model: ModelSpec,
    obs: ObservationSet,
    beta: float,
    init: ThetaVector | None = None,
    opt: OptimizerConfig | None = None,
    quad: QuadratureConfig | None = None,
) -> MLEResult:
    """Maximize the quasi log-likelihood over the model box.

    Starts from ``init`` (box center by default); points where the
    model degenerates inside the box score -inf rather than raising.
    """
    if init is None:
        init = model.box_center()
    if not model.in_bounds(init):
        raise ValueError("init lies outside the model bounds")

    def objective(vec):
        try:
            return quasi_loglik(model, model.split(vec), obs, beta, quad)
        except ModelViolationError:
            return -np.inf

    bounds = [model.bounds[n] for n in model.names]
    x, value, converged, n_iter = maximize_box(objective, init.full, bounds, opt)
    return MLEResult(
        theta=model.split(x), loglik=value, converged=converged, n_iter=n_iter
    )
