"""Metropolis-within-Gibbs and correlated pseudo-marginal samplers.

Both chains target the quasi-posterior built from the stable
quasi-likelihood by augmenting each increment with a latent variance
V_n, under which the complete likelihood is Gaussian.  One sweep of the
Gibbs sampler refreshes every V_n from its exact conditional law given
the current residual, then moves theta by a random-walk step scaled by
the inverse rate matrix and accepts with the Gaussian-part ratio; no
stable density is evaluated anywhere in the loop.  The correlated
variant proposes (theta*, V*) jointly, with V* an autoregressive
perturbation of V that preserves the variance law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, SamplerStallError
from .expressions import ModelSpec, ThetaVector
from .quasi import PathTerms, complete_ratio_from_terms, path_terms, rate_matrix
from .simulate import ObservationSet
from .stable import (
    ConditionalVarianceSampler,
    sample_conditional_variances,
    sample_positive_stable,
)

__all__ = [
    "PriorSpec",
    "MCMCConfig",
    "ChainState",
    "ChainTrace",
    "gibbs_refresh_variances",
    "acceptance_log_ratio",
    "cpm_acceptance_log_ratio",
    "mwg_step",
    "run_mwg",
    "cpm_variance_update",
    "run_cpm",
    "run_chain",
]

_LOG_2PI = math.log(2.0 * math.pi)


class PriorSpec:
    """Independent product prior, one factor per parameter.

    Each entry is ``("normal", mean, sd)`` or ``("uniform",)``; uniform
    factors spread over the model box, so their density is constant and
    positive on it.  Out-of-box states carry zero prior mass and are
    handled by the samplers, not here.
    """

    def __init__(self, entries):
        parsed = []
        for e in entries:
            e = tuple(e)
            if e[0] == "normal":
                if len(e) != 3 or not e[2] > 0:
                    raise ValueError("normal prior entries are ('normal', mean, sd>0)")
                parsed.append(("normal", float(e[1]), float(e[2])))
            elif e[0] == "uniform":
                if len(e) != 1:
                    raise ValueError("uniform prior entries are ('uniform',)")
                parsed.append(("uniform",))
            else:
                raise ValueError(f"unknown prior kind {e[0]!r}")
        if not parsed:
            raise ValueError("prior needs at least one factor")
        self.entries = tuple(parsed)

    @classmethod
    def standard_normal(cls, p: int) -> "PriorSpec":
        return cls([("normal", 0.0, 1.0)] * p)

    @classmethod
    def normal(cls, means, sds) -> "PriorSpec":
        return cls([("normal", m, s) for m, s in zip(means, sds, strict=True)])

    @classmethod
    def uniform(cls, p: int) -> "PriorSpec":
        return cls([("uniform",)] * p)

    def __len__(self):
        return len(self.entries)

    def log_density(self, theta: ThetaVector, model: ModelSpec) -> float:
        """Log prior density at an in-box point."""
        vec = theta.full
        if vec.size != len(self.entries):
            raise ValueError("prior and parameter dimensions differ")
        total = 0.0
        for value, entry, name in zip(vec, self.entries, model.names):
            if entry[0] == "normal":
                _, mean, sd = entry
                z = (value - mean) / sd
                total += -0.5 * z * z - math.log(sd) - 0.5 * _LOG_2PI
            else:
                lo, hi = model.bounds[name]
                total += -math.log(hi - lo)
        return total

    def __eq__(self, other):
        return isinstance(other, PriorSpec) and self.entries == other.entries

    def __repr__(self):
        return f"PriorSpec({list(self.entries)!r})"


@dataclass(frozen=True, eq=False)
class MCMCConfig:
    """Chain length, proposal shape, and variant selection.

    proposal_cov defaults to (2.38^2/p) I, the standard random-walk
    scaling; with ``scale_by_rate`` the innovation is premultiplied by
    the inverse rate matrix so step sizes track the localization rates.
    ``rho`` in [0, 1] controls the correlated variance proposal and is
    required for the cpm variant (rho = 1 keeps V, rho = 0 refreshes).
    """

    iterations: int
    proposal_cov: np.ndarray | None = None
    seed: int = 0
    variant: str = "mwg"
    rho: float | None = None
    record_variances: bool = False
    scale_by_rate: bool = True
    variance_sampler: ConditionalVarianceSampler | None = None

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 2:
            raise ValueError("iterations must be an integer >= 2")
        if self.variant not in ("mwg", "cpm"):
            raise ValueError("variant must be 'mwg' or 'cpm'")
        if self.variant == "cpm":
            if self.rho is None:
                raise ValueError("the cpm variant requires rho")
        if self.rho is not None and not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.proposal_cov is not None:
            cov = np.asarray(self.proposal_cov, dtype=float)
            if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
                raise ValueError("proposal_cov must be a square matrix")
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise ValueError("proposal_cov must be symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValueError("proposal_cov must be positive definite") from None
            object.__setattr__(self, "proposal_cov", cov)


@dataclass(frozen=True)
class ChainState:
    """Current theta, auxiliary variances, and cached path terms."""

    theta: ThetaVector
    variances: np.ndarray
    terms: PathTerms

    @property
    def log_complete(self) -> float:
        """Complete log-likelihood -sum log c - (1/2) sum eps^2/V up to
        theta-free terms."""
        return float(
            -np.sum(self.terms.log_scale)
            - 0.5 * np.sum(self.terms.eps**2 / self.variances)
        )


@dataclass(frozen=True, eq=False)
class ChainTrace:
    """Recorded parameter path and acceptance history.

    thetas has one row per iteration including the initial point;
    accept_flags has one entry per attempted move.
    """

    thetas: np.ndarray
    accept_flags: np.ndarray
    seed: int
    config: MCMCConfig
    variances: np.ndarray | None = None

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accept_flags))

    @property
    def n_iterations(self) -> int:
        return self.thetas.shape[0]


def gibbs_refresh_variances(
    model: ModelSpec,
    theta: ThetaVector,
    obs: ObservationSet,
    beta: float,
    sampler: ConditionalVarianceSampler | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Draw V_n from the conditional variance law at eps_n(theta), iid over n."""
    if sampler is None:
        sampler = ConditionalVarianceSampler(beta=beta)
    if rng is None:
        rng = np.random.default_rng()
    terms = path_terms(model, theta, obs, beta)
    return sample_conditional_variances(terms.eps, sampler, rng)


def acceptance_log_ratio(
    cur: PathTerms, prop: PathTerms, variances: np.ndarray, prior_log_ratio: float
) -> float:
    """Log Metropolis ratio of the Gibbs sampler at shared variances."""
    return complete_ratio_from_terms(cur, prop, variances) + prior_log_ratio


def cpm_acceptance_log_ratio(
    cur: PathTerms,
    prop: PathTerms,
    v_cur: np.ndarray,
    v_prop: np.ndarray,
    prior_log_ratio: float,
) -> float:
    """Log ratio of the joint (theta, V) move.

    Relative to the shared-variance ratio this gains the Gaussian
    normalizer term (1/2) sum (log V - log V*); the variance-law
    density factors cancel against the reversible variance kernel and
    are never computed.
    """
    return float(
        np.sum(cur.log_scale - prop.log_scale)
        + 0.5 * np.sum(cur.eps**2 / v_cur - prop.eps**2 / v_prop)
        + 0.5 * np.sum(np.log(v_cur) - np.log(v_prop))
        + prior_log_ratio
    )


def cpm_variance_update(variances, rho: float, beta: float, rng: np.random.Generator) -> np.ndarray:
    """Autoregressive variance proposal rho^{2/beta} V + (1-rho)^{2/beta} xi.

    xi is a fresh draw from the positive stable variance law; the
    weights are chosen so the update leaves that law invariant.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    variances = np.asarray(variances, dtype=float)
    xi = sample_positive_stable(beta, variances.size, rng)
    return rho ** (2.0 / beta) * variances + (1.0 - rho) ** (2.0 / beta) * xi


class _Kernel:
    """Precomputed pieces shared by every iteration of one chain."""

    def __init__(self, model, obs, beta, prior, config):
        if len(prior) != model.dim:
            raise ValueError("prior and model dimensions differ")
        self.model = model
        self.obs = obs
        self.beta = beta
        self.prior = prior
        self.config = config
        p = model.dim
        cov = config.proposal_cov
        if cov is None:
            cov = (2.38**2 / p) * np.eye(p)
        if cov.shape != (p, p):
            raise ValueError("proposal_cov does not match the parameter dimension")
        self.chol = np.linalg.cholesky(cov)
        if config.scale_by_rate:
            d = np.diag(rate_matrix(obs.n_increments, obs.step, beta, model.p_alpha, model.p_gamma))
            self.step_scale = 1.0 / d
        else:
            self.step_scale = np.ones(p)
        self.sampler = config.variance_sampler or ConditionalVarianceSampler(beta=beta)
        self.lo = np.array([model.bounds[n][0] for n in model.names])
        self.hi = np.array([model.bounds[n][1] for n in model.names])

    def initial_state(self, init: ThetaVector, rng) -> ChainState:
        terms = path_terms(self.model, init, self.obs, self.beta)
        v = sample_conditional_variances(terms.eps, self.sampler, rng)
        return ChainState(theta=init, variances=v, terms=terms)

    def _propose(self, theta: ThetaVector, rng):
        w = self.chol @ rng.standard_normal(theta.full.size)
        vec = theta.full + self.step_scale * w
        return vec

    def _evaluate(self, vec):
        """Path terms and log prior at an in-box proposal; None if the
        model degenerates there."""
        theta_star = self.model.split(vec)
        try:
            prop = path_terms(self.model, theta_star, self.obs, self.beta)
        except NumericalError:  # scale death inside the box => zero mass
            return None
        return theta_star, prop

    def step(self, state: ChainState, rng):
        if self.config.variant == "mwg":
            variances = sample_conditional_variances(state.terms.eps, self.sampler, rng)
            v_prop = variances
        else:
            variances = state.variances
            v_prop = cpm_variance_update(variances, self.config.rho, self.beta, rng)
        vec = self._propose(state.theta, rng)
        u = rng.random()

        in_box = bool(np.all(vec >= self.lo) and np.all(vec <= self.hi))
        evaluated = self._evaluate(vec) if in_box else None
        if evaluated is None:
            if self.config.variant == "mwg":
                # The refreshed variances stand regardless of the move.
                state = ChainState(state.theta, variances, state.terms)
            return state, False, variances

        theta_star, prop = evaluated
        prior_log_ratio = self.prior.log_density(theta_star, self.model) - self.prior.log_density(
            state.theta, self.model
        )
        if self.config.variant == "mwg":
            log_ratio = acceptance_log_ratio(state.terms, prop, variances, prior_log_ratio)
        else:
            log_ratio = cpm_acceptance_log_ratio(
                state.terms, prop, variances, v_prop, prior_log_ratio
            )
        accept = math.log(u) < log_ratio
        if accept:
            state = ChainState(theta_star, v_prop, prop)
        elif self.config.variant == "mwg":
            state = ChainState(state.theta, variances, state.terms)
        # cpm rejection retains both theta and V.
        return state, accept, variances


def mwg_step(
    state: ChainState,
    model: ModelSpec,
    obs: ObservationSet,
    beta: float,
    prior: PriorSpec,
    config: MCMCConfig,
    rng: np.random.Generator,
):
    """One Gibbs sweep: variance refresh, theta proposal, accept/reject.

    Returns (new_state, accepted).  Exactly one uniform decision draw
    is consumed per call, after the variance refresh and the Gaussian
    innovation.
    """
    kernel = _Kernel(model, obs, beta, prior, config)
    new_state, accepted, _ = kernel.step(state, rng)
    return new_state, accepted


def _run(model, obs, beta, prior, config, init, rng):
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if not model.in_bounds(init):
        raise ValueError("init lies outside the model bounds")
    kernel = _Kernel(model, obs, beta, prior, config)
    m = int(config.iterations)
    thetas = np.empty((m, model.dim))
    flags = np.zeros(m - 1, dtype=bool)
    recorded = np.empty((m - 1, obs.n_increments)) if config.record_variances else None

    try:
        state = kernel.initial_state(init, rng)
    except SamplerStallError as exc:
        raise SamplerStallError(exc.x, exc.attempts, iteration=0) from exc
    thetas[0] = init.full
    for it in range(1, m):
        try:
            state, accepted, variances = kernel.step(state, rng)
        except SamplerStallError as exc:
            raise SamplerStallError(exc.x, exc.attempts, iteration=it) from exc
        thetas[it] = state.theta.full
        flags[it - 1] = accepted
        if recorded is not None:
            recorded[it - 1] = variances
    return ChainTrace(
        thetas=thetas,
        accept_flags=flags,
        seed=config.seed,
        config=config,
        variances=recorded,
    )


def run_mwg(
    model: ModelSpec,
    obs: ObservationSet,
    beta: float,
    prior: PriorSpec,
    config: MCMCConfig,
    init: ThetaVector,
    rng: np.random.Generator | None = None,
) -> ChainTrace:
    """Run the Metropolis-within-Gibbs chain for config.iterations steps."""
    if config.variant != "mwg":
        raise ValueError("config.variant must be 'mwg'")
    return _run(model, obs, beta, prior, config, init, rng)


def run_cpm(
    model: ModelSpec,
    obs: ObservationSet,
    beta: float,
    prior: PriorSpec,
    config: MCMCConfig,
    init: ThetaVector,
    rng: np.random.Generator | None = None,
) -> ChainTrace:
    """Run the correlated pseudo-marginal chain (joint theta, V moves)."""
    if config.variant != "cpm":
        raise ValueError("config.variant must be 'cpm'")
    return _run(model, obs, beta, prior, config, init, rng)


def run_chain(model, obs, beta, prior, config, init, rng=None) -> ChainTrace:
    """Dispatch on config.variant."""
    if config.variant == "mwg":
        return run_mwg(model, obs, beta, prior, config, init, rng)
    return run_cpm(model, obs, beta, prior, config, init, rng)
