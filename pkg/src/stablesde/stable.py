"""Numerics for the symmetric beta-stable law with exponent in [1, 2).

The standard symmetric beta-stable density ``phi_beta`` is fixed by its
characteristic function ``exp(-|u|**beta)``.  This module provides

* density, CDF and log-density score functions computed by oscillatory
  cosine/sine-transform quadrature with an asymptotic power series for
  the far tail,
* exact samplers for the symmetric law and for the positive
  (beta/2)-stable variance law of its normal variance-mixture
  representation,
* a rejection sampler for the variance law conditioned on an observed
  value, and
* the information constants that govern large-sample behaviour of
  stable quasi-likelihoods.

All functions are pure given their arguments; node tables and constants
are memoized on (beta, quadrature config), so repeated calls are cheap.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .errors import QuadratureError, SamplerStallError

__all__ = [
    "QuadratureConfig",
    "FisherConstants",
    "ConditionalVarianceSampler",
    "stable_pdf",
    "stable_cdf",
    "stable_scores",
    "stable_quantile",
    "sample_symmetric_stable",
    "sample_positive_stable",
    "sample_conditional_variance",
    "sample_conditional_variances",
    "conditional_accept_prob",
    "fisher_constants",
]

_CHUNK = 1024  # x-values per evaluation block, keeps temporaries ~30 MB
_SERIES_KMAX = 40


@dataclass(frozen=True)
class QuadratureConfig:
    """Accuracy knobs for the stable-density quadrature.

    Parameters
    ----------
    abs_tol, rel_tol : float
        Target absolute and relative accuracy of the quadrature branch.
    tail_switch : float
        |x| beyond which the asymptotic tail series replaces quadrature.
        The series is truncated at its smallest term, which at the
        default switch point bounds the error near 1e-10 absolute.
    max_nodes : int
        Budget for quadrature nodes; refinement past this raises
        :class:`~stablesde.errors.QuadratureError`.
    """

    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    tail_switch: float = 10.0
    max_nodes: int = 65536

    def __post_init__(self):
        if not (self.abs_tol > 0.0 and self.rel_tol > 0.0):
            raise ValueError("quadrature tolerances must be positive")
        if self.tail_switch <= 0.0:
            raise ValueError("tail_switch must be positive")
        if self.max_nodes < 16:
            raise ValueError("max_nodes must be at least 16")


_DEFAULT_QUAD = QuadratureConfig()


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not (1.0 <= beta < 2.0) or not math.isfinite(beta):
        raise ValueError(f"beta must lie in [1, 2), got {beta!r}")
    return beta


def _as_array(x, name: str = "x") -> tuple[np.ndarray, bool, tuple]:
    arr = np.asarray(x, dtype=float)
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return np.atleast_1d(arr).ravel(), arr.ndim == 0, arr.shape


# ---------------------------------------------------------------------------
# Quadrature node tables.
#
# phi_beta(x)  = (1/pi) int_0^inf exp(-t^beta) cos(tx) dt
# phi'         = -(1/pi) int t   exp(-t^beta) sin(tx) dt
# phi''        = -(1/pi) int t^2 exp(-t^beta) cos(tx) dt
# F(x) - 1/2   = (1/pi) intexp(-t^beta) sin(tx)/t dt
#
# The t-axis is cut at t_star where the envelope is below tolerance,
# split into half-oscillation panels sized for the largest |x| served
# by the table, and the first panel is geometrically graded toward 0 to
# absorb the t^beta branch point.  Gauss-Legendre rules per panel.
# ---------------------------------------------------------------------------


class _NodeTable:
    __slots__ = ("t", "w_pdf", "w_cdf", "w_d1", "w_d2")

    def __init__(self, t, env_w):
        self.t = t
        self.w_pdf = env_w
        self.w_cdf = env_w / t
        self.w_d1 = env_w * t
        self.w_d2 = env_w * t * t


def _panel_nodes(edges: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    ref_x, ref_w = np.polynomial.legendre.leggauss(order)
    lo, hi = edges[:-1], edges[1:]
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    t = (mid[:, None] + half[:, None] * ref_x[None, :]).ravel()
    w = (half[:, None] * ref_w[None, :]).ravel()
    return t, w


def _make_table(beta: float, x_cap: float, abs_tol: float, level: int) -> _NodeTable:
    # Envelope cut: exp(-t_star^beta) small enough that the neglected
    # tail of every weighted integrand stays below abs_tol.
    big_l = math.log(1.0 / abs_tol) + 12.0
    t_star = big_l ** (1.0 / beta)
    delta = math.pi / (2.0 * max(x_cap, 1.0)) / (2.0**level)
    t_min = abs_tol * 1e-2
    n_graded = max(1, math.ceil(math.log2(delta / t_min)))
    graded_edges = delta * 2.0 ** np.arange(-n_graded, 1.0)
    g_t, g_w = _panel_nodes(graded_edges, 8)
    n_reg = math.ceil((t_star - delta) / delta)
    reg_edges = delta * (1.0 + np.arange(n_reg + 1.0))
    r_t, r_w = _panel_nodes(reg_edges, 8)
    t = np.concatenate([g_t, r_t])
    w = np.concatenate([g_w, r_w])
    env_w = w * np.exp(-(t**beta)) / math.pi
    return _NodeTable(t, env_w)


def _table_eval(table: _NodeTable, xa: np.ndarray, kinds: tuple[str, ...]) -> dict:
    """Weighted oscillatory sums for |x| values xa (all within the table cap)."""
    out = {k: np.empty_like(xa) for k in kinds}
    need_cos = ("pdf" in kinds) or ("d2" in kinds)
    need_sin = ("cdf" in kinds) or ("d1" in kinds)
    t = table.t
    for start in range(0, xa.size, _CHUNK):
        xc = xa[start : start + _CHUNK]
        sl = slice(start, start + xc.size)
        phase = xc[:, None] * t[None, :]
        if need_cos:
            cmat = np.cos(phase)
            if "pdf" in kinds:
                out["pdf"][sl] = cmat @ table.w_pdf
            if "d2" in kinds:
                out["d2"][sl] = -(cmat @ table.w_d2)
        if need_sin:
            smat = np.sin(phase)
            if "cdf" in kinds:
                out["cdf"][sl] = smat @ table.w_cdf
            if "d1" in kinds:
                out["d1"][sl] = -(smat @ table.w_d1)
    return out


_ALL_KINDS = ("pdf", "cdf", "d1", "d2")


@functools.lru_cache(maxsize=None)
def _validated_table(beta: float, x_cap: float, quad: QuadratureConfig) -> _NodeTable:
    """Build a node table and refine it until two levels agree on probes."""
    probes = np.linspace(0.0, x_cap, 33)
    level = 0
    worst = math.inf
    while True:
        fine = _make_table(beta, x_cap, quad.abs_tol, level + 1)
        if fine.t.size > quad.max_nodes:
            raise QuadratureError(
                f"stable-law quadrature did not converge within "
                f"{quad.max_nodes} nodes (beta={beta}, x_cap={x_cap})",
                achieved_error=worst,
            )
        coarse = _make_table(beta, x_cap, quad.abs_tol, level)
        ref = _table_eval(fine, probes, _ALL_KINDS)
        base = _table_eval(coarse, probes, _ALL_KINDS)
        worst = 0.0
        converged = True
        for k in _ALL_KINDS:
            err = np.abs(ref[k] - base[k])
            tol = quad.abs_tol + quad.rel_tol * np.abs(ref[k])
            worst = max(worst, float(np.max(err)))
            if np.any(err > tol):
                converged = False
        if converged:
            return fine
        level += 1


def _bucket_caps(quad: QuadratureConfig) -> list[float]:
    caps = [c for c in (1.0, 3.0) if c < quad.tail_switch]
    caps.append(quad.tail_switch)
    return caps


# ---------------------------------------------------------------------------
# Asymptotic tail series (Bergstrom expansion), truncated at the
# smallest term.  Valid for |x| above the configured switch point.
# ---------------------------------------------------------------------------


def _tail_eval(y: np.ndarray, beta: float, kinds: tuple[str, ...]) -> dict:
    k = np.arange(1.0, _SERIES_KMAX + 1.0)
    log_coef = special.gammaln(k * beta + 1.0) - special.gammaln(k + 1.0)
    sign = (-1.0) ** (k + 1.0) * np.sin(k * np.pi * beta / 2.0) / np.pi
    log_y = np.log(y)
    # Envelope magnitudes decide the per-x truncation index.
    log_env = log_coef[:, None] - (k * beta + 1.0)[:, None] * log_y[None, :]
    grows = log_env[1:] >= log_env[:-1]
    any_growth = grows.any(axis=0)
    cut = np.where(any_growth, grows.argmax(axis=0), _SERIES_KMAX - 1)
    mask = np.arange(_SERIES_KMAX)[:, None] <= cut[None, :]

    out = {}
    env = np.exp(log_env)
    if "pdf" in kinds:
        out["pdf"] = np.sum(sign[:, None] * env * mask, axis=0)
    if "cdf" in kinds:
        # Upper tail probability Q(y) = P(X > y).
        terms = sign[:, None] * env * (y[None, :] / (k * beta)[:, None])
        out["cdf"] = np.sum(terms * mask, axis=0)
    if "d1" in kinds:
        terms = -sign[:, None] * env * ((k * beta + 1.0)[:, None] / y[None, :])
        out["d1"] = np.sum(terms * mask, axis=0)
    if "d2" in kinds:
        fac = ((k * beta + 1.0) * (k * beta + 2.0))[:, None] / (y**2)[None, :]
        out["d2"] = np.sum(sign[:, None] * env * fac * mask, axis=0)
    return out


def _eval(x: np.ndarray, beta: float, quad: QuadratureConfig, kinds: tuple[str, ...]) -> dict:
    """Hybrid evaluation on signed x, dispatching buckets and tail."""
    xa = np.abs(x)
    sgn = np.sign(x)
    out = {k: np.empty_like(xa) for k in kinds}
    in_tail = xa > quad.tail_switch
    if np.any(in_tail):
        tail = _tail_eval(xa[in_tail], beta, kinds)
        for k in kinds:
            out[k][in_tail] = tail[k]
    lo = 0.0
    body = ~in_tail
    for cap in _bucket_caps(quad):
        m = body & (xa > lo) & (xa <= cap) if lo > 0.0 else body & (xa <= cap)
        lo = cap
        if not np.any(m):
            continue
        table = _validated_table(beta, cap, quad)
        part = _table_eval(table, xa[m], kinds)
        for k in kinds:
            out[k][m] = part[k]

    # Reassemble signed quantities: pdf and d2 are even, d1 is odd, and
    # the cdf branches combine the half-line sine transform with the
    # upper-tail series.
    if "d1" in kinds:
        out["d1"] = sgn * out["d1"]
    if "cdf" in kinds:
        cdf = np.empty_like(xa)
        cdf[body] = 0.5 + sgn[body] * out["cdf"][body]
        tail_q = out["cdf"]
        cdf[in_tail & (x > 0)] = 1.0 - tail_q[in_tail & (x > 0)]
        cdf[in_tail & (x < 0)] = tail_q[in_tail & (x < 0)]
        out["cdf"] = np.clip(cdf, 0.0, 1.0)
    return out


def stable_pdf(x, beta: float, quad: QuadratureConfig | None = None):
    """Density of the standard symmetric beta-stable law.

    Parameters
    ----------
    x : array_like
        Evaluation points (finite reals).
    beta : float
        Characteristic exponent in [1, 2).
    quad : QuadratureConfig, optional
        Accuracy configuration; defaults are at the 1e-12 scale.

    Returns
    -------
    float or ndarray
        phi_beta(x), strictly positive and symmetric in x.
    """
    beta = _check_beta(beta)
    quad = quad or _DEFAULT_QUAD
    xa, scalar, shape = _as_array(x)
    val = _eval(xa, beta, quad, ("pdf",))["pdf"]
    return float(val[0]) if scalar else val.reshape(shape)


def stable_cdf(x, beta: float, quad: QuadratureConfig | None = None):
    """Distribution function of the standard symmetric beta-stable law."""
    beta = _check_beta(beta)
    quad = quad or _DEFAULT_QUAD
    xa, scalar, shape = _as_array(x)
    val = _eval(xa, beta, quad, ("cdf",))["cdf"]
    return float(val[0]) if scalar else val.reshape(shape)


def stable_scores(x, beta: float, quad: QuadratureConfig | None = None):
    """First and second log-density scores of the stable law.

    Returns the pair ``(g, h)`` where ``g(x) = d/dx log phi_beta(x)``
    and ``h(x) = d^2/dx^2 log phi_beta(x) - g(x)/x``.  Both extend
    continuously to x = 0 with g(0) = h(0) = 0, and h is nonnegative.

    Returns
    -------
    (g, h) : pair of float or ndarray
    """
    beta = _check_beta(beta)
    quad = quad or _DEFAULT_QUAD
    xa, scalar, shape = _as_array(x)
    parts = _eval(xa, beta, quad, ("pdf", "d1", "d2"))
    pdf, d1, d2 = parts["pdf"], parts["d1"], parts["d2"]
    g = d1 / pdf
    h = np.zeros_like(xa)
    nz = xa != 0.0
    # h = phi''/phi - g^2 - g/x, grouped as (phi'' x - phi')/(x phi) - g^2
    # to keep the small-x cancellation in one subtraction.
    h[nz] = (d2[nz] * xa[nz] - d1[nz]) / (xa[nz] * pdf[nz]) - g[nz] ** 2
    if scalar:
        return float(g[0]), float(h[0])
    return g.reshape(shape), h.reshape(shape)


def stable_quantile(p, beta: float, quad: QuadratureConfig | None = None):
    """Quantile function (inverse CDF) of the symmetric stable law."""
    beta = _check_beta(beta)
    quad = quad or _DEFAULT_QUAD
    pa, scalar, shape = _as_array(p, name="p")
    if np.any((pa <= 0.0) | (pa >= 1.0)):
        raise ValueError("quantile levels must lie strictly inside (0, 1)")

    def solve(level: float) -> float:
        if level == 0.5:
            return 0.0
        hi = 1.0
        while stable_cdf(hi, beta, quad) < max(level, 1.0 - level):
            hi *= 2.0
            if hi > 1e12:
                raise QuadratureError(
                    "quantile bracket expansion failed", achieved_error=math.inf
                )
        f = lambda z: stable_cdf(z, beta, quad) - level
        return float(optimize.brentq(f, -hi, hi, xtol=1e-12, rtol=1e-14))

    out = np.array([solve(float(v)) for v in pa])
    return float(out[0]) if scalar else out.reshape(shape)


# ---------------------------------------------------------------------------
# Samplers.
# ---------------------------------------------------------------------------


def _positive_uniform(rng: np.random.Generator, size: int) -> np.ndarray:
    u = rng.random(size)
    bad = u == 0.0
    while np.any(bad):
        u[bad] = rng.random(int(bad.sum()))
        bad = u == 0.0
    return u


def _positive_exponential(rng: np.random.Generator, size: int) -> np.ndarray:
    e = rng.exponential(size=size)
    bad = e == 0.0
    while np.any(bad):
        e[bad] = rng.exponential(size=int(bad.sum()))
        bad = e == 0.0
    return e


def sample_symmetric_stable(beta: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw iid variates from the standard symmetric beta-stable law.

    Uses the Chambers-Mallows-Stuck angular representation, which for
    beta = 1 reduces to tan(W) with W uniform on (-pi/2, pi/2).
    """
    beta = _check_beta(beta)
    size = int(size)
    if size < 0:
        raise ValueError("size must be nonnegative")
    w = (_positive_uniform(rng, size) - 0.5) * np.pi
    e = _positive_exponential(rng, size)
    x = np.sin(beta * w) / np.cos(w) ** (1.0 / beta)
    x *= (np.cos((1.0 - beta) * w) / e) ** ((1.0 - beta) / beta)
    return x


def _log_kanter_a(u: np.ndarray, sigma: float) -> np.ndarray:
    # Zolotarev's auxiliary function on (0, 1), in log form.
    s1 = np.sin(sigma * np.pi * u)
    s2 = np.sin((1.0 - sigma) * np.pi * u)
    s3 = np.sin(np.pi * u)
    return (
        (sigma / (1.0 - sigma)) * np.log(s1)
        + np.log(s2)
        - (1.0 / (1.0 - sigma)) * np.log(s3)
    )


def sample_positive_stable(beta: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw iid variates V from the positive stable variance law.

    V has Laplace transform E exp(-tV) = exp(-(2t)^(beta/2)); it is the
    mixing law that represents the symmetric beta-stable variate as
    sqrt(V) times an independent standard normal.  Construction: V = 2 S
    with S one-sided (beta/2)-stable via Kanter's representation
    S = (A(U)/E)^((1-s)/s).
    """
    beta = _check_beta(beta)
    size = int(size)
    if size < 0:
        raise ValueError("size must be nonnegative")
    sigma = beta / 2.0
    u = _positive_uniform(rng, size)
    e = _positive_exponential(rng, size)
    log_s = ((1.0 - sigma) / sigma) * (_log_kanter_a(u, sigma) - np.log(e))
    return 2.0 * np.exp(log_s)


# ---------------------------------------------------------------------------
# One-sided stable density/CDF on a grid (used only by the small-|x|
# fallback of the conditional sampler, where rejection acceptance
# degenerates).  Kanter's representation gives
#   P(S <= s)   = E_U exp(-A(U) s^(-r)),            r = sigma/(1-sigma)
#   f_S(s)      = r s^(-r-1) E_U[ A(U) exp(-A(U) s^(-r)) ]
# and the u-integrals are done on panels graded toward u = 1 where A
# blows up.
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _zolotarev_nodes(sigma: float):
    edges = np.concatenate([[0.0, 0.25], 1.0 - 2.0 ** (-np.arange(1.0, 61.0))])
    u, w = _panel_nodes(edges, 12)
    return u, w, _log_kanter_a(u, sigma)


def _one_sided_cdf(s: np.ndarray, sigma: float) -> np.ndarray:
    _, w, log_a = _zolotarev_nodes(sigma)
    r = sigma / (1.0 - sigma)
    log_c = -r * np.log(s)
    a_c = np.exp(np.minimum(log_a[:, None] + log_c[None, :], 700.0))
    return np.exp(-a_c).T @ w


def _one_sided_logpdf(s: np.ndarray, sigma: float) -> np.ndarray:
    _, w, log_a = _zolotarev_nodes(sigma)
    r = sigma / (1.0 - sigma)
    log_c = -r * np.log(s)
    a_c = np.exp(np.minimum(log_a[:, None] + log_c[None, :], 700.0))
    inner = np.exp(log_a[:, None] - a_c).T @ w
    with np.errstate(divide="ignore"):
        return math.log(r) - (r + 1.0) * np.log(s) + np.log(inner)


def _one_sided_quantile(p: float, sigma: float) -> float:
    lo, hi = 1e-12, 1e12
    f = lambda s: float(_one_sided_cdf(np.array([s]), sigma)[0]) - p
    while f(lo) > 0.0:
        lo *= 1e-3
    while f(hi) < 0.0:
        hi *= 1e3
    return float(optimize.brentq(f, lo, hi, xtol=1e-300, rtol=1e-12))


# ---------------------------------------------------------------------------
# Conditional variance sampler.
#
# Target: F_beta(dv | x) proportional to v^(-1/2) exp(-x^2/(2v)) F_beta(dv).
# Proposals come from F_beta itself; the exact-bound mode divides the
# tilt by its supremum |x|^(-1) e^(-1/2) (attained at v = x^2) so the
# acceptance probability never exceeds 1.  The loose-bound mode uses the
# looser envelope |x|^(-1/2) e^(-|x|/2) with the ratio clamped at 1,
# which is exact only where that bound actually dominates.
#
# Rejection degenerates in both tails: as x -> 0 the acceptance rate
# vanishes linearly in |x|, and for large |x| it decays like |x|^(-beta)
# because proposals must land near v ~ x^2 in the F_beta tail.  Both
# regimes fall back to inverse-CDF sampling of the tilted law on a
# log-spaced grid (mode-independent, since no envelope is involved); the
# grid is extended upward at the same log spacing when a large |x| needs
# ceiling coverage of the mass around v ~ x^2.
# ---------------------------------------------------------------------------


@dataclass
class ConditionalVarianceSampler:
    """Sampler for the stable variance law conditioned on an observation.

    Parameters
    ----------
    beta : float
        Characteristic exponent in [1, 2).
    mode : str
        'exact-bound' (default) or 'loose-bound'; see module notes.
    small_x_threshold : float
        Below this |x| the rejection acceptance rate vanishes linearly,
        so sampling falls back to inverse-CDF draws on a log-spaced
        grid of the (barely) tilted variance law.
    large_x_threshold : float
        Above this |x| the per-proposal acceptance rate decays like
        |x|^(-beta), so sampling likewise falls back to the grid, which
        is extended upward to cover the mass around v ~ x^2.  Set to
        inf to force pure rejection at any |x|.
    grid_size : int
        Node count of the fallback grid (at least 256).
    max_rejections : int
        Per-value proposal budget before declaring a stall.
    """

    beta: float
    mode: str = "exact-bound"
    small_x_threshold: float = 1e-3
    large_x_threshold: float = 100.0
    grid_size: int = 2048
    max_rejections: int = 10**6
    _grid: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_beta(self.beta)
        if self.mode not in ("exact-bound", "loose-bound"):
            raise ValueError(f"unknown envelope mode {self.mode!r}")
        if self.small_x_threshold <= 0.0:
            raise ValueError("small_x_threshold must be positive")
        if self.large_x_threshold <= self.small_x_threshold:
            raise ValueError("large_x_threshold must exceed small_x_threshold")
        if self.grid_size < 256:
            raise ValueError("grid_size must be at least 256")
        if self.max_rejections < 1:
            raise ValueError("max_rejections must be positive")

    # -- fallback grid -----------------------------------------------------

    def _build_grid(self, v: np.ndarray) -> tuple:
        log_v = np.log(v)
        base_logw = _one_sided_logpdf(v / 2.0, self.beta / 2.0) + log_v
        edges = np.empty(v.size + 1)
        edges[1:-1] = 0.5 * (log_v[1:] + log_v[:-1])
        edges[0] = log_v[0]
        edges[-1] = log_v[-1]
        return (v, base_logw, edges)

    def _ensure_grid(self, v_cap: float | None = None):
        if self._grid is None:
            sigma = self.beta / 2.0
            v_lo = 2.0 * _one_sided_quantile(1e-8, sigma)
            v_hi = 2.0 * _one_sided_quantile(1.0 - 1e-8, sigma)
            log_v = np.linspace(math.log(v_lo), math.log(v_hi), self.grid_size)
            self._grid = self._build_grid(np.exp(log_v))
        v = self._grid[0]
        if v_cap is not None and v_cap > float(v[-1]):
            # Extend at the existing log spacing; small-x draws are
            # unaffected because the appended far tail carries ~0 weight.
            step = math.log(v[1]) - math.log(v[0])
            n_extra = int(math.ceil((math.log(v_cap) - math.log(v[-1])) / step))
            new_log = math.log(v[-1]) + step * np.arange(1, n_extra + 1)
            self._grid = self._build_grid(np.concatenate([v, np.exp(new_log)]))
        return self._grid

    def _sample_grid(self, xa: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        # Ceiling 1e5 * x^2 keeps the truncated conditional upper-tail
        # mass below (1e5)^(-(beta+1)/2) <= 1e-5.
        v_cap = 1e5 * float(np.max(xa)) ** 2 if xa.size else None
        v, base_logw, edges = self._ensure_grid(v_cap)
        tilt = base_logw - 0.5 * np.log(v)
        out = np.empty_like(xa)
        for start in range(0, xa.size, 512):
            xc = xa[start : start + 512]
            logw = tilt[None, :] - xc[:, None] ** 2 / (2.0 * v)[None, :]
            logw -= logw.max(axis=1, keepdims=True)
            cum = np.cumsum(np.exp(logw), axis=1)
            u = rng.random(xc.size) * cum[:, -1]
            idx = np.minimum((cum < u[:, None]).sum(axis=1), v.size - 1)
            frac = rng.random(xc.size)
            out[start : start + 512] = np.exp(
                edges[idx] + frac * (edges[idx + 1] - edges[idx])
            )
        return out

    # -- rejection path ----------------------------------------------------

    def _log_accept(self, v: np.ndarray, xa: np.ndarray) -> np.ndarray:
        if self.mode == "exact-bound":
            return np.log(xa) - 0.5 * np.log(v) + 0.5 - xa**2 / (2.0 * v)
        ratio = 0.5 * (np.log(xa) - np.log(v)) + 0.5 * (xa - xa**2 / v)
        return np.minimum(ratio, 0.0)

    def sample_batch(self, x, rng: np.random.Generator) -> np.ndarray:
        """Draw one conditional variance per entry of x."""
        xa, _, shape = _as_array(x)
        xa = np.abs(xa)
        out = np.empty_like(xa)
        gridded = (xa < self.small_x_threshold) | (xa > self.large_x_threshold)
        if np.any(gridded):
            out[gridded] = self._sample_grid(xa[gridded], rng)
        pending = np.flatnonzero(~gridded)
        batch = np.ones(pending.size, dtype=np.int64)
        attempts = np.zeros(pending.size, dtype=np.int64)
        while pending.size:
            total = int(batch.sum())
            v = sample_positive_stable(self.beta, total, rng)
            u = rng.random(total)
            x_rep = np.repeat(xa[pending], batch)
            with np.errstate(over="ignore"):
                acc = np.log(u) < self._log_accept(v, x_rep)
            # First accepted proposal within each index's segment.
            seg_end = np.cumsum(batch)
            seg_start = seg_end - batch
            hit_flat = np.flatnonzero(acc)
            seg_of_hit = np.searchsorted(seg_end, hit_flat, side="right")
            seg_ids, first_pos = np.unique(seg_of_hit, return_index=True)
            out[pending[seg_ids]] = v[hit_flat[first_pos]]
            solved = np.zeros(pending.size, dtype=bool)
            solved[seg_ids] = True
            attempts += batch
            if np.any(~solved & (attempts >= self.max_rejections)):
                stuck = int(np.flatnonzero(~solved & (attempts >= self.max_rejections))[0])
                raise SamplerStallError(float(xa[pending[stuck]]), int(attempts[stuck]))
            pending = pending[~solved]
            attempts = attempts[~solved]
            batch = np.minimum(batch[~solved] * 2, 4096)
        return out.reshape(shape)

    def sample(self, x: float, rng: np.random.Generator) -> float:
        return float(self.sample_batch(np.array([float(x)]), rng)[0])


def sample_conditional_variance(x: float, sampler: ConditionalVarianceSampler, rng: np.random.Generator) -> float:
    """Draw one variance from F_beta(dv | x); see ConditionalVarianceSampler."""
    return sampler.sample(x, rng)


def sample_conditional_variances(x, sampler: ConditionalVarianceSampler, rng: np.random.Generator) -> np.ndarray:
    """Vectorized form of :func:`sample_conditional_variance`."""
    return sampler.sample_batch(x, rng)


def conditional_accept_prob(v, x, mode: str = "exact-bound"):
    """Acceptance probability of a proposal v for the conditional law at x.

    In 'exact-bound' mode this is the analytically sub-unit ratio
    |x| v^(-1/2) exp(1/2 - x^2/(2v)); in 'loose-bound' mode the looser
    ratio is clamped at 1 (matching what the sampler actually uses).
    """
    va, v_scalar, _ = _as_array(v, name="v")
    xa, x_scalar, _ = _as_array(x)
    if np.any(va <= 0.0):
        raise ValueError("v must be positive")
    xa = np.abs(xa)
    if mode == "exact-bound":
        logp = np.log(xa) - 0.5 * np.log(va) + 0.5 - xa**2 / (2.0 * va)
    elif mode == "loose-bound":
        logp = np.minimum(0.5 * (np.log(xa) - np.log(va)) + 0.5 * (xa - xa**2 / va), 0.0)
    else:
        raise ValueError(f"unknown envelope mode {mode!r}")
    p = np.exp(logp)
    if v_scalar and x_scalar:
        return float(p[0])
    return p


# ---------------------------------------------------------------------------
# Information constants.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FisherConstants:
    """Scalar information constants of the stable quasi-likelihood.

    ``c_alpha``/``c_gamma`` are the marginal Fisher-type constants
    int (phi'/phi)^2 phi and int (1 + y phi'/phi)^2 phi; the daggered
    versions are their complete-data (variance-augmented) counterparts
    int v^-1 F_beta(dv) and exactly 2; the starred values are the
    dagger-minus-plain gaps, which are strictly positive for beta < 2.
    """

    beta: float
    c_alpha: float
    c_gamma: float
    c_alpha_dagger: float
    c_gamma_dagger: float

    @property
    def c_alpha_star(self) -> float:
        return self.c_alpha_dagger - self.c_alpha

    @property
    def c_gamma_star(self) -> float:
        return self.c_gamma_dagger - self.c_gamma


@functools.lru_cache(maxsize=None)
def _fisher_constants_cached(beta: float, quad: QuadratureConfig) -> FisherConstants:
    ts = quad.tail_switch

    def integrate_even(f) -> float:
        body, _ = integrate.quad(f, 0.0, ts, epsabs=1e-11, epsrel=1e-10, limit=200)
        tail, _ = integrate.quad(
            lambda s: f(1.0 / s) / s**2, 0.0, 1.0 / ts, epsabs=1e-11, epsrel=1e-10, limit=200
        )
        return 2.0 * (body + tail)

    def g2_phi(x: float) -> float:
        g, _ = stable_scores(x, beta, quad)
        return g * g * stable_pdf(x, beta, quad)

    def scale_score_phi(x: float) -> float:
        g, _ = stable_scores(x, beta, quad)
        return (1.0 + x * g) ** 2 * stable_pdf(x, beta, quad)

    c_alpha = integrate_even(g2_phi)
    c_gamma = integrate_even(scale_score_phi)
    # int v^-1 F_beta(dv) = int_0^inf exp(-(2t)^(beta/2)) dt = Gamma(1+2/beta)/2.
    c_alpha_dagger = float(special.gamma(1.0 + 2.0 / beta)) / 2.0
    fc = FisherConstants(beta, c_alpha, c_gamma, c_alpha_dagger, 2.0)
    if fc.c_alpha_star <= 0.0 or fc.c_gamma_star <= 0.0:
        raise QuadratureError(
            f"information constants violate dagger dominance at beta={beta}",
            achieved_error=min(fc.c_alpha_star, fc.c_gamma_star),
        )
    return fc


def fisher_constants(beta: float, quad: QuadratureConfig | None = None) -> FisherConstants:
    """Information constants of the stable law; see FisherConstants."""
    beta = _check_beta(beta)
    return _fisher_constants_cached(beta, quad or _DEFAULT_QUAD)
