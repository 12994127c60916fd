"""Euler scheme simulation of stable-noise driven diffusions.

Generates observation records X_0, X_h, ..., X_{Nh} from

    X_{nh} = X_{(n-1)h} + a(X_{(n-1)h}) h + c(X_{(n-1)h}) h^{1/beta} z_n

with z_n iid standard symmetric beta-stable.  The discretized recursion
itself is the data generating truth; ``refine > 1`` runs the recursion
on a finer grid and subsamples, for misspecification experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SimulationError
from .expressions import ModelSpec, ThetaVector
from .stable import sample_symmetric_stable

__all__ = ["ObservationSet", "PathConfig", "simulate_path", "increments"]

EXPLOSION_THRESHOLD = 1e12


@dataclass(frozen=True)
class ObservationSet:
    """Equally spaced record X_0..X_N on [0, T].

    Parameters
    ----------
    values : ndarray, shape (N + 1,)
        States at times 0, h, 2h, ..., T.
    t_end : float
        Terminal time T; the step is h = T / N.
    """

    values: np.ndarray
    t_end: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("values must be a vector of at least two states")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        if not (np.isfinite(self.t_end) and self.t_end > 0):
            raise ValueError("t_end must be a positive real")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "t_end", float(self.t_end))

    @property
    def n_increments(self) -> int:
        return self.values.size - 1

    @property
    def step(self) -> float:
        return self.t_end / self.n_increments

    @classmethod
    def from_step(cls, values, h: float) -> "ObservationSet":
        values = np.asarray(values, dtype=float)
        return cls(values, float(h) * (values.size - 1))

    def increments(self) -> np.ndarray:
        return np.diff(self.values)


def increments(obs: ObservationSet) -> np.ndarray:
    """First differences X_{nh} - X_{(n-1)h}, length N."""
    return obs.increments()


@dataclass(frozen=True)
class PathConfig:
    """Simulation controls.

    ``refine`` Euler substeps are taken per observation interval; the
    recorded path keeps every refine-th state.  refine=1 reproduces the
    discretized model exactly.
    """

    seed: int = 0
    refine: int = 1
    x0: float = 0.0

    def __post_init__(self):
        if int(self.refine) != self.refine or self.refine < 1:
            raise ValueError("refine must be a positive integer")
        if not np.isfinite(self.x0):
            raise ValueError("x0 must be finite")


def simulate_path(
    model: ModelSpec,
    theta0: ThetaVector,
    beta: float,
    n_increments: int,
    t_end: float,
    cfg: PathConfig | None = None,
    rng: np.random.Generator | None = None,
) -> ObservationSet:
    """Simulate one Euler path of the stable-driven SDE.

    Parameters
    ----------
    model : ModelSpec
        Drift and scale coefficients.
    theta0 : ThetaVector
        True parameter used for generation; must lie in the model box.
    beta : float
        Stability index of the driving noise, 1 <= beta < 2.
    n_increments : int
        Number N of observation intervals; the record has N + 1 states.
    t_end : float
        Terminal time T, so the observation step is h = T / N.
    cfg : PathConfig, optional
        Seed, refinement factor, and initial state.
    rng : numpy Generator, optional
        Explicit stream; overrides ``cfg.seed``.

    Returns
    -------
    ObservationSet

    Raises
    ------
    SimulationError
        If the state leaves [-1e12, 1e12] or turns non-finite; the
        error carries the offending fine-grid step index.
    """
    if cfg is None:
        cfg = PathConfig()
    if not 1.0 <= beta < 2.0:
        raise ValueError("beta must lie in [1, 2)")
    n_increments = int(n_increments)
    if n_increments < 1:
        raise ValueError("n_increments must be >= 1")
    if not (np.isfinite(t_end) and t_end > 0):
        raise ValueError("t_end must be positive")
    if not model.in_bounds(theta0):
        raise ValueError("theta0 lies outside the model bounds")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    k = int(cfg.refine)
    h_fine = t_end / (n_increments * k)
    noise_scale = h_fine ** (1.0 / beta)
    z = sample_symmetric_stable(beta, n_increments * k, rng)

    values = np.empty(n_increments + 1)
    values[0] = cfg.x0
    x = float(cfg.x0)
    for step in range(1, n_increments * k + 1):
        a = float(model.drift_at(theta0, x))
        c = float(model.scale_at(theta0, x))
        x = x + a * h_fine + c * noise_scale * z[step - 1]
        if not np.isfinite(x) or abs(x) > EXPLOSION_THRESHOLD:
            raise SimulationError("simulated state exploded", step=step)
        if step % k == 0:
            values[step // k] = x
    return ObservationSet(values, float(t_end))
