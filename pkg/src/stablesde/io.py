"""Experiment configuration, data ingestion, and result persistence.

Configs are TOML documents with ``model``, ``data``, ``prior``, and
``mcmc`` blocks plus top-level ``beta`` and ``output_dir`` keys.
Serialization uses shortest round-trip float text everywhere, so a
parse/serialize cycle is idempotent and written artifacts are
byte-stable for a fixed seed.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

try:
    import tomllib as tomli
except ModuleNotFoundError:
    import tomli

from .errors import ConfigError, DataFileError, UserInputError
from .expressions import ModelSpec, ThetaVector, print_expr
from .mcmc import MCMCConfig, PriorSpec
from .simulate import ObservationSet

MISSING_MARKERS = ("", "NA")

_RW_SCALE = 2.38**2


@dataclass(frozen=True)
class SimulateBlock:
    """Synthetic-data recipe: model path sampled at n+1 grid points."""

    n_increments: int
    t_end: float
    theta: dict[str, float]
    x0: float = 0.0
    refine: int = 1


@dataclass(frozen=True)
class DataBlock:
    """Where observations come from: a CSV file or a simulation recipe."""

    path: str | None = None
    column: str | None = None
    t_end: float | None = None
    simulate: SimulateBlock | None = None


@dataclass(frozen=True)
class PriorBlock:
    """Prior family over the full parameter vector."""

    kind: str = "normal"
    mean: tuple[float, ...] | None = None
    sd: tuple[float, ...] | None = None


@dataclass(frozen=True)
class MCMCBlock:
    """Chain settings as written in the config file."""

    iterations: int
    variant: str = "mwg"
    rho: float | None = None
    seed: int = 0
    proposal_scale: float = 1.0
    proposal_cov: tuple[tuple[float, ...], ...] | None = None
    scale_by_rate: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete description of one experiment.

    Attributes
    ----------
    model : ModelSpec
        Drift/scale expressions, parameter names, and bounds.
    data : DataBlock
        Exactly one of ``path`` (CSV input) or ``simulate`` is set.
    beta : float or str
        Stability index in [1, 2), or the string ``"estimate"`` to fit
        it from the data increments (CSV input only).
    prior : PriorBlock
    mcmc : MCMCBlock
    output_dir : str
        Directory where commands write their artifacts.
    """

    model: ModelSpec
    data: DataBlock
    beta: float | str
    prior: PriorBlock
    mcmc: MCMCBlock
    output_dir: str = "out"

    def build_prior(self) -> PriorSpec:
        p = self.model.dim
        if self.prior.kind == "uniform":
            return PriorSpec.uniform(p)
        mean = self.prior.mean if self.prior.mean is not None else (0.0,) * p
        sd = self.prior.sd if self.prior.sd is not None else (1.0,) * p
        return PriorSpec.normal(np.broadcast_to(mean, p), np.broadcast_to(sd, p))

    def build_mcmc(self) -> MCMCConfig:
        blk = self.mcmc
        cov = None
        if blk.proposal_cov is not None:
            cov = np.asarray(blk.proposal_cov, dtype=float)
        elif blk.proposal_scale != 1.0:
            cov = blk.proposal_scale * (_RW_SCALE / self.model.dim) * np.eye(self.model.dim)
        return MCMCConfig(
            iterations=blk.iterations,
            proposal_cov=cov,
            seed=blk.seed,
            variant=blk.variant,
            rho=blk.rho,
            scale_by_rate=blk.scale_by_rate,
        )

    def theta0(self) -> ThetaVector | None:
        """True parameter vector of the simulation recipe, if any."""
        if self.data.simulate is None:
            return None
        vals = [self.data.simulate.theta[n] for n in self.model.names]
        return self.model.split(np.array(vals))


class _Reader:
    """Typed field extraction that records every violation."""

    def __init__(self):
        self.violations: list[str] = []

    def fail(self, where: str, msg: str):
        self.violations.append(f"{where}: {msg}")

    def get(self, table: dict, key: str, where: str, kind, required=False, default=None):
        label = f"{where}.{key}" if where else key
        if key not in table:
            if required:
                self.fail(label, "missing required field")
            return default
        val = table[key]
        if kind is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                self.fail(label, f"expected a number, got {val!r}")
                return default
            return float(val)
        if kind is int:
            if isinstance(val, bool) or not isinstance(val, int):
                self.fail(label, f"expected an integer, got {val!r}")
                return default
            return int(val)
        if kind is str:
            if not isinstance(val, str):
                self.fail(label, f"expected a string, got {val!r}")
                return default
            return val
        if kind is bool:
            if not isinstance(val, bool):
                self.fail(label, f"expected a boolean, got {val!r}")
                return default
            return val
        if kind is dict:
            if not isinstance(val, dict):
                self.fail(label, f"expected a table, got {val!r}")
                return default
            return val
        if kind is list:
            if not isinstance(val, list):
                self.fail(label, f"expected an array, got {val!r}")
                return default
            return val
        raise AssertionError(kind)

    def reject_unknown(self, table: dict, where: str, known):
        for key in table:
            if key not in known:
                self.fail(f"{where}.{key}" if where else key, "unknown field")


def _float_list(reader, raw, where):
    if raw is None:
        return None
    out = []
    for i, v in enumerate(raw):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            reader.fail(where, f"entry {i} is not a number: {v!r}")
            return None
        out.append(float(v))
    return tuple(out)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a TOML experiment config.

    Raises
    ------
    ConfigError
        Listing every violated field, not just the first.
    """
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"toml: {exc}"]) from None

    r = _Reader()
    r.reject_unknown(doc, "", ("model", "data", "beta", "prior", "mcmc", "output_dir"))

    # -- model ------------------------------------------------------
    model = None
    mtab = r.get(doc, "model", "", dict, required=True, default={})
    if mtab is not None:
        r.reject_unknown(mtab, "model", ("drift", "scale", "alpha", "gamma", "bounds"))
        drift = r.get(mtab, "drift", "model", str, required=True)
        scale = r.get(mtab, "scale", "model", str, required=True)
        alpha = r.get(mtab, "alpha", "model", list, default=[])
        gamma = r.get(mtab, "gamma", "model", list, required=True, default=[])
        btab = r.get(mtab, "bounds", "model", dict, required=True, default={})
        bounds = {}
        for name, pair in (btab or {}).items():
            vals = _float_list(r, pair if isinstance(pair, list) else None, f"model.bounds.{name}")
            if vals is None or len(vals) != 2:
                r.fail(f"model.bounds.{name}", "expected a [low, high] pair")
            else:
                bounds[name] = vals
        if drift is not None and scale is not None and alpha is not None and gamma is not None:
            try:
                model = ModelSpec(drift, scale, alpha, gamma, bounds)
            except UserInputError as exc:
                r.fail("model", str(exc))
            except (ValueError, TypeError) as exc:
                r.fail("model", str(exc))

    # -- data -------------------------------------------------------
    data = None
    dtab = r.get(doc, "data", "", dict, required=True, default={})
    if dtab is not None:
        r.reject_unknown(dtab, "data", ("path", "column", "t_end", "simulate"))
        path = r.get(dtab, "path", "data", str)
        column = r.get(dtab, "column", "data", str)
        d_t_end = r.get(dtab, "t_end", "data", float)
        stab = r.get(dtab, "simulate", "data", dict)
        if (path is None) == (stab is None):
            r.fail("data", "exactly one of data.path / data.simulate must be present")
        simulate = None
        if stab is not None:
            r.reject_unknown(
                stab, "data.simulate", ("n", "t_end", "theta", "x0", "refine")
            )
            n = r.get(stab, "n", "data.simulate", int, required=True)
            s_t_end = r.get(stab, "t_end", "data.simulate", float, required=True)
            theta_tab = r.get(stab, "theta", "data.simulate", dict, required=True, default={})
            x0 = r.get(stab, "x0", "data.simulate", float, default=0.0)
            refine = r.get(stab, "refine", "data.simulate", int, default=1)
            if n is not None and n < 1:
                r.fail("data.simulate.n", "must be >= 1")
            if s_t_end is not None and not s_t_end > 0:
                r.fail("data.simulate.t_end", "must be positive")
            if refine is not None and refine < 1:
                r.fail("data.simulate.refine", "must be >= 1")
            theta = {}
            for name, val in (theta_tab or {}).items():
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    r.fail(f"data.simulate.theta.{name}", f"expected a number, got {val!r}")
                else:
                    theta[name] = float(val)
            if model is not None:
                missing = [nm for nm in model.names if nm not in theta]
                extra = [nm for nm in theta if nm not in model.names]
                if missing:
                    r.fail("data.simulate.theta", f"missing values for {missing}")
                if extra:
                    r.fail("data.simulate.theta", f"unknown parameters {extra}")
            if None not in (n, s_t_end, x0, refine):
                simulate = SimulateBlock(
                    n_increments=n, t_end=s_t_end, theta=theta, x0=x0, refine=refine
                )
        if path is not None:
            if d_t_end is None:
                r.fail("data.t_end", "required when loading from a file")
            elif not d_t_end > 0:
                r.fail("data.t_end", "must be positive")
        data = DataBlock(path=path, column=column, t_end=d_t_end, simulate=simulate)

    # -- beta -------------------------------------------------------
    beta = doc.get("beta")
    if beta is None:
        r.fail("beta", "missing required field")
    elif isinstance(beta, str):
        if beta != "estimate":
            r.fail("beta", f"expected a number in [1, 2) or 'estimate', got {beta!r}")
        elif data is not None and data.path is None:
            r.fail("beta", "'estimate' requires file input (data.path)")
    elif isinstance(beta, bool) or not isinstance(beta, (int, float)):
        r.fail("beta", f"expected a number in [1, 2) or 'estimate', got {beta!r}")
    else:
        beta = float(beta)
        if not 1.0 <= beta < 2.0:
            r.fail("beta", f"must lie in [1, 2), got {beta}")

    # -- prior ------------------------------------------------------
    prior = PriorBlock()
    ptab = r.get(doc, "prior", "", dict, default={})
    if ptab:
        r.reject_unknown(ptab, "prior", ("type", "mean", "sd"))
        kind = r.get(ptab, "type", "prior", str, default="normal")
        if kind not in ("normal", "uniform"):
            r.fail("prior.type", f"expected 'normal' or 'uniform', got {kind!r}")
            kind = "normal"
        mean = _float_list(r, r.get(ptab, "mean", "prior", list), "prior.mean")
        sd = _float_list(r, r.get(ptab, "sd", "prior", list), "prior.sd")
        if kind == "uniform" and (mean is not None or sd is not None):
            r.fail("prior", "mean/sd are not used by the uniform prior")
        if sd is not None and any(s <= 0 for s in sd):
            r.fail("prior.sd", "entries must be positive")
        if model is not None:
            for label, arr in (("prior.mean", mean), ("prior.sd", sd)):
                if arr is not None and len(arr) not in (1, model.dim):
                    r.fail(label, f"expected 1 or {model.dim} entries, got {len(arr)}")
        prior = PriorBlock(kind=kind, mean=mean, sd=sd)

    # -- mcmc -------------------------------------------------------
    mcmc = None
    ctab = r.get(doc, "mcmc", "", dict, required=True, default={})
    if ctab is not None:
        r.reject_unknown(
            ctab,
            "mcmc",
            (
                "iterations",
                "variant",
                "rho",
                "seed",
                "proposal_scale",
                "proposal_cov",
                "scale_by_rate",
            ),
        )
        iterations = r.get(ctab, "iterations", "mcmc", int, required=True)
        variant = r.get(ctab, "variant", "mcmc", str, default="mwg")
        rho = r.get(ctab, "rho", "mcmc", float)
        seed = r.get(ctab, "seed", "mcmc", int, default=0)
        pscale = r.get(ctab, "proposal_scale", "mcmc", float, default=1.0)
        praw = r.get(ctab, "proposal_cov", "mcmc", list)
        sbr = r.get(ctab, "scale_by_rate", "mcmc", bool, default=True)
        pcov = None
        if praw is not None:
            rows = [_float_list(r, row if isinstance(row, list) else None, "mcmc.proposal_cov")
                    for row in praw]
            if any(row is None for row in rows):
                r.fail("mcmc.proposal_cov", "expected an array of numeric rows")
            else:
                pcov = tuple(rows)
        if pscale is not None and not pscale > 0:
            r.fail("mcmc.proposal_scale", "must be positive")
        if pcov is not None and model is not None and len(pcov) != model.dim:
            r.fail("mcmc.proposal_cov", f"expected a {model.dim}x{model.dim} matrix")
        if iterations is not None:
            try:
                mcmc = MCMCBlock(
                    iterations=iterations,
                    variant=variant,
                    rho=rho,
                    seed=seed,
                    proposal_scale=pscale,
                    proposal_cov=pcov,
                    scale_by_rate=sbr,
                )
                # Surfaces iteration/variant/rho/cov problems in one place.
                probe = ExperimentConfig(
                    model=model or ModelSpec("0", "g", (), ("g",), {"g": (0.1, 1.0)}),
                    data=data or DataBlock(path="-"),
                    beta=1.5,
                    prior=prior,
                    mcmc=mcmc,
                )
                probe.build_mcmc()
            except ValueError as exc:
                r.fail("mcmc", str(exc))
                mcmc = None

    output_dir = r.get(doc, "output_dir", "", str, default="out")
    if output_dir is not None and not output_dir:
        r.fail("output_dir", "must be a non-empty path")

    if r.violations:
        raise ConfigError(r.violations)
    return ExperimentConfig(
        model=model, data=data, beta=beta, prior=prior, mcmc=mcmc, output_dir=output_dir
    )


def load_config(path) -> ExperimentConfig:
    """Read and validate a config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"config file: {exc}"]) from None
    return parse_config(text)


def _toml_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, int):
        return str(val)
    if isinstance(val, float):
        return repr(val)
    if isinstance(val, str):
        return json.dumps(val)
    if isinstance(val, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in val) + "]"
    raise TypeError(f"cannot serialize {val!r}")


def config_to_toml(cfg: ExperimentConfig) -> str:
    """Serialize a config; parse(config_to_toml(cfg)) == cfg."""
    lines = []
    lines.append(f"beta = {_toml_value(cfg.beta)}")
    lines.append(f"output_dir = {_toml_value(cfg.output_dir)}")
    lines.append("")
    lines.append("[model]")
    lines.append(f"drift = {_toml_value(print_expr(cfg.model.drift))}")
    lines.append(f"scale = {_toml_value(print_expr(cfg.model.scale))}")
    lines.append(f"alpha = {_toml_value(list(cfg.model.alpha_names))}")
    lines.append(f"gamma = {_toml_value(list(cfg.model.gamma_names))}")
    lines.append("")
    lines.append("[model.bounds]")
    for name in cfg.model.names:
        lines.append(f"{name} = {_toml_value(list(cfg.model.bounds[name]))}")
    lines.append("")
    if cfg.data.path is not None:
        lines.append("[data]")
        lines.append(f"path = {_toml_value(cfg.data.path)}")
        if cfg.data.column is not None:
            lines.append(f"column = {_toml_value(cfg.data.column)}")
        lines.append(f"t_end = {_toml_value(cfg.data.t_end)}")
    else:
        sim = cfg.data.simulate
        lines.append("[data.simulate]")
        lines.append(f"n = {sim.n_increments}")
        lines.append(f"t_end = {_toml_value(sim.t_end)}")
        lines.append(f"x0 = {_toml_value(sim.x0)}")
        lines.append(f"refine = {sim.refine}")
        lines.append("")
        lines.append("[data.simulate.theta]")
        for name in cfg.model.names:
            lines.append(f"{name} = {_toml_value(sim.theta[name])}")
    lines.append("")
    lines.append("[prior]")
    lines.append(f"type = {_toml_value(cfg.prior.kind)}")
    if cfg.prior.mean is not None:
        lines.append(f"mean = {_toml_value(list(cfg.prior.mean))}")
    if cfg.prior.sd is not None:
        lines.append(f"sd = {_toml_value(list(cfg.prior.sd))}")
    lines.append("")
    lines.append("[mcmc]")
    lines.append(f"iterations = {cfg.mcmc.iterations}")
    lines.append(f"variant = {_toml_value(cfg.mcmc.variant)}")
    if cfg.mcmc.rho is not None:
        lines.append(f"rho = {_toml_value(cfg.mcmc.rho)}")
    lines.append(f"seed = {cfg.mcmc.seed}")
    lines.append(f"proposal_scale = {_toml_value(cfg.mcmc.proposal_scale)}")
    if cfg.mcmc.proposal_cov is not None:
        lines.append(
            f"proposal_cov = {_toml_value([list(row) for row in cfg.mcmc.proposal_cov])}"
        )
    lines.append(f"scale_by_rate = {_toml_value(cfg.mcmc.scale_by_rate)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Data files
# ---------------------------------------------------------------------------


def load_csv(path, column: str | None, t_end: float, missing_policy: str = "drop-contiguous"):
    """Read one column of a CSV file into an observation set.

    Missing cells (empty or ``NA``) are dropped and the remaining rows
    are treated as contiguous on the grid h = t_end / (rows - 1); a
    warning lists the dropped 1-based data row indices.

    Parameters
    ----------
    column : str or None
        Header name of the value column; None takes the last column
        (header optional in that case).
    t_end : float
        Terminal time assigned to the cleaned series.
    missing_policy : str
        Only ``"drop-contiguous"`` is supported.

    Returns
    -------
    ObservationSet
    """
    if missing_policy != "drop-contiguous":
        raise ValueError(f"unknown missing_policy {missing_policy!r}")
    if not float(t_end) > 0:
        raise ValueError("t_end must be positive")
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = [row for row in csv.reader(fh)]
    except OSError as exc:
        raise DataFileError(f"{path}: {exc}") from None
    rows = [row for row in rows if any(cell.strip() for cell in row)]
    if not rows:
        raise DataFileError(f"{path}: empty file")

    def _is_numeric_or_missing(cell: str) -> bool:
        cell = cell.strip()
        if cell in MISSING_MARKERS:
            return True
        try:
            float(cell)
            return True
        except ValueError:
            return False

    if column is not None:
        header = [cell.strip() for cell in rows[0]]
        if column not in header:
            raise DataFileError(
                f"{path}: column {column!r} not found (available: {', '.join(header)})"
            )
        col_idx = header.index(column)
        col_name = column
        data_rows = rows[1:]
    else:
        col_idx = len(rows[0]) - 1
        col_name = f"#{col_idx + 1}"
        has_header = not _is_numeric_or_missing(rows[0][col_idx])
        data_rows = rows[1:] if has_header else rows

    values = []
    dropped = []
    for i, row in enumerate(data_rows, start=1):
        cell = row[col_idx].strip() if col_idx < len(row) else ""
        if cell in MISSING_MARKERS:
            dropped.append(i)
            continue
        try:
            values.append(float(cell))
        except ValueError:
            raise DataFileError(
                f"{path}: row {i}, column {col_name}: unparseable numeric cell {cell!r}"
            ) from None
    if len(values) < 2:
        raise DataFileError(f"{path}: fewer than 2 clean rows after dropping missing values")
    if dropped:
        warnings.warn(
            f"{path}: dropped {len(dropped)} missing row(s) at {dropped}; the remaining "
            "series is treated as contiguous, which compresses the time grid",
            UserWarning,
            stacklevel=2,
        )
    return ObservationSet(values, t_end=float(t_end))


def write_series(obs: ObservationSet, path) -> None:
    """Write an observation set as a two-column CSV (t, x)."""
    h = obs.step
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t,x\n")
        for i, v in enumerate(obs.values):
            fh.write(f"{repr(i * h)},{repr(float(v))}\n")


def write_trace(trace, names, path) -> None:
    """Write a chain trace as CSV with header ``iter,<names...>,accepted``.

    One row per iteration; the initial state is row 0 with accepted=1.
    Floats use shortest round-trip text, so read_trace recovers the
    matrix exactly.
    """
    names = list(names)
    thetas = np.asarray(trace.thetas, dtype=float)
    if thetas.shape[1] != len(names):
        raise ValueError("names do not match the trace dimension")
    flags = np.concatenate([[True], np.asarray(trace.accept_flags, dtype=bool)])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("iter," + ",".join(names) + ",accepted\n")
        for i in range(thetas.shape[0]):
            cells = [str(i)] + [repr(float(v)) for v in thetas[i]] + [str(int(flags[i]))]
            fh.write(",".join(cells) + "\n")


def read_trace(path):
    """Read a trace CSV back into (names, thetas, accept_flags)."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataFileError(f"{path}: {exc}") from None
    if not rows or rows[0][:1] != ["iter"] or rows[0][-1] != "accepted":
        raise DataFileError(f"{path}: not a trace file")
    names = rows[0][1:-1]
    thetas = np.array([[float(c) for c in row[1:-1]] for row in rows[1:]], dtype=float)
    flags = np.array([int(row[-1]) for row in rows[1:]], dtype=bool)
    return names, thetas.reshape(len(rows) - 1, len(names)), flags[1:]


SUMMARY_KEYS = (
    "acceptance_rate",
    "posterior_mean",
    "posterior_sd",
    "mle",
    "beta",
    "N",
    "T",
    "h",
    "seed",
)


def summary_dict(
    names,
    *,
    beta: float,
    n_increments: int,
    t_end: float,
    seed: int,
    acceptance_rate: float | None = None,
    posterior_mean=None,
    posterior_sd=None,
    mle=None,
    extras: dict | None = None,
) -> dict:
    """Assemble the stable JSON summary schema.

    Every key in SUMMARY_KEYS is always present (null when a command
    does not produce it); command-specific extras are appended.
    """
    names = list(names)

    def _named(vec):
        if vec is None:
            return None
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.size != len(names):
            raise ValueError("vector length does not match parameter names")
        return {n: float(v) for n, v in zip(names, vec)}

    out = {
        "acceptance_rate": None if acceptance_rate is None else float(acceptance_rate),
        "posterior_mean": _named(posterior_mean),
        "posterior_sd": _named(posterior_sd),
        "mle": _named(mle),
        "beta": float(beta),
        "N": int(n_increments),
        "T": float(t_end),
        "h": float(t_end) / int(n_increments),
        "seed": int(seed),
    }
    for key, val in (extras or {}).items():
        if key in out:
            raise ValueError(f"extra key {key!r} collides with the base schema")
        out[key] = val
    return out


def write_json(obj: dict, path) -> None:
    """Write a JSON artifact with sorted keys and a trailing newline."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")
