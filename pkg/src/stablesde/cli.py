"""Command-line surface.

Subcommands: simulate, fit, mle, sweep, bvm, pp, estimate-beta.  Every
command reads one TOML config (-c/--config) and writes its artifacts
into the config's output directory.  All randomness flows from the
single config seed, so repeated runs produce byte-identical files.
Exit codes: 0 success, 1 user error, 2 numerical failure; failures
print one machine-readable JSON line to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .diagnostics import (
    bvm_report,
    estimate_beta,
    posterior_residual_means,
    pp_data,
    sweep_acceptance,
)
from .errors import NumericalError, UserInputError
from .expressions import ThetaVector
from .io import (
    ExperimentConfig,
    load_config,
    load_csv,
    summary_dict,
    write_json,
    write_series,
    write_trace,
)
from .mcmc import run_chain
from .quasi import fisher_info, quasi_mle
from .simulate import ObservationSet, PathConfig, increments, simulate_path

DEFAULT_SWEEP_GRID = (10, 50, 100, 250, 500, 1000, 2000)


class _Parser(argparse.ArgumentParser):
    """Argument errors become UserInputError so main() maps them to exit 1."""

    def error(self, message):
        raise UserInputError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stablesde", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", required=True, help="TOML experiment config")
        p.add_argument("--output-dir", default=None, help="override config output_dir")
        p.set_defaults(func=func)
        return p

    cmd("simulate", _cmd_simulate, "write a synthetic observation series to CSV")

    fit = cmd("fit", _cmd_fit, "run the MCMC chain; write trace CSV and JSON summary")
    fit.add_argument("--burn-in", type=int, default=0)
    fit.add_argument("--thin", type=int, default=1)
    fit.add_argument("--init", choices=("auto", "theta0", "mle", "center"), default="auto")

    mle = cmd("mle", _cmd_mle, "maximize the quasi-likelihood; write JSON summary")
    mle.add_argument("--init", choices=("auto", "theta0", "center"), default="center")

    sweep = cmd("sweep", _cmd_sweep, "acceptance rate versus sample size table")
    sweep.add_argument("--n-list", default=",".join(map(str, DEFAULT_SWEEP_GRID)),
                       help="comma-separated increment counts")
    sweep.add_argument("--iterations", type=int, default=None,
                       help="chain length per cell (default: mcmc.iterations)")
    sweep.add_argument("--replicates", type=int, default=20)
    sweep.add_argument("--no-rate-scaling", action="store_true",
                       help="propose without the inverse rate-matrix step scaling")

    bvm = cmd("bvm", _cmd_bvm, "rescaled-posterior normality report (JSON)")
    bvm.add_argument("--center", choices=("auto", "theta0", "mle"), default="auto")
    bvm.add_argument("--burn-in", type=int, default=0)
    bvm.add_argument("--thin", type=int, default=1)

    pp = cmd("pp", _cmd_pp, "posterior-averaged residual p-p table (CSV)")
    pp.add_argument("--burn-in", type=int, default=0)
    pp.add_argument("--thin", type=int, default=1)
    pp.add_argument("--max-draws", type=int, default=200)

    cmd("estimate-beta", _cmd_estimate_beta, "fit the stability index from increments")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
        return 0
    except UserInputError as exc:
        _report_error(exc, 1)
        return 1
    except OSError as exc:
        _report_error(exc, 1)
        return 1
    except NumericalError as exc:
        _report_error(exc, 2)
        return 2


def _report_error(exc: Exception, code: int) -> None:
    line = json.dumps(
        {"error": type(exc).__name__, "exit_code": code, "message": str(exc)},
        sort_keys=True,
    )
    print(line, file=sys.stderr)


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def _setup(args):
    cfg = load_config(args.config)
    if args.output_dir:
        out_dir = Path(args.output_dir)
    else:
        # Config-relative, like data.path, so runs are location-independent.
        out_dir = Path(cfg.output_dir)
        if not out_dir.is_absolute():
            out_dir = Path(args.config).resolve().parent / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    return cfg, out_dir


def _streams(cfg: ExperimentConfig):
    """Independent child streams for data generation and the chain."""
    children = np.random.SeedSequence(cfg.mcmc.seed).spawn(2)
    return np.random.default_rng(children[0]), np.random.default_rng(children[1])


def _simulated_observations(cfg: ExperimentConfig, rng) -> ObservationSet:
    sim = cfg.data.simulate
    return simulate_path(
        cfg.model,
        cfg.theta0(),
        _config_beta(cfg),
        sim.n_increments,
        sim.t_end,
        PathConfig(seed=cfg.mcmc.seed, refine=sim.refine, x0=sim.x0),
        rng=rng,
    )


def _config_beta(cfg: ExperimentConfig) -> float:
    if isinstance(cfg.beta, str):
        raise UserInputError("beta = 'estimate' requires file input before this step")
    return float(cfg.beta)


def _estimate_beta_checked(obs: ObservationSet):
    try:
        return estimate_beta(increments(obs))
    except ValueError as exc:
        raise UserInputError(f"cannot estimate beta: {exc}") from None


def _resolve_observations(args, cfg: ExperimentConfig, data_rng):
    """Load or simulate the series, then fix the stability index."""
    if cfg.data.path is not None:
        path = Path(cfg.data.path)
        if not path.is_absolute():
            path = Path(args.config).resolve().parent / path
        obs = load_csv(path, cfg.data.column, cfg.data.t_end)
    else:
        obs = _simulated_observations(cfg, data_rng)
    if cfg.beta == "estimate":
        beta = float(_estimate_beta_checked(obs).value)
    else:
        beta = float(cfg.beta)
    return obs, beta


def _initial_theta(choice: str, cfg: ExperimentConfig, obs, beta) -> ThetaVector:
    if choice == "auto":
        choice = "theta0" if cfg.data.simulate is not None else "mle"
    if choice == "theta0":
        theta0 = cfg.theta0()
        if theta0 is None:
            raise UserInputError("init 'theta0' requires a data.simulate block")
        return theta0
    if choice == "center":
        return cfg.model.box_center()
    return quasi_mle(cfg.model, obs, beta).theta


def _named(model, vec) -> dict:
    return {n: float(v) for n, v in zip(model.names, np.asarray(vec, float).ravel())}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _cmd_simulate(args):
    cfg, out_dir = _setup(args)
    if cfg.data.simulate is None:
        raise UserInputError("the simulate command requires a data.simulate block")
    data_rng, _ = _streams(cfg)
    obs = _simulated_observations(cfg, data_rng)
    path = out_dir / "series.csv"
    write_series(obs, path)
    print(f"wrote {path}")


def _cmd_fit(args):
    cfg, out_dir = _setup(args)
    data_rng, chain_rng = _streams(cfg)
    obs, beta = _resolve_observations(args, cfg, data_rng)
    init = _initial_theta(args.init, cfg, obs, beta)
    trace = run_chain(
        cfg.model, obs, beta, cfg.build_prior(), cfg.build_mcmc(), init, rng=chain_rng
    )
    write_trace(trace, cfg.model.names, out_dir / "trace.csv")

    draws = trace.thetas[args.burn_in :: max(1, args.thin)]
    if draws.shape[0] < 2:
        raise UserInputError("burn-in/thinning left fewer than 2 draws")
    mean = draws.mean(axis=0)
    sd = draws.std(axis=0, ddof=1)
    theta_bar = cfg.model.split(mean)
    prev = obs.values[:-1]
    time_avg = {
        "drift": float(np.mean(cfg.model.drift_at(theta_bar, prev))),
        "scale": float(np.mean(cfg.model.scale_at(theta_bar, prev))),
    }
    summary = summary_dict(
        cfg.model.names,
        beta=beta,
        n_increments=obs.n_increments,
        t_end=obs.t_end,
        seed=cfg.mcmc.seed,
        acceptance_rate=trace.acceptance_rate,
        posterior_mean=mean,
        posterior_sd=sd,
        extras={"time_average": time_avg, "variant": cfg.mcmc.variant},
    )
    write_json(summary, out_dir / "summary.json")
    print(f"wrote {out_dir / 'trace.csv'} and {out_dir / 'summary.json'}")


def _cmd_mle(args):
    cfg, out_dir = _setup(args)
    data_rng, _ = _streams(cfg)
    obs, beta = _resolve_observations(args, cfg, data_rng)
    init = None
    if args.init != "center":
        init = _initial_theta(args.init, cfg, obs, beta)
    result = quasi_mle(cfg.model, obs, beta, init=init)
    summary = summary_dict(
        cfg.model.names,
        beta=beta,
        n_increments=obs.n_increments,
        t_end=obs.t_end,
        seed=cfg.mcmc.seed,
        mle=result.theta.full,
        extras={"loglik": float(result.loglik), "converged": bool(result.converged)},
    )
    write_json(summary, out_dir / "summary.json")
    print(f"wrote {out_dir / 'summary.json'}")


def _cmd_sweep(args):
    cfg, out_dir = _setup(args)
    if cfg.data.simulate is None:
        raise UserInputError("the sweep command requires a data.simulate block")
    try:
        n_list = [int(tok) for tok in args.n_list.split(",") if tok.strip()]
    except ValueError:
        raise UserInputError(f"--n-list must be comma-separated integers, got {args.n_list!r}")
    if not n_list:
        raise UserInputError("--n-list is empty")
    iterations = args.iterations if args.iterations is not None else cfg.mcmc.iterations
    mc = cfg.build_mcmc()
    result = sweep_acceptance(
        cfg.model,
        cfg.theta0(),
        _config_beta(cfg),
        n_list,
        iterations=iterations,
        replicates=args.replicates,
        base_seed=cfg.mcmc.seed,
        prior=cfg.build_prior(),
        proposal_cov=mc.proposal_cov,
        scale_by_rate=not args.no_rate_scaling,
        t_end=cfg.data.simulate.t_end,
        x0=cfg.data.simulate.x0,
    )
    path = out_dir / "sweep.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("N,mean_rate,sd_rate\n")
        for n, mean_rate, sd_rate in result.as_table():
            fh.write(f"{n},{repr(float(mean_rate))},{repr(float(sd_rate))}\n")
    for failure in result.failures:
        print(f"warning: {failure}", file=sys.stderr)
    print(f"wrote {path}")


def _cmd_bvm(args):
    cfg, out_dir = _setup(args)
    data_rng, chain_rng = _streams(cfg)
    obs, beta = _resolve_observations(args, cfg, data_rng)
    label = args.center
    if label == "auto":
        label = "theta0" if cfg.data.simulate is not None else "mle"
    center = _initial_theta(label, cfg, obs, beta)
    init = _initial_theta("auto", cfg, obs, beta)
    trace = run_chain(
        cfg.model, obs, beta, cfg.build_prior(), cfg.build_mcmc(), init, rng=chain_rng
    )
    info = fisher_info(cfg.model, center, obs, beta)
    report = bvm_report(
        trace, info, center, center_label=label, burn_in=args.burn_in, thin=args.thin
    )
    payload = {
        "center": _named(cfg.model, center.full),
        "center_label": report.center_label,
        "ks": _named(cfg.model, report.per_coordinate_ks),
        "bl_distance": float(report.bl_distance_estimate),
        "limit_mean": _named(cfg.model, report.limit_mean),
        "limit_cov": [[float(v) for v in row] for row in report.limit_cov],
        "acceptance_rate": trace.acceptance_rate,
        "beta": beta,
        "N": obs.n_increments,
        "T": obs.t_end,
        "seed": cfg.mcmc.seed,
    }
    path = out_dir / "bvm.json"
    write_json(payload, path)
    print(f"wrote {path}")


def _cmd_pp(args):
    cfg, out_dir = _setup(args)
    data_rng, chain_rng = _streams(cfg)
    obs, beta = _resolve_observations(args, cfg, data_rng)
    init = _initial_theta("auto", cfg, obs, beta)
    trace = run_chain(
        cfg.model, obs, beta, cfg.build_prior(), cfg.build_mcmc(), init, rng=chain_rng
    )
    means = posterior_residual_means(
        cfg.model, trace, obs, beta, burn_in=args.burn_in, thin=args.thin,
        max_draws=args.max_draws,
    )
    data = pp_data(means, beta)
    path = out_dir / "pp.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("empirical,model\n")
        for emp, mod in data.points:
            fh.write(f"{repr(float(emp))},{repr(float(mod))}\n")
    print(f"max_abs_deviation={repr(data.max_abs_deviation())}")
    print(f"wrote {path}")


def _cmd_estimate_beta(args):
    cfg, out_dir = _setup(args)
    data_rng, _ = _streams(cfg)
    if cfg.data.path is not None:
        obs, _ = _resolve_observations(args, cfg, data_rng)
    else:
        obs = _simulated_observations(cfg, data_rng)
    est = _estimate_beta_checked(obs)
    summary = summary_dict(
        cfg.model.names,
        beta=est.value,
        n_increments=obs.n_increments,
        t_end=obs.t_end,
        seed=cfg.mcmc.seed,
        extras={"beta_clamped": bool(est.clamped)},
    )
    path = out_dir / "beta.json"
    write_json(summary, path)
    print(f"beta={repr(float(est.value))}")
    print(f"wrote {path}")


if __name__ == "__main__":
    sys.exit(main())
