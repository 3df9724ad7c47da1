"""Command-line entry points.

Every subcommand builds a :class:`RunConfig` (defaults, then the
``COLLAPSE_WALK_SEED`` environment variable for the seed, then ``--config``
JSON, then flags), runs, and writes a summary JSON embedding a run
manifest.  Exit codes: 0 pass, 1 invariant or acceptance failure, 2
configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import __version__
from .io import atomic_write, csv_text, dumps
from .oracle import enumerate_cycle, zeta_closed_forms
from .parallel import run_blocks
from .process import ModelParams, StopCondition, TruncationError, simulate, trajectory_rows
from .queue import CouplingViolation, busy_cycle_mean, coupled_run, simulate_queue
from .regeneration import (check_bounds, collect, cycle_time_bound, estimate, iid_diagnostics,
                           mean_increment_zero_test)
from .rng import mix_seed
from .scaling import (baseline_compare, clt_test, increment_correlation, marginal_from_paths,
                      recurrence_stats, sample_paths, variance_growth)

DEFAULT_SEED = 20240917
SEED_ENV = "COLLAPSE_WALK_SEED"
# fields that affect how a run executes but never what it computes
EXECUTION_ONLY = ("workers", "out_path", "timing")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    lam: float = 1.0
    p: float = 1.0
    mu: float = 10.0
    dim: int = 1
    seed: int = DEFAULT_SEED
    replicas: Optional[int] = None
    horizon: Optional[float] = None
    cycles: Optional[int] = None
    out_format: str = "json"
    out_path: Optional[str] = None
    workers: int = 1
    confidence: float = 0.99
    coeff: Optional[float] = None
    regen_summary: Optional[str] = None
    mass_tol: float = 1e-8
    depth: int = 500
    timing: bool = False

    def params(self) -> ModelParams:
        try:
            return ModelParams(self.lam, self.p, self.mu, self.dim)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def validate(self) -> None:
        self.params()
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError(f"workers must be an integer >= 1, got {self.workers!r}")
        if not 0 < self.confidence < 1:
            raise ConfigError(f"confidence must lie in (0, 1), got {self.confidence!r}")
        if self.out_format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.out_format!r}")
        for name in ("replicas", "cycles"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, int) or v < 1):
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        if self.horizon is not None and not (self.horizon >= 0 and math.isfinite(self.horizon)):
            raise ConfigError(f"horizon must be a finite real >= 0, got {self.horizon!r}")
        if not isinstance(self.seed, int) or self.seed < 0 or self.seed >= 2**64:
            raise ConfigError(f"seed must be an integer in [0, 2**64), got {self.seed!r}")

    def echo(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        for key in EXECUTION_ONLY:
            out.pop(key)
        return out


# RunConfig field name as it appears in config files and flags
FILE_KEYS = {"lambda": "lam"}


def load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    seed_env = os.environ.get(SEED_ENV)
    if seed_env is not None:
        try:
            cfg.seed = int(seed_env, 0)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {seed_env!r}") from None
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        known = {f.name for f in fields(RunConfig)}
        for key, value in data.items():
            name = FILE_KEYS.get(key, key)
            if name not in known:
                raise ConfigError(f"unknown config field {key!r}")
            setattr(cfg, name, value)
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    cfg.validate()
    return cfg


class Run:
    """Collects checks, seeds and outputs for one command invocation."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.checks: dict[str, bool] = {}
        self.seeds = [cfg.seed]
        self.alternate_seeds: list[int] = []
        self.violations = 0
        self.started = time.perf_counter()

    def check(self, name: str, ok: bool) -> None:
        self.checks[name] = bool(ok)

    @property
    def passed(self) -> bool:
        return self.violations == 0 and all(self.checks.values())

    def manifest(self) -> dict:
        wall = round(time.perf_counter() - self.started, 3) if self.cfg.timing else None
        return {
            "command": self.command,
            "config": self.cfg.echo(),
            "tool_version": __version__,
            "wall_time_s": wall,
            "checks": self.checks,
            "seeds": self.seeds,
            "alternate_seeds": self.alternate_seeds,
            "invariant_violations": self.violations,
            "passed": self.passed,
        }

    def finish(self, summary: dict, csv_rows=None) -> int:
        summary = dict(summary)
        summary["manifest"] = self.manifest()
        text = dumps(summary)
        out = self.cfg.out_path
        if out:
            if csv_rows is not None and self.cfg.out_format == "csv":
                atomic_write(out + ".csv", csv_text(csv_rows))
            atomic_write(out + ".json", text)
        elif csv_rows is not None and self.cfg.out_format == "csv":
            sys.stdout.write(csv_text(csv_rows))
        else:
            sys.stdout.write(text)
        return 0 if self.passed else 1


def cmd_simulate(cfg: RunConfig) -> int:
    run = Run("simulate", cfg)
    params = cfg.params()
    horizon = 1000.0 if cfg.horizon is None else cfg.horizon
    try:
        traj = simulate(params, cfg.seed, StopCondition(horizon=horizon, max_events=10**9))
    except TruncationError as exc:
        traj = exc.trajectory
        run.violations += 1
    final = traj.final_state
    run.check("l1_within_attempts", sum(map(abs, final.position)) <= final.attempts)
    summary = {"n_events": traj.n_events, "final_position": list(final.position),
               "final_broken": len(final.broken), "attempts": final.attempts,
               "clock": final.clock}
    return run.finish(summary, trajectory_rows(traj))


def _regen_parts(cfg: RunConfig, params: ModelParams, cycles: int):
    samples = collect(params, cycles, cfg.seed, cfg.workers)
    est = estimate(samples, cfg.confidence)
    return samples, est


def cmd_regen(cfg: RunConfig) -> int:
    run = Run("regen", cfg)
    params = cfg.params()
    if params.p <= 0:
        raise ConfigError("regen needs p > 0: with p = 0 no bond breaks and no cycle ends")
    cycles = cfg.cycles or 100_000
    samples, est = _regen_parts(cfg, params, cycles)
    run.violations += samples.truncated
    bounds = check_bounds(est, samples, params)
    zero = mean_increment_zero_test(samples, cfg.confidence)
    iid = iid_diagnostics(samples) if len(samples) >= 100 else None
    for b in bounds.bounds:
        run.check(f"bound_{b.name}", not b.violated)
    run.check("mean_increment_zero", zero.passed)
    if iid is not None:
        run.check("iid_diagnostics", iid.passed)
    summary = {"estimate": est.to_dict(), "bounds": bounds.to_dict(),
               "mean_increment_zero": zero.to_dict(),
               "iid_diagnostics": iid.to_dict() if iid else None,
               "truncated_cycles": samples.truncated}
    return run.finish(summary, samples.rows())


def cmd_queue(cfg: RunConfig) -> int:
    run = Run("queue", cfg)
    params = cfg.params()
    if params.p <= 0:
        raise ConfigError("queue needs p > 0 (arrival rate lambda * p)")
    rate = params.lam * params.p
    cycles = cfg.cycles or 100_000
    est = busy_cycle_mean(rate, params.mu, cycles, cfg.seed, cfg.workers)
    horizon = 100.0 if cfg.horizon is None else cfg.horizon
    traj = simulate_queue(rate, params.mu, cfg.seed, horizon)
    run.check("busy_cycle_within_3se", abs(est.z_score) <= 3)
    rows = [["time", "event", "q"]] + [[repr(t), k, q] for t, k, q in
                                       zip(traj.times, traj.kinds, traj.customers)]
    return run.finish({"busy_cycle": est.to_dict(), "queue_events": len(traj.times)}, rows)


def cmd_couple(cfg: RunConfig) -> int:
    run = Run("couple", cfg)
    params = cfg.params()
    if params.p <= 0:
        raise ConfigError("couple needs p > 0")
    horizon = 100.0 if cfg.horizon is None else cfg.horizon
    replicas = cfg.replicas or 10_000

    def work(block, lo, hi):
        bad, strict = 0, 0
        for r in range(lo, hi):
            try:
                rec = coupled_run(params, mix_seed(cfg.seed, r), horizon)
            except CouplingViolation:
                bad += 1
                continue
            strict += sum(b < q for b, q in zip(rec.b, rec.q))
        return bad, strict

    parts = run_blocks(work, replicas, cfg.workers, size=1000)
    run.violations += sum(b for b, _ in parts)
    first = coupled_run(params, mix_seed(cfg.seed, 0), horizon)
    cycles = cfg.cycles or 100_000
    est = busy_cycle_mean(params.lam * params.p, params.mu, cycles, cfg.seed, cfg.workers)
    run.check("busy_cycle_within_3se", abs(est.z_score) <= 3)
    summary = {"violations": run.violations, "replicas": replicas, "horizon": horizon,
               "strict_events": sum(s for _, s in parts),
               "busy_cycle": est.to_dict(),
               "cycle_time_bound": cycle_time_bound(params)}
    return run.finish(summary, first.rows())


def cmd_oracle(cfg: RunConfig) -> int:
    run = Run("oracle", cfg)
    params = cfg.params()
    forms = zeta_closed_forms(params.lam, params.mu)
    run.check("gap_identity", math.isclose(forms.gap, forms.e_x_zeta_sq - params.lam * forms.e_zeta,
                                           rel_tol=1e-12))
    summary = {"zeta_forms": forms.to_dict(), "zeta_forms_valid": params.p == 1}
    if params.dim == 1 and params.p > 0:
        res = enumerate_cycle(params, cfg.depth, cfg.mass_tol)
        summary.update(res.to_dict())
        run.check("mass_conservation",
                  abs(res.alpha.absorbed_mass + res.alpha.residual_mass - 1) <= 1e-12)
    return run.finish(summary)


def _coefficient(cfg: RunConfig, params: ModelParams, run: Run):
    """(coeff, se) from --coeff, a regen summary file, p = 0, or a fresh regen run."""
    if cfg.coeff is not None:
        return float(cfg.coeff), 0.0, "flag"
    if cfg.regen_summary:
        try:
            with open(cfg.regen_summary) as fh:
                est = json.load(fh)["estimate"]
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read regen summary {cfg.regen_summary}: {exc}") from None
        return est["coeff"], est["se_coeff"], "regen_summary"
    if params.p == 0:
        return params.lam, 0.0, "free_walk"
    samples, est = _regen_parts(cfg, params, cfg.cycles or 1_000_000)
    run.violations += samples.truncated
    return est.coeff, est.se_coeff, "regen"


def cmd_clt(cfg: RunConfig) -> int:
    run = Run("clt", cfg)
    params = cfg.params()
    n = 10_000.0 if cfg.horizon is None else cfg.horizon
    if n < 1:
        raise ConfigError("clt needs horizon (n) >= 1")
    replicas = cfg.replicas or 10_000
    if replicas < 100:
        raise ConfigError("clt needs replicas >= 100")
    coeff, se_coeff, source = _coefficient(cfg, params, run)
    grid = [n * f for f in (0.1, 0.2, 0.4, 0.5, 0.7, 1.0)]
    paths = sample_paths(params, grid, replicas, cfg.seed, cfg.workers)
    run.violations += paths.truncated
    sample = marginal_from_paths(paths, n, 1.0, len(grid) - 1)
    report = clt_test(sample, coeff)
    growth = variance_growth(paths)
    decor = increment_correlation(paths, 3, 5)
    scalar = float(np.mean(np.diag(np.atleast_2d(coeff))))
    run.check("ks_below_critical", report.passed)
    run.check("slope_within_5pct", abs(growth.slope - scalar) <= 0.05 * scalar)
    run.check("intercept_within_4se", abs(growth.intercept) <= 4 * growth.se_intercept)
    run.check("increments_decorrelated", decor["passed"])
    summary = {"coeff": coeff, "se_coeff": se_coeff, "coeff_source": source,
               "ks": report.to_dict(), "variance_growth": growth.to_dict(),
               "increment_correlation": decor}
    return run.finish(summary, sample.rows())


def cmd_recur(cfg: RunConfig) -> int:
    run = Run("recur", cfg)
    params = cfg.params()
    top = 10_000.0 if cfg.horizon is None else cfg.horizon
    horizons = [top / 100, top / 10, top]
    replicas = cfg.replicas or 10_000
    if replicas < 100:
        raise ConfigError("recur needs replicas >= 100")
    stats_ = recurrence_stats(params, horizons, replicas, cfg.seed, cfg.workers)
    base = recurrence_stats(ModelParams(params.lam, 0.0, params.mu, params.dim), horizons,
                            replicas, cfg.seed, cfg.workers)
    frac = stats_.fraction_returned
    run.check("nondecreasing", all(b >= a for a, b in zip(frac, frac[1:])))
    run.check("exceeds_baseline", frac[-1] >= base.fraction_returned[0])
    return run.finish({"recurrence": stats_.to_dict(), "baseline": base.to_dict()})


def cmd_compare(cfg: RunConfig) -> int:
    run = Run("compare", cfg)
    params = cfg.params()
    cycles = cfg.cycles or 1_000_000
    if params.p > 0 and (cfg.coeff is not None or cfg.regen_summary):
        coeff, se, _ = _coefficient(cfg, params, run)
        rep = baseline_compare(params, cycles, cfg.seed, cfg.confidence, cfg.workers, coeff, se)
    else:
        rep = baseline_compare(params, cycles, cfg.seed, cfg.confidence, cfg.workers)
    return run.finish({"compare": rep.to_dict()})


COMMANDS = {
    "simulate": cmd_simulate,
    "regen": cmd_regen,
    "queue": cmd_queue,
    "couple": cmd_couple,
    "oracle": cmd_oracle,
    "clt": cmd_clt,
    "recur": cmd_recur,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--p", type=float)
    common.add_argument("--mu", type=float)
    common.add_argument("--dim", type=int)
    common.add_argument("--seed", type=lambda s: int(s, 0))
    common.add_argument("--replicas", type=int)
    common.add_argument("--cycles", type=int)
    common.add_argument("--horizon", type=float)
    common.add_argument("--workers", type=int)
    common.add_argument("--confidence", type=float)
    common.add_argument("--out", "--out-path", dest="out_path")
    common.add_argument("--format", "--out-format", dest="out_format", choices=("csv", "json"))
    common.add_argument("--config")
    common.add_argument("--coeff", type=float, help="diffusion coefficient for clt/compare")
    common.add_argument("--regen-summary", help="summary JSON written by `regen`")
    common.add_argument("--mass-tol", type=float, help="oracle residual-mass target")
    common.add_argument("--depth", type=int, help="oracle expansion depth limit")
    common.add_argument("--timing", action="store_const", const=True,
                        help="record wall time in the manifest (outputs stop being reproducible)")
    parser = argparse.ArgumentParser(prog="collapse-walk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"collapse-walk {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except CouplingViolation as exc:
        print(f"collapse-walk {args.command}: invariant violation: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
