"""Command-line front end: parse a config, run one job, write flat-file results.

Usage:
    stackgame <model> <action> --config FILE [--out DIR] [--seed N]
              [--paths N] [--steps N]

models:  discrete | dynamic | meanfield
actions: equilibrium | defect | threshold-k | verify

Outputs land in the --out directory (default: alongside the config):
    report.txt       key/value report with certificates and warnings
    trajectory.csv   time-gridded channels, header `t,channel1,...`
    sweep.csv        penalty-rate sweeps: k, J_star, J_tilde, satisfied

Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import discrete, dynamic, meanfield
from .errors import ConfigurationError, ParameterError, StackgameError
from .numerics import TimeGrid

MODELS = ("discrete", "dynamic", "meanfield")
ACTIONS = ("equilibrium", "defect", "threshold-k", "verify")


@dataclass
class RunConfig:
    model: str
    action: str
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=lambda: {"n_steps": 2000})
    mc: dict = field(default_factory=lambda: {"n_paths": 10_000, "seed": 42})
    penalty: dict = field(default_factory=dict)
    out: str = "."
    seed: int = 42


@dataclass
class RunReport:
    config: RunConfig
    results: dict
    certificates: dict
    warnings: list
    trajectory: dict | None
    sweep: list | None
    wall_time: float


_ALLOWED = {
    "top": {"model", "action", "params", "grid", "mc", "penalty", "out", "seed"},
    "grid": {"n_steps"},
    "mc": {"n_paths", "seed", "n_steps", "zero_noise"},
    "penalty": {"k", "t0", "m", "N", "mode", "tol"},
}


def parse_config(document: str) -> RunConfig:
    """Parse a YAML config document into a validated RunConfig.

    Fills defaults (2000 grid steps, 10^4 paths, seed 42) and rejects any
    unknown key with a message naming it.
    """
    try:
        raw = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a mapping at the top level")
    unknown = set(raw) - _ALLOWED["top"]
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    for section in ("grid", "mc", "penalty"):
        sub = raw.get(section, {})
        if not isinstance(sub, dict):
            raise ConfigurationError(f"'{section}' must be a mapping")
        bad = set(sub) - _ALLOWED[section]
        if bad:
            raise ConfigurationError(f"unknown key(s) in '{section}': {', '.join(sorted(bad))}")
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigurationError("'params' must be a mapping")

    cfg = RunConfig(
        model=str(raw.get("model", "")),
        action=str(raw.get("action", "")),
        params=dict(params),
        grid={"n_steps": 2000, **raw.get("grid", {})},
        mc={"n_paths": 10_000, "seed": 42, **raw.get("mc", {})},
        penalty=dict(raw.get("penalty", {})),
        out=str(raw.get("out", ".")),
        seed=int(raw.get("seed", 42)),
    )
    _validate_types(cfg)
    return cfg


def _validate_types(cfg: RunConfig) -> None:
    if cfg.model and cfg.model not in MODELS:
        raise ConfigurationError(f"unknown model {cfg.model!r}; expected one of {MODELS}")
    if cfg.action and cfg.action not in ACTIONS:
        raise ConfigurationError(f"unknown action {cfg.action!r}; expected one of {ACTIONS}")
    for key, val in [("grid.n_steps", cfg.grid["n_steps"]), ("mc.n_paths", cfg.mc["n_paths"])]:
        if not isinstance(val, int) or val < 2:
            raise ConfigurationError(f"{key} must be an integer >= 2, got {val!r}")
    for name, val in cfg.params.items():
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ConfigurationError(f"params.{name} must be a number, got {val!r}")


def emit_config(cfg: RunConfig) -> str:
    """Serialize a RunConfig so that parse_config(emit_config(c)) == c."""
    return yaml.safe_dump(asdict(cfg), sort_keys=False)


def _n_workers() -> int:
    """Worker-count hint; results are worker-count independent by contract."""
    try:
        return max(1, int(os.environ.get("STACKGAME_WORKERS", "1")))
    except ValueError:
        return 1


def _cert(label: str, lhs: float, rhs: float, tol: float, op: str = "<=") -> tuple[str, str]:
    ok = lhs <= rhs + tol if op == "<=" else abs(lhs - rhs) <= tol
    mid = f"{lhs:.10g} {op} {rhs:.10g}" if op == "<=" else f"|{lhs:.10g} - {rhs:.10g}| <= {tol:g}"
    return label, f"{mid} (tol {tol:g}) : {'PASS' if ok else 'FAIL'}"


# ---------------------------------------------------------------- discrete

def _discrete_params(cfg: RunConfig) -> discrete.DuopolyParams:
    try:
        return discrete.DuopolyParams(**cfg.params)
    except TypeError as exc:
        raise ConfigurationError(f"bad discrete params: {exc}") from exc


def _run_discrete(cfg: RunConfig):
    p = _discrete_params(cfg)
    N = int(cfg.penalty.get("N", 10))
    results, certs, warnings, traj, sweep = {}, {}, [], None, None
    eq = discrete.one_shot_equilibrium(p)
    u0_hat, j_hat, gain = discrete.one_shot_defection(p)
    results.update(
        u0_star=eq.u0, u1_star=eq.u1, J0_star=eq.J0, J1_star=eq.J1,
        u0_hat=u0_hat, J0_hat=j_hat, defection_gain=gain,
    )
    if eq.boundary:
        warnings.append("boundary-equilibrium (an output clamped at zero)")

    if cfg.action == "equilibrium":
        pass
    elif cfg.action == "defect":
        k = float(cfg.penalty.get("k", 0.1))
        m = int(cfg.penalty.get("m", 1))
        sched = discrete.discount_schedule(p, k, m, N)
        results.update(k=k, m=m, N=N, total_defection_payoff=sched.total,
                       total_equilibrium_payoff=N * eq.J0,
                       deposit_forfeited=sched.deposit_forfeited)
        certs["deterred"] = _cert(
            "deterred", sched.total, N * eq.J0, 1e-9)[1]
        traj = {
            "t": np.arange(1, N + 1, dtype=float),
            "rho": sched.rho,
            "payoff": sched.ledger,
        }
    elif cfg.action == "threshold-k":
        mode = str(cfg.penalty.get("mode", "worst-case"))
        m = cfg.penalty.get("m")
        res = discrete.min_k_discrete(p, N, mode=mode, m=m)
        results.update(k_min=res.k_min, N=N, mode=mode,
                       J_star_total=res.j_star, J_tilde_at_k=res.j_tilde_at_k)
        certs["ledger"] = _cert("ledger", res.j_tilde_at_k, res.j_star, 1e-9)[1]
        sweep = []
        k_hi = 1.0 / gain if gain > 0 else 1.0
        for k in np.linspace(max(1e-6, res.k_min / 5), min(2 * res.k_min + 1e-6, k_hi * 0.999), 25):
            worst = max(
                discrete.discount_schedule(p, float(k), m0, N).total for m0 in range(1, N + 1)
            )
            sweep.append((float(k), res.j_star, worst, worst <= res.j_star + 1e-9))
    elif cfg.action == "verify":
        certs["ratio_9"] = _cert("ratio_9", j_hat / gain, 9.0, 1e-12, op="~")[1]
        certs["ratio_8"] = _cert("ratio_8", eq.J0 / gain, 8.0, 1e-12, op="~")[1]
        oracle = discrete.brute_force_oracle(p, 10**6)
        certs["oracle_u0"] = _cert("oracle_u0", oracle.u0, eq.u0, 1e-5, op="~")[1]
        certs["oracle_J0"] = _cert("oracle_J0", oracle.J0, eq.J0, 1e-5, op="~")[1]
    return results, certs, warnings, traj, sweep


# ----------------------------------------------------------------- dynamic

def _dynamic_params(cfg: RunConfig) -> dynamic.DynamicParams:
    try:
        return dynamic.DynamicParams(**cfg.params)
    except TypeError as exc:
        raise ConfigurationError(f"bad dynamic params: {exc}") from exc


def _run_dynamic(cfg: RunConfig):
    p = _dynamic_params(cfg)
    grid = TimeGrid(0.0, p.T, int(cfg.grid["n_steps"]))
    results, certs, warnings, traj_out, sweep = {}, {}, [], None, None
    ss = dynamic.saddle_structure(p)
    results.update(Delta=ss.Delta, s1=ss.s1, s2=ss.s2, lambda0=ss.lambda0)
    traj = dynamic.equilibrium_trajectories(p, grid)
    warnings.extend(getattr(traj, "warnings", []))
    j_star = dynamic.equilibrium_payoff(p, grid)
    results["J0_star"] = j_star

    if cfg.action == "equilibrium":
        oracle = dynamic.bvp_oracle_trajectories(p, grid)
        sup = max(
            float(np.abs(traj["x1"] - oracle["x1"]).max()),
            float(np.abs(traj["lam"] - oracle["lam"]).max()),
        )
        certs["bvp_oracle"] = _cert("bvp_oracle", sup, 0.0, 1e-6, op="~")[1]
        certs["lambda_T"] = _cert("lambda_T", abs(traj["lam"][-1]), 0.0, 1e-8, op="~")[1]
        traj_out = {"t": grid.times(), **traj.channels}
    elif cfg.action == "defect":
        k = float(cfg.penalty.get("k", 0.1))
        t0 = float(cfg.penalty.get("t0", 0.0))
        j_tilde = dynamic.defection_payoff(p, k, t0, grid)
        results.update(k=k, t0=t0, J_tilde=j_tilde)
        certs["deterred"] = _cert("deterred", j_tilde, j_star, 1e-9)[1]
        certs["identity"] = _cert(
            "identity", dynamic.check_equ20_identity(p, k, grid), 0.0, 1e-10, op="~")[1]
        traj_out = {"t": grid.times(), **traj.channels}
    elif cfg.action == "threshold-k":
        res = dynamic.min_k_dynamic(p, grid)
        res_q = dynamic.min_k_dynamic(p, grid, use_quadrature=True)
        results.update(k_min=res.k_min, k_min_quadrature=res_q.k_min,
                       J_tilde_at_k=res.j_tilde_at_k)
        certs["closed_vs_quadrature"] = _cert(
            "closed_vs_quadrature", res.k_min, res_q.k_min, 1e-6, op="~")[1]
        certs["deterred_t0_0"] = _cert("deterred_t0_0", res.j_tilde_at_k, j_star, 1e-9)[1]
        for t0, j in res.details["t0_scan"].items():
            certs[f"deterred_t0_{t0:g}"] = _cert(f"t0={t0:g}", j, j_star, 1e-9)[1]
        if not res.deterred:
            warnings.append(
                "threshold certified for a defection at t0=0 only; later defection "
                "times stay profitable at this rate (penalty clock restarts at t0)"
            )
        sweep = []
        for k in np.linspace(max(1e-6, res.k_min / 5), 2 * res.k_min + 1e-6, 25):
            j = dynamic.defection_payoff(p, float(k), 0.0, grid)
            sweep.append((float(k), j_star, j, j <= j_star + 1e-9))
    elif cfg.action == "verify":
        oracle = dynamic.bvp_oracle_trajectories(p, grid)
        sup = max(
            float(np.abs(traj["x1"] - oracle["x1"]).max()),
            float(np.abs(traj["lam"] - oracle["lam"]).max()),
        )
        certs["bvp_oracle"] = _cert("bvp_oracle", sup, 0.0, 1e-6, op="~")[1]
        for k in (0.0, 0.1, 0.3, 1.0):
            certs[f"identity_k_{k:g}"] = _cert(
                f"identity_k_{k:g}", dynamic.check_equ20_identity(p, k, grid), 0.0,
                1e-10, op="~")[1]
        for k in (0.05, 0.1, 0.3, 1.0):
            lhs = dynamic.theorem2_lhs(p, k)
            quad = 64.0 * p.b * (j_star - dynamic.defection_payoff(p, k, 0.0, grid))
            rel = abs(lhs - quad) / (abs(quad) + 1e-30)
            certs[f"reconciliation_k_{k:g}"] = _cert(
                f"reconciliation_k_{k:g}", rel, 0.0, 1e-4, op="~")[1]
    return results, certs, warnings, traj_out, sweep


# --------------------------------------------------------------- meanfield

def _meanfield_params(cfg: RunConfig) -> meanfield.MfgParams:
    try:
        return meanfield.MfgParams(**cfg.params)
    except TypeError as exc:
        raise ConfigurationError(f"bad meanfield params: {exc}") from exc


def _mc_config(cfg: RunConfig) -> meanfield.McConfig:
    return meanfield.McConfig(
        n_paths=int(cfg.mc["n_paths"]),
        n_steps=int(cfg.mc.get("n_steps", 1000)),
        seed=int(cfg.mc["seed"]),
        zero_noise=bool(cfg.mc.get("zero_noise", False)),
    )


def _run_meanfield(cfg: RunConfig):
    p = _meanfield_params(cfg)
    mc = _mc_config(cfg)
    grid = TimeGrid(0.0, p.T, mc.n_steps)
    results, certs, warnings, traj_out, sweep = {}, {}, [], None, None
    sol = meanfield.mean_field_bvp(p, grid)

    if cfg.action == "equilibrium":
        for name, v in sol.boundary_residuals.items():
            certs[f"boundary_{name}"] = _cert(name, v, 0.0, 1e-8, op="~")[1]
        for name, v in sol.ode_residuals.items():
            certs[f"ode_{name}"] = _cert(name, v, 0.0, 1e-6, op="~")[1]
        traj_out = {"t": grid.times(), **sol.channels}
    elif cfg.action == "defect":
        k = float(cfg.penalty.get("k", 0.0))
        j_eq, j_def = meanfield.mc_payoffs(p, k, mc, sol=sol)
        results.update(
            k=k, J0_star=j_eq.mean, J0_star_se=j_eq.stderr,
            J_tilde=j_def.mean, J_tilde_se=j_def.stderr,
        )
        certs["deterred_3se"] = _cert(
            "deterred_3se", j_def.mean + 3 * j_def.stderr,
            j_eq.mean - 3 * j_eq.stderr, 0.0)[1]
        traj_out = {"t": grid.times(), **sol.channels}
    elif cfg.action == "threshold-k":
        tol = float(cfg.penalty.get("tol", 0.01))
        res = meanfield.min_k_meanfield(p, mc, tol=tol)
        results.update(
            k_min=res.k_min, J0_star=res.j_star, J_tilde_at_k=res.j_tilde_at_k,
            J0_star_se=res.details["j_star_stderr"],
            J_tilde_se=res.details["j_tilde_stderr"],
            growth_rate=res.details["growth_rate"],
            growth_bound=res.details["growth_bound"],
        )
        certs["deterred_3se"] = _cert(
            "deterred_3se",
            res.j_tilde_at_k + 3 * res.details["j_tilde_stderr"],
            res.j_star - 3 * res.details["j_star_stderr"], 0.0)[1]
        warnings.extend(res.details["warnings"])
        sweep = [
            (k, res.j_star, jt, jt + 3 * se < res.j_star - 3 * res.details["j_star_stderr"])
            for k, jt, se in res.details["trace"]
        ]
    elif cfg.action == "verify":
        for name, v in sol.boundary_residuals.items():
            certs[f"boundary_{name}"] = _cert(name, v, 0.0, 1e-8, op="~")[1]
        for name, v in sol.ode_residuals.items():
            certs[f"ode_{name}"] = _cert(name, v, 0.0, 1e-6, op="~")[1]
        fb = meanfield.follower_feedback_check(p, grid, mc)
        certs["feedback_mean_3se"] = _cert(
            "feedback_mean_3se", abs(fb["mean_residual"]), 3 * fb["stderr"], 0.0)[1]
        je0, jd0 = meanfield.mean_payoffs(p, 0.0, mc)
        results.update(J0_star_mean=je0, J_tilde_mean_at_0=jd0)
    return results, certs, warnings, traj_out, sweep


# ------------------------------------------------------------------ driver

_RUNNERS = {"discrete": _run_discrete, "dynamic": _run_dynamic, "meanfield": _run_meanfield}


def run(cfg: RunConfig) -> RunReport:
    """Dispatch one job and return the in-memory report."""
    if cfg.model not in MODELS:
        raise ConfigurationError(f"unknown model {cfg.model!r}")
    if cfg.action not in ACTIONS:
        raise ConfigurationError(f"unknown action {cfg.action!r}")
    start = time.perf_counter()
    results, certs, warnings, traj, sweep = _RUNNERS[cfg.model](cfg)
    return RunReport(
        config=cfg, results=results, certificates=certs, warnings=warnings,
        trajectory=traj, sweep=sweep, wall_time=time.perf_counter() - start,
    )


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def write_report(report: RunReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["[config]"]
    cfg = asdict(report.config)
    for key in ("model", "action", "seed", "out"):
        lines.append(f"{key} = {cfg[key]}")
    for section in ("params", "grid", "mc", "penalty"):
        for k, v in cfg[section].items():
            lines.append(f"{section}.{k} = {_fmt(v)}")
    lines.append(f"workers = {_n_workers()}")
    lines.append("")
    lines.append("[results]")
    for k, v in report.results.items():
        lines.append(f"{k} = {_fmt(v)}")
    lines.append("")
    lines.append("[certificates]")
    for k, v in report.certificates.items():
        lines.append(f"{k} = {v}")
    lines.append("")
    lines.append("[warnings]")
    for w in report.warnings:
        lines.append(f"- {w}")
    lines.append("")
    lines.append(f"wall_time_s = {report.wall_time:.3f}")
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n")

    if report.trajectory is not None:
        names = list(report.trajectory)
        cols = [np.asarray(report.trajectory[n], dtype=float) for n in names]
        with open(out_dir / "trajectory.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in zip(*cols):
                w.writerow([f"{v:.12g}" for v in row])
    if report.sweep is not None:
        with open(out_dir / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "J_star", "J_tilde", "satisfied"])
            for k, js, jt, sat in report.sweep:
                w.writerow([f"{k:.12g}", f"{js:.12g}", f"{jt:.12g}", str(bool(sat)).lower()])


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="stackgame",
        description="Stackelberg-game equilibrium, defection, and penalty-threshold engine",
    )
    ap.add_argument("model", choices=MODELS)
    ap.add_argument("action", choices=ACTIONS)
    ap.add_argument("--config", required=True, help="YAML config file")
    ap.add_argument("--out", default=None, help="output directory (default: config directory)")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--paths", type=int, default=None, help="override mc.n_paths")
    ap.add_argument("--steps", type=int, default=None, help="override grid.n_steps / mc.n_steps")
    return ap


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        cfg = parse_config(Path(args.config).read_text())
        cfg.model, cfg.action = args.model, args.action
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.mc["seed"] = args.seed
        if args.paths is not None:
            cfg.mc["n_paths"] = args.paths
        if args.steps is not None:
            cfg.grid["n_steps"] = args.steps
            cfg.mc["n_steps"] = args.steps
        if args.out is not None:
            cfg.out = args.out
        _validate_types(cfg)
        report = run(cfg)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StackgameError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    out_dir = Path(cfg.out) if cfg.out != "." else Path(args.config).resolve().parent
    write_report(report, out_dir)
    print(f"wrote {out_dir / 'report.txt'}")
    for name in ("trajectory.csv", "sweep.csv"):
        if (out_dir / name).exists() and (
            (name == "trajectory.csv" and report.trajectory is not None)
            or (name == "sweep.csv" and report.sweep is not None)
        ):
            print(f"wrote {out_dir / name}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
