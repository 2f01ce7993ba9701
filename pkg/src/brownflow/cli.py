"""Command-line experiment driver.

Subcommands: ``flow``, ``coalesce``, ``wasserstein``, ``diagnose``, ``converge``.
The time horizon is 1, so ``--steps M`` fixes the step ``h = 1/M``.

Exit status: 0 all selected checks pass, 1 some check failed,
2 invalid configuration, 3 simulation error.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .coalescing import simulate_coalescing_ensemble
from .diagnostics import DiagnosticsReport, block_monotone_check, merge_rate_check
from .experiments import CHECKS, DiagnoseConfig, convergence_sweep, run_diagnostics
from .flow import MODES, SimConfig, simulate_flow
from .kernel import QuadratureError
from .measures import EmpiricalMeasure, TransportError, monotone_plan, optimal_plan, phi_n

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SIM = 0, 1, 2, 3
PATH_VALUE_BUDGET = 20_000_000


class ConfigError(ValueError):
    pass


def _floats(text: str, flag: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{flag}: expected comma-separated numbers, got {text!r}") from None
    if not vals or not all(math.isfinite(v) for v in vals):
        raise ConfigError(f"{flag}: expected finite numbers, got {text!r}")
    return vals


def _parse_mu0(text: str) -> EmpiricalMeasure:
    p = Path(text)
    try:
        if p.exists():
            return EmpiricalMeasure.from_csv(p.read_text())
        atoms, weights = [], []
        for item in text.split(","):
            a, _, w = item.partition(":")
            atoms.append(float(a))
            weights.append(float(w) if w else float("nan"))
        if all(math.isnan(w) for w in weights):
            return EmpiricalMeasure.uniform(np.array(atoms))
        return EmpiricalMeasure(np.array(atoms), np.array(weights))
    except ValueError as exc:
        raise ConfigError(f"--mu0: {exc}") from None


def _starts_and_weights(args) -> tuple[list[float], list[float] | None]:
    if args.mu0 is not None:
        mu0 = _parse_mu0(args.mu0)
        if mu0.dim != 1:
            raise ConfigError("--mu0 must be one-dimensional")
        order = np.argsort(mu0.atoms[:, 0], kind="stable")
        atoms = mu0.atoms[order, 0].tolist()
        weights = mu0.weights[order].tolist()
        if args.starts is not None and _floats(args.starts, "--starts") != atoms:
            raise ConfigError("--starts and --mu0 disagree on the atoms")
        return atoms, weights
    if args.starts is None:
        raise ConfigError("one of --starts or --mu0 is required")
    return _floats(args.starts, "--starts"), None


def _record_every(args, replicas: int, n: int) -> int:
    if args.record_every is not None:
        k = args.record_every
    else:
        k = 1
        while replicas * (args.steps // k + 1) * n > PATH_VALUE_BUDGET or args.steps % k:
            k += 1
    if k < 1 or args.steps % k:
        raise ConfigError("--record-every must divide --steps")
    return k


def _common(p: argparse.ArgumentParser, simulation: bool = True) -> None:
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1)
    if simulation:
        p.add_argument("--starts", help="comma-separated start points")
        p.add_argument("--mu0", help="inline atoms 'x:w,...' or a measure CSV path")
        p.add_argument("--steps", type=int, default=1000, help="grid steps on [0, 1]")
        p.add_argument("--replicas", type=int, default=1000)
        p.add_argument("--seed", type=int, required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brownflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flow", help="simulate the n-point flow")
    _common(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--mode", choices=MODES, default="covariance")
    p.add_argument("--record-every", type=int)
    p.add_argument("--path-replicas", type=int, default=100,
                   help="replicas written to paths.csv")

    p = sub.add_parser("coalesce", help="simulate coalescing Brownian motion")
    _common(p)
    p.add_argument("--no-bridge", action="store_true", help="disable the bridge merge draw")
    p.add_argument("--record-every", type=int)
    p.add_argument("--path-replicas", type=int, default=100)

    p = sub.add_parser("wasserstein", help="distance between two measure CSV files")
    _common(p, simulation=False)
    p.add_argument("--mu", required=True)
    p.add_argument("--nu", required=True)
    p.add_argument("--order", type=int, default=1)

    p = sub.add_parser("diagnose", help="run statistical checks")
    _common(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--mode", choices=MODES, default="covariance")
    p.add_argument("--checks", default=",".join(CHECKS))

    p = sub.add_parser("converge", help="eps sweep against the coalescing limit")
    _common(p)
    p.add_argument("--eps-list", required=True)
    return parser


def _finish(out: Path, command: str, config: dict, files: dict[str, str],
            report: DiagnosticsReport | None) -> int:
    if report is not None:
        files["report.json"] = report.to_json()
        files["report.txt"] = report.to_text()
    files["manifest.json"] = io.manifest(command, config, list(files))
    io.write_all(out, files)
    if report is not None:
        sys.stdout.write(report.to_text())
    return EXIT_OK if report is None or report.passed else EXIT_CHECK


def _validate(args) -> dict:
    cfg = {}
    if args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    if args.command == "wasserstein":
        if args.order < 0:
            raise ConfigError("--order must be nonnegative")
        try:
            cfg["mu"] = EmpiricalMeasure.from_csv(Path(args.mu).read_text())
            cfg["nu"] = EmpiricalMeasure.from_csv(Path(args.nu).read_text())
        except (OSError, ValueError, IndexError) as exc:
            raise ConfigError(f"cannot read measures: {exc}") from None
        if cfg["mu"].dim != cfg["nu"].dim:
            raise ConfigError("measures have different dimensions")
        return cfg
    if args.steps < 1 or args.replicas < 1:
        raise ConfigError("--steps and --replicas must be at least 1")
    starts, weights = _starts_and_weights(args)
    cfg["starts"], cfg["weights"] = starts, weights
    if args.command == "coalesce":
        if np.any(np.diff(starts) < 0):
            raise ConfigError("--starts must be sorted")
    elif np.any(np.diff(starts) <= 0):
        raise ConfigError("--starts must be strictly increasing")
    if args.command in ("flow", "diagnose") and not args.eps > 0:
        raise ConfigError("--eps must be positive")
    if args.command == "converge":
        eps_list = _floats(args.eps_list, "--eps-list")
        if any(e <= 0 for e in eps_list):
            raise ConfigError("--eps-list entries must be positive")
        if args.steps % 2:
            raise ConfigError("converge needs an even --steps (functional at t=1/2)")
        cfg["eps_list"] = eps_list
    if args.command == "diagnose":
        checks = [c.strip() for c in args.checks.split(",") if c.strip()]
        unknown = sorted(set(checks) - set(CHECKS))
        if unknown:
            raise ConfigError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
        if args.replicas < 1000 and {"marginal"} & set(checks):
            raise ConfigError("the marginal check needs --replicas >= 1000")
        if args.replicas < 20:
            raise ConfigError("diagnostics need --replicas >= 20 for batched errors")
        cfg["checks"] = checks
    if args.command in ("flow", "coalesce"):
        cfg["record_every"] = _record_every(args, args.replicas, len(starts))
    return cfg


def _run(args, cfg) -> int:
    out = Path(args.out)
    if args.command == "wasserstein":
        mu, nu = cfg["mu"], cfg["nu"]
        plan = optimal_plan(args.order, mu, nu)
        result = {"order": args.order,
                  "distance": max(plan.cost, 0.0) ** (1.0 / max(args.order, 1)),
                  "cost": plan.cost}
        if mu.dim == 1:
            mono = monotone_plan(args.order, mu, nu)
            result["monotone_distance"] = max(mono.cost, 0.0) ** (1.0 / max(args.order, 1))
        files = {
            "plan.csv": plan.to_csv(lambda a, b: float(phi_n(args.order, np.linalg.norm(a - b))),
                                    mu, nu),
            "result.json": io.dumps(result),
        }
        config = {"order": args.order, "mu": mu.to_csv(), "nu": nu.to_csv()}
        return _finish(out, "wasserstein", config, files, None)

    h = 1.0 / args.steps
    base = {"starts": cfg["starts"], "weights": cfg["weights"], "steps": args.steps,
            "h": h, "replicas": args.replicas, "seed": args.seed}

    if args.command == "flow":
        sim = SimConfig(args.eps, tuple(cfg["starts"]), h, args.steps, args.replicas,
                        args.seed, args.mode, record_every=cfg["record_every"])
        ens = simulate_flow(sim, workers=args.workers)
        keep = min(args.path_replicas, ens.replicas)
        steps = np.arange(0, args.steps + 1, cfg["record_every"])
        summary = {"crossing_rate": ens.crossing_rate(),
                   "crossings": int(ens.crossings.sum()),
                   "mean_final": ens.paths[:, -1].mean(axis=0).tolist(),
                   "var_final": ens.paths[:, -1].var(axis=0).tolist()}
        files = {"paths.csv": io.paths_csv(ens.paths[:keep], ens.times, steps),
                 "summary.json": io.dumps(summary)}
        config = {**base, "eps": args.eps, "mode": args.mode,
                  "record_every": cfg["record_every"], "path_replicas": keep}
        return _finish(out, "flow", config, files, None)

    if args.command == "coalesce":
        ens = simulate_coalescing_ensemble(cfg["starts"], h, args.steps, args.replicas,
                                           args.seed, bridge=not args.no_bridge,
                                           record_every=cfg["record_every"],
                                           workers=args.workers)
        keep = min(args.path_replicas, ens.replicas)
        steps = np.arange(0, args.steps + 1, cfg["record_every"])
        report = DiagnosticsReport([block_monotone_check(ens)])
        summary = {"block_count_final_mean": float(ens.block_counts()[:, -1].mean())}
        if ens.n >= 2 and args.replicas >= 20:
            rate = report.add(merge_rate_check(ens))
            summary.update(merge_rate=rate.estimate, merge_rate_se=rate.se,
                           merge_rate_target=rate.target_or_bound)
        merges = ["replica,boundary,step"]
        for r, i in zip(*np.nonzero(ens.merge_steps[:keep] >= 0)):
            merges.append(f"{r},{i},{ens.merge_steps[r, i]}")
        files = {"paths.csv": io.paths_csv(ens.paths[:keep], ens.times, steps),
                 "merges.csv": "\n".join(merges) + "\n",
                 "summary.json": io.dumps(summary)}
        config = {**base, "bridge": not args.no_bridge,
                  "record_every": cfg["record_every"], "path_replicas": keep}
        return _finish(out, "coalesce", config, files, report)

    if args.command == "diagnose":
        dcfg = DiagnoseConfig(args.eps, tuple(cfg["starts"]), h, args.steps, args.replicas,
                              args.seed, args.mode,
                              None if cfg["weights"] is None else tuple(cfg["weights"]),
                              tuple(cfg["checks"]), args.workers)
        report = run_diagnostics(dcfg)
        config = {**base, "eps": args.eps, "mode": args.mode, "checks": cfg["checks"]}
        return _finish(out, "diagnose", config, {}, report)

    res = convergence_sweep(cfg["eps_list"], cfg["starts"], h, args.steps, args.replicas,
                            args.seed, args.workers)
    config = {**base, "eps_list": cfg["eps_list"]}
    return _finish(out, "converge", config, {"sweep.csv": res.to_csv()}, res.report)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = _validate(args)
    except ConfigError as exc:
        print(f"brownflow: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _run(args, cfg)
    except (ArithmeticError, RuntimeError, QuadratureError, TransportError, ValueError) as exc:
        print(f"brownflow: simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM


def main() -> None:
    sys.exit(run())
