"""Command-line entry point: ``ddagossip {run,montecarlo,mixing,check,rate-probe}``."""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis
from .config import ConfigError, ExperimentConfig
from .network import GraphError, mixing_report
from .polyhedron import InfeasibleSetError, ProjectionError
from .linalg import StabilityError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default, allow_nan=False)
        fh.write("\n")


def _manifest(cfg, command, **extra):
    return {"command": command, "seed": cfg.seed, "config": cfg.to_dict(), **extra}


def _outdir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(cfg, args):
    exp = cfg.build()
    t0 = time.perf_counter()
    traj = analysis._runner(cfg)(exp.problem, exp.polyhedron, exp.scheme, exp.schedule, cfg.steps, cfg.init_spec,
                                 np.random.default_rng(cfg.run_seed(0)), per_agent_init=cfg.init["per_agent"],
                                 record=cfg.record_steps(), active_tol=cfg.tolerances["active"])
    elapsed = time.perf_counter() - t0
    out = _outdir(cfg)
    with open(out / "trajectory.csv", "w", newline="", encoding="utf-8") as fh:
        traj.to_csv(fh)
    found, K = analysis.identification_time(traj, exp.polyhedron, cfg.tolerances["active"])
    _write_json(out / "manifest.json", _manifest(cfg, "run", problem=exp.problem.to_dict(), records=int(traj.k.size),
                                                 identification={"found": found, "K": K}))
    _write_json(out / "timings.json", {"simulate_seconds": elapsed})
    print(f"wrote {traj.k.size} records x {exp.problem.m} agents to {out / 'trajectory.csv'}")
    return EXIT_OK


def _write_samples(path, report):
    d = report.scaled_samples.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run"] + [f"scaled{i + 1}" for i in range(d)] + [f"averaged{i + 1}" for i in range(d)])
        for r, (s, a) in enumerate(zip(report.scaled_samples, report.averaged_samples)):
            w.writerow([r] + [repr(float(v)) for v in s] + [repr(float(v)) for v in a])


def cmd_montecarlo(cfg, args):
    exp = cfg.build()
    model = analysis.build_asymptotic_model(exp.problem, exp.polyhedron)
    t0 = time.perf_counter()
    results = analysis.run_batch(cfg)
    elapsed = time.perf_counter() - t0
    report = analysis.summarize(cfg, results, model)
    out = _outdir(cfg)
    _write_json(out / "report.json", _manifest(cfg, "montecarlo", algorithm=cfg.algorithm,
                                                model=model.to_dict(), report=report.to_dict(),
                                                identification=[{"run": r["run"], "found": r["found"], "K": r["K"]}
                                                                for r in results]))
    _write_samples(out / "samples.csv", report)
    with open(out / "histogram.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["statistic", "component", "bin_left", "bin_right", "count", "model_density"])
        for row in analysis.histograms(report, cfg.analysis["hist_bins"]):
            w.writerow([row[0], row[1], repr(row[2]), repr(row[3]), row[4], repr(row[5])])
    _write_json(out / "manifest.json", _manifest(cfg, "montecarlo", problem=exp.problem.to_dict()))
    _write_json(out / "timings.json", {"batch_seconds": elapsed})
    print(f"relative Frobenius error vs Sigma:  {report.rel_frobenius_error_Sigma:.4f}")
    print(f"relative Frobenius error vs Sigma*: {report.rel_frobenius_error_SigmaStar:.4f}")
    print(f"KS p-value along u1:                {report.ks_pvalue_active_direction:.4f}")
    print(f"off/on manifold std ratio:          {report.offmanifold_std_ratio:.4g}")
    print(f"identification fraction:            {report.identification_fraction:.3f}")
    return EXIT_OK


def cmd_mixing(cfg, args):
    scheme = cfg.build_scheme()
    rep = mixing_report(scheme, rng=np.random.default_rng(cfg.run_seed(0)))
    out = _outdir(cfg)
    _write_json(out / "mixing.json", {"seed": cfg.seed, "config": cfg.to_dict(), "scheme": scheme.to_dict(),
                                      **rep.to_dict()})
    print(f"rho = {rep.rho!r}  row-stochastic = {rep.row_stochastic}  "
          f"column-stochastic in mean = {rep.column_stochastic_in_mean}  "
          f"doubly stochastic always = {rep.doubly_stochastic_always}")
    return EXIT_OK


def cmd_check(cfg, args):
    results = analysis.assumption_checks(cfg)
    for res in results:
        print(res.line())
    n_warn = sum(r.status == "warn" for r in results)
    print(f"{len(results) - n_warn} pass, {n_warn} warn")
    return EXIT_OK


def cmd_rate_probe(cfg, args):
    t0 = time.perf_counter()
    rep = analysis.rate_probe(cfg, delta=args.delta)
    elapsed = time.perf_counter() - t0
    out = _outdir(cfg)
    _write_json(out / "rate_probe.json", _manifest(cfg, "rate-probe", **rep.to_dict()))
    _write_json(out / "timings.json", {"rate_probe_seconds": elapsed})
    print(f"delta = {rep.delta}: decreasing window-median trend in {rep.fraction_decreasing:.3f} "
          f"of {rep.n_reps} replications")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "montecarlo": cmd_montecarlo,
    "mixing": cmd_mixing,
    "check": cmd_check,
    "rate-probe": cmd_rate_probe,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ddagossip", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="TOML experiment file")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--runs", type=int, dest="n_runs", help="override the number of replications")
        p.add_argument("--steps", type=int, help="override the horizon")
        p.add_argument("--scheme", choices=["pairwise", "broadcast", "fixed"], help="override the gossip scheme")
        p.add_argument("--agent", type=int, help="1-based agent for the Monte Carlo statistics")
        p.add_argument("--algorithm", choices=["dda", "dpg"], help="override the algorithm")
        if name == "rate-probe":
            p.add_argument("--delta", type=float, help="exponent delta (default from [analysis])")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.from_toml(args.config)
        cfg = cfg.with_overrides(seed=args.seed, out=args.out, n_runs=args.n_runs, steps=args.steps,
                                 scheme=args.scheme, agent=args.agent, algorithm=args.algorithm)
        return COMMANDS[args.command](cfg, args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, GraphError, InfeasibleSetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ProjectionError, StabilityError, analysis.ModelError, analysis.ReplicationError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
