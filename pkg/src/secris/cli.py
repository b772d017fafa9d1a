"""Command-line front end.

Subcommands: run (single optimize + outage estimate), sweep (experiment
grid), validate-bernstein (Monte-Carlo soundness of the deterministic
chance-constraint surrogate), channel-goldens (pathloss / entry-loss test
vectors).  Exit codes: 0 success, 1 validation failure, 2 config error,
3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import importlib.resources
import math
import sys
from pathlib import Path

import numpy as np

from . import harness
from .channel import o2i_median_db, pathloss_db, realize_ensemble
from .config import ConfigError, RunConfig, SWEEP_KINDS, load_config
from .optimizer import solve
from .scenario import build_scenario


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="secris",
        description="secrecy-outage-aware design of hybrid "
                    "reconfigurable-surface downlinks")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="YAML run configuration")
    common.add_argument("--seed", type=int, metavar="U64",
                        help="override the config seed")
    common.add_argument("--out", metavar="DIR", default=".",
                        help="output directory (default: cwd)")
    common.add_argument("--trials", type=int, metavar="N",
                        help="override the Monte-Carlo trial count")
    common.add_argument("--threads", type=int, metavar="N",
                        help="worker threads for outage estimation "
                             "(SECRIS_THREADS env var wins)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common],
                   help="optimize the default or configured scenario and "
                        "validate it by Monte-Carlo")
    sp = sub.add_parser("sweep", parents=[common],
                        help="run the configured experiment grid")
    sp.add_argument("--kind", choices=SWEEP_KINDS,
                    help="override the configured sweep kind")
    vb = sub.add_parser("validate-bernstein", parents=[common],
                        help="Monte-Carlo soundness suite for the "
                             "chance-constraint surrogate")
    vb.add_argument("--blocks", type=int, default=100, metavar="N",
                    help="number of random feasible blocks (default 100)")
    cg = sub.add_parser("channel-goldens", parents=[common],
                        help="check pathloss and entry-loss values against "
                             "the shipped golden table")
    cg.add_argument("--table", metavar="PATH",
                    help="alternative golden table")
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig().validate()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    scn = build_scenario(cfg, rng)
    ens = realize_ensemble(scn, cfg, rng)
    try:
        rep = solve(scn, ens, cfg)
    except Exception as exc:    # noqa: BLE001 - surfaced as exit code
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    if not any(s.status in ("optimal", "optimal_inaccurate")
               for s in rep.steps):
        print("solver failure: no block subproblem solved", file=sys.stderr)
        return 3
    trials = args.trials if args.trials is not None \
        else cfg.montecarlo.n_trials
    est = harness.estimate_outage(rep.design, cfg, trials, cfg.seed,
                                  ensemble=rep.ensemble,
                                  scenario=rep.scenario,
                                  threads=args.threads)
    rows = harness._estimate_rows("", "proposed", est, cfg.seed, full=True)
    harness.write_rows_csv(out / "run_estimate.csv", rows)
    harness.write_history_csv(out / "run_history.csv", rep)
    harness.write_report_json(out / "run_report.json", rep)
    print(f"converged={rep.converged} iterations={rep.iterations} "
          f"feasible={rep.feasible} worst_margin={rep.worst_margin:+.4f}")
    print(f"phi_hat={est.phi_hat:.6f} (stderr {est.phi_stderr:.6f}) "
          f"over {est.n_trials} trials")
    for k in range(est.p_out.size):
        print(f"  user {k}: p_out={est.p_out[k]:.4f} "
              f"sec_viol={est.sec_violation[k]:.4f} "
              f"qos_viol={est.qos_violation[k]:.4f}")
    print(f"wrote {out / 'run_estimate.csv'}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kind = args.kind or cfg.experiment.kind
    grid = [float(g) for g in cfg.experiment.grid] \
        if kind != "convergence" else [int(g) for g in cfg.experiment.grid]
    rows = harness.sweep(kind, grid, cfg, trials=args.trials,
                         seed=cfg.seed, threads=args.threads)
    path = out / f"sweep_{kind}.csv"
    harness.write_rows_csv(path, rows)
    status = [r["value"] for r in rows if r["metric"] == "status"]
    n_err = sum(1 for s in status if str(s).startswith("error"))
    print(f"{len(grid)} grid points, {len(status)} scheme runs, "
          f"{n_err} failed; wrote {path}")
    if status and n_err == len(status):
        print("solver failure: every sweep point failed", file=sys.stderr)
        return 3
    return 0


def _cmd_validate_bernstein(args) -> int:
    cfg = _load(args)
    trials = args.trials if args.trials is not None else 100_000
    results = harness.bernstein_soundness(args.blocks, trials, cfg.seed)
    worst = 0.0
    n_bad = 0
    for r in results:
        flag = "PASS" if r["ok"] else "FAIL"
        worst = max(worst, r["p_hat"] - r["eps"])
        n_bad += not r["ok"]
        print(f"block {r['index']:3d} n={r['n']} eps={r['eps']:.2f} "
              f"p_hat={r['p_hat']:.5f} limit={r['limit']:.5f} {flag}")
    print(f"{len(results) - n_bad}/{len(results)} blocks within budget "
          f"(worst excess {worst:+.5f})")
    return 0 if n_bad == 0 else 1


def _golden_table(path: str | None):
    if path is not None:
        text = Path(path).read_text()
    else:
        text = importlib.resources.files("secris").joinpath(
            "data/channel_goldens.csv").read_text()
    return list(csv.DictReader(text.splitlines()))


def _cmd_channel_goldens(args) -> int:
    rows = _golden_table(args.table)
    n_bad = 0
    for row in rows:
        model = row["model"]
        fc = float(row["fc_ghz"])
        expected = float(row["expected_db"])
        tol = float(row["tol_db"])
        if model.startswith("p2109-median-"):
            got = o2i_median_db(model.removeprefix("p2109-median-"), fc)
            label = f"{model} f={fc:g}"
        else:
            d = float(row["d3d_m"])
            got = pathloss_db(model, d, fc)
            label = f"{model} d={d:g} f={fc:g}"
        ok = math.isfinite(got) and abs(got - expected) <= tol
        n_bad += not ok
        print(f"{label}: got {got:.4f} dB expected {expected:.4f} dB "
              f"{'PASS' if ok else 'FAIL'}")
    print(f"{len(rows) - n_bad}/{len(rows)} golden values matched")
    return 0 if n_bad == 0 else 1


def cli_main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:   # argparse prints usage itself
        code = exc.code if isinstance(exc.code, int) else 2
        return code
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "validate-bernstein":
            return _cmd_validate_bernstein(args)
        return _cmd_channel_goldens(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(cli_main())
