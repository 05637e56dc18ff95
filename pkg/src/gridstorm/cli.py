"""Command-line surface: validate, sample, assess, train-surrogate, rank,
report and replay.

Every command writes a run manifest (argv, config snapshot, seeds, input
hashes, tool version, timestamps) next to its outputs; re-running the
manifest's command reproduces the output files byte-for-byte with any worker
count.  All randomness flows from explicit --seed flags.

Exit codes: 0 success, 2 validation error, 3 solver error, 4 usage error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import os
import sys
import time
from pathlib import Path

from . import __version__, emergency, hazard, milp, montecarlo, surrogate, vulnerability
from .augnet import AugmentError
from .core import (
    CaseConfig,
    CaseError,
    config_from_dict,
    config_to_dict,
    load_case,
)
from .util import dump_json, load_json, sha256_file

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_USAGE = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _solver_config(args) -> milp.SolverConfig:
    cmd = getattr(args, "solver_cmd", None) or os.environ.get("GRIDSTORM_SOLVER_CMD")
    backend = getattr(args, "solver", "embedded")
    if backend == "external" and not cmd:
        raise milp.ExternalSolverError(
            "external solver selected but no command template given; pass "
            "--solver-cmd or set GRIDSTORM_SOLVER_CMD, or fall back to "
            "--solver embedded")
    return milp.SolverConfig(
        backend=backend,
        external_command=cmd,
        rel_gap=getattr(args, "gap", 0.0) or 0.0,
        time_limit=getattr(args, "time_limit", None))


def _load_config(args) -> CaseConfig:
    if getattr(args, "config", None):
        return config_from_dict(load_json(args.config))
    return CaseConfig()


def _hash_inputs(paths) -> dict:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(p.iterdir()):
                if f.is_file():
                    out[str(f)] = sha256_file(f)
        elif p.is_file():
            out[str(p)] = sha256_file(p)
    return out


def _write_manifest(out_dir: Path, argv, seeds, inputs) -> None:
    manifest = {
        "command": list(argv),
        "tool_version": __version__,
        "seeds": seeds,
        "input_hashes": _hash_inputs(inputs),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    dump_json(manifest, out_dir / "manifest.json")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_validate(args, argv) -> int:
    try:
        case = load_case(args.case_dir)
    except CaseError as err:
        print("case is invalid:")
        for p in err.problems:
            print(f"  - {p}")
        return EXIT_VALIDATION
    print(f"case ok: {len(case.power.buses)} buses, "
          f"{len(case.power.branches)} branches, "
          f"{len(case.heat.nodes)} heat nodes, "
          f"{len(case.transport.locations)} locations")
    return EXIT_OK


def cmd_sample(args, argv) -> int:
    case = load_case(args.case_dir)
    track, curves = hazard.load_track(args.track)
    scenarios = hazard.lhs_sample(case, track, curves, args.n, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    hazard.dump_scenarios(scenarios, args.seed, out)
    if args.check:
        n_branches = len(case.power.branches)
        n_roads = len(case.transport.roads)
        dims = 2 * n_branches + n_roads
        import numpy as np
        draws = hazard._lhs_draws(np.random.default_rng(args.seed), args.n, dims)
        for d in range(dims):
            strata = sorted(int(x * args.n) for x in draws[:, d])
            if strata != list(range(args.n)):
                print("stratification check FAILED")
                return EXIT_VALIDATION
        print(f"stratification ok: {args.n} scenarios x {dims} dimensions")
    print(f"wrote {len(scenarios)} scenarios to {out}")
    return EXIT_OK


def _named_configs(args, case) -> dict:
    base = _load_config(args)
    if args.cases:
        presets = montecarlo.case_presets(case, base)
        chosen = {}
        for name in args.cases.split(","):
            name = name.strip()
            if name not in presets:
                raise UsageError(f"unknown case preset {name!r} "
                                 f"(choose from {', '.join(sorted(presets))})")
            chosen[name] = presets[name]
        return chosen
    return {"run": base}


def cmd_assess(args, argv) -> int:
    case = load_case(args.case_dir)
    scenarios, seed = hazard.load_scenarios(args.scenarios)
    solver_cfg = _solver_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    configs = _named_configs(args, case)

    reports = {}
    for name, cfg in configs.items():
        report = montecarlo.run(case, cfg, scenarios, solver_cfg,
                                workers=args.workers, keep_results=False)
        reports[name] = report
        payload = report.to_dict()
        payload["config"] = config_to_dict(cfg)
        dump_json(payload, out_dir / f"report_{name}.json")
        rows = []
        for net, curve in report.indicator_curves.items():
            for t in range(case.time.t_max):
                rows.append([net, t, curve["mean"][t], curve["q10"][t],
                             curve["q90"][t]])
        _write_csv(out_dir / f"indicators_{name}.csv",
                   ["network", "period", "mean", "q10", "q90"], rows)
        rows = [[kind, t, report.behavior_means[kind][t]]
                for kind in sorted(report.behavior_means)
                for t in range(case.time.t_max)]
        _write_csv(out_dir / f"behavior_{name}.csv",
                   ["behavior", "period", "mean_vehicles"], rows)
        print(f"{name}: E[objective] = "
              f"{report.expected['total']['mean']:.3f} "
              f"± {report.expected['total']['std']:.3f}")

    if len(configs) > 1:
        names = list(configs)
        base_name = names[0]
        table = montecarlo.decision_utility(
            case, configs[base_name],
            {n: configs[n] for n in names[1:]},
            scenarios, solver_cfg, workers=args.workers)
        table["base_case"] = base_name
        dump_json(table, out_dir / "utility.json")

    _write_manifest(out_dir, argv, {"scenario_seed": seed},
                    [args.case_dir, args.scenarios]
                    + ([args.config] if args.config else []))
    return EXIT_OK


def cmd_train_surrogate(args, argv) -> int:
    if args.subnet not in ("heat", "transport"):
        raise UsageError(f"subnet must be 'heat' or 'transport', got {args.subnet!r}")
    case = load_case(args.case_dir)
    config = _load_config(args)
    solver_cfg = _solver_config(args)
    arch = tuple(int(x) for x in args.arch.split(",") if x)
    training = surrogate.generate_samples(args.subnet, case, config, args.n,
                                          args.seed, solver_cfg)
    mlp = surrogate.train(training, arch=arch, epochs=args.epochs,
                          step=args.step, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    surrogate.save_mlp(mlp, out)
    _write_csv(out.with_suffix(".loss.csv"), ["epoch", "mse"],
               [[i, v] for i, v in enumerate(mlp.loss_history)])
    flagged = int(training.infeasible.sum())
    print(f"trained {args.subnet} surrogate on {args.n} samples "
          f"({flagged} infeasible-penalty rows), final MSE "
          f"{mlp.loss_history[-1]:.6f} -> {out}")
    return EXIT_OK


def cmd_rank(args, argv) -> int:
    case = load_case(args.case_dir)
    config = _load_config(args)
    scenarios, seed = hazard.load_scenarios(args.scenarios)
    solver_cfg = _solver_config(args)
    method = args.method.lower()
    if method == "dm":
        ranking = vulnerability.rank_dm(case, config, scenarios, solver_cfg,
                                        workers=args.workers)
    elif method == "op":
        ranking = vulnerability.rank_op(case, config, scenarios, solver_cfg,
                                        workers=args.workers)
    elif method == "ha":
        ranking = vulnerability.rank_ha(case, config, scenarios, solver_cfg,
                                        workers=args.workers)
    elif method == "os":
        ranking = vulnerability.rank_os(case, config, scenarios, seed=args.seed,
                                        solver_cfg=solver_cfg,
                                        workers=args.workers)
    elif method == "sp":
        if not args.heat_mlp or not args.transport_mlp:
            raise UsageError("method sp needs --heat-mlp and --transport-mlp files")
        heat_mlp = surrogate.load_mlp(args.heat_mlp)
        trans_mlp = surrogate.load_mlp(args.transport_mlp)
        ranking = vulnerability.rank_sp(case, config, scenarios, heat_mlp,
                                        trans_mlp, solver_cfg,
                                        workers=args.workers)
    else:
        raise UsageError(f"unknown method {args.method!r} "
                         "(choose dm, op, os, ha or sp)")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_json(ranking.to_dict(), out_dir / f"ranking_{method}.json")
    print(f"{ranking.method}: wall {ranking.wall_time:.2f}s, "
          f"order {', '.join(ranking.order[:5])} ...")

    if args.compare_against:
        bench = load_json(args.compare_against)
        ks = sorted({min(5, len(ranking.order)), min(10, len(ranking.order))})
        rows = []
        bench_order = bench["order"]
        for k in ks:
            acc = len(set(ranking.order[:k]) & set(bench_order[:k])) / k
            rows.append([ranking.method, bench["method"], k, acc])
            print(f"top-{k} accuracy vs {bench['method']}: {acc:.2f}")
        _write_csv(out_dir / f"comparison_{method}.csv",
                   ["method", "benchmark", "k", "accuracy"], rows)

    inputs = [args.case_dir, args.scenarios]
    for extra in (args.config, args.heat_mlp, args.transport_mlp,
                  args.compare_against):
        if extra:
            inputs.append(extra)
    _write_manifest(out_dir, argv, {"scenario_seed": seed, "seed": args.seed},
                    inputs)
    return EXIT_OK


def cmd_report(args, argv) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "manifest.json").exists():
        print(f"no manifest.json in {run_dir}; not a completed run directory")
        return EXIT_VALIDATION
    out_dir = run_dir / "plotdata"
    out_dir.mkdir(exist_ok=True)

    curve_rows, behavior_rows, utility_rows, ranking_rows = [], [], [], []
    for f in sorted(run_dir.glob("report_*.json")):
        name = f.stem.replace("report_", "", 1)
        rep = load_json(f)
        for net, curve in rep["indicator_curves"].items():
            for t, (m, lo, hi) in enumerate(zip(curve["mean"], curve["q10"],
                                                curve["q90"])):
                curve_rows.append([name, net, t, m, lo, hi])
        for kind, vals in rep["behavior_means"].items():
            for t, v in enumerate(vals):
                behavior_rows.append([name, kind, t, v])
    util_file = run_dir / "utility.json"
    if util_file.exists():
        table = load_json(util_file)
        for variant, entry in sorted(table["variants"].items()):
            utility_rows.append([
                variant, entry["loss_reduction_abs"],
                "" if entry["loss_reduction_pct"] is None
                else entry["loss_reduction_pct"]])
    for f in sorted(run_dir.glob("ranking_*.json")):
        rk = load_json(f)
        for rank_pos, branch in enumerate(rk["order"]):
            ranking_rows.append([rk["method"], rank_pos + 1, branch,
                                 rk["scores_abs"][branch]])

    if not (curve_rows or utility_rows or ranking_rows):
        print(f"{run_dir} contains no report or ranking outputs")
        return EXIT_VALIDATION
    if curve_rows:
        _write_csv(out_dir / "indicator_curves.csv",
                   ["case", "network", "period", "mean", "q10", "q90"], curve_rows)
        _write_csv(out_dir / "behavior_counts.csv",
                   ["case", "behavior", "period", "mean_vehicles"], behavior_rows)
    if utility_rows:
        _write_csv(out_dir / "decision_utility.csv",
                   ["variant", "loss_reduction_abs", "loss_reduction_pct"],
                   utility_rows)
    if ranking_rows:
        _write_csv(out_dir / "ranking_bars.csv",
                   ["method", "rank", "branch", "utility_abs"], ranking_rows)
    print(f"plot data written to {out_dir}")
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    manifest = load_json(args.manifest)
    stored = list(manifest["command"])
    if args.workers is not None:
        if "--workers" in stored:
            i = stored.index("--workers")
            stored[i + 1] = str(args.workers)
        else:
            stored += ["--workers", str(args.workers)]
    if args.out:
        if "--out" in stored:
            i = stored.index("--out")
            stored[i + 1] = args.out
        else:
            stored += ["--out", args.out]
    print(f"replaying: gridstorm {' '.join(stored)}")
    return main(stored)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_solver_flags(p):
    p.add_argument("--solver", choices=("embedded", "external"), default="embedded")
    p.add_argument("--solver-cmd", default=None,
                   help="external solver command template with {lp} and {sol}; "
                        "falls back to GRIDSTORM_SOLVER_CMD")
    p.add_argument("--gap", type=float, default=0.0,
                   help="relative MIP gap (0 = exact)")
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> _Parser:
    parser = _Parser(prog="gridstorm",
                     description="Extreme-weather risk assessment for coupled "
                                 "power-heat-transport infrastructure")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("validate", help="check a case bundle")
    p.add_argument("case_dir")

    p = sub.add_parser("sample", help="draw hazard scenarios by LHS")
    p.add_argument("case_dir")
    p.add_argument("--track", required=True, help="typhoon track JSON")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--check", action="store_true",
                   help="verify stratification after sampling")

    p = sub.add_parser("assess", help="Monte Carlo risk report")
    p.add_argument("case_dir")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--config", default=None, help="CaseConfig JSON file")
    p.add_argument("--cases", default=None,
                   help="comma list of presets case1..case8 for comparison")
    p.add_argument("--out", required=True)
    _add_solver_flags(p)

    p = sub.add_parser("train-surrogate", help="fit a sub-network surrogate")
    p.add_argument("case_dir")
    p.add_argument("--subnet", required=True)
    p.add_argument("--n", type=int, default=150)
    p.add_argument("--arch", default="16,16")
    p.add_argument("--epochs", type=int, default=4000)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    _add_solver_flags(p)

    p = sub.add_parser("rank", help="rank branch vulnerability")
    p.add_argument("case_dir")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--method", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--heat-mlp", default=None)
    p.add_argument("--transport-mlp", default=None)
    p.add_argument("--compare-against", default=None,
                   help="benchmark ranking JSON for top-k accuracy")
    p.add_argument("--out", required=True)
    _add_solver_flags(p)

    p = sub.add_parser("report", help="tidy plot-data CSVs from a run directory")
    p.add_argument("run_dir")

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None)

    return parser


COMMANDS = {
    "validate": cmd_validate,
    "sample": cmd_sample,
    "assess": cmd_assess,
    "train-surrogate": cmd_train_surrogate,
    "rank": cmd_rank,
    "report": cmd_report,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.cmd](args, argv)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (CaseError, AugmentError) as err:
        print(f"{err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (milp.MilpError, emergency.SimulationError, emergency.BuildError,
            surrogate.SurrogateError, vulnerability.RankingError) as err:
        print(f"solver error: {err}", file=sys.stderr)
        return EXIT_SOLVER


def console() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
