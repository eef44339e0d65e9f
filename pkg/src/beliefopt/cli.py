"""Command-line surface: plan | execute | montecarlo | ablation | sweep.

Exit codes encode the go-or-no-go decision for scripting: 0 for a feasible
converged solve, 2 for an infeasible problem (the report with the maximum
violation estimate is still written), 1 for errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io as bio
from .simulation import execute_once, monte_carlo
from .solver import outer_solve, trajectory_cost, BeliefCost, BeliefDynamicsAdapter, rollout

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


def _load(args):
    config = bio.load_scenario(args.scenario)
    map_path = Path(args.map) if args.map else bio.resolve_map_path(config, args.scenario)
    fmap = bio.load_map(map_path)
    return config, fmap


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _solve(config, fmap, mode=None, visibility=None, three_sigma=None):
    problem = bio.build_problem(config, fmap, mode=mode, visibility=visibility,
                                three_sigma=three_sigma)
    policy, report = outer_solve(problem, **config.al_overrides)
    return problem, policy, report


def cmd_plan(args) -> int:
    config, fmap = _load(args)
    out = _outdir(args)
    problem, policy, report = _solve(config, fmap, mode=args.mode, visibility=args.visibility)
    bio.serialize_policy(policy, out / "policy.yaml")
    bio.dump_document(bio.report_document(report), out / "report.yaml")
    header, rows = bio.plan_table_rows(problem, policy)
    bio.write_table(out / "plan_table.csv", header, rows)
    print(f"feasible={report.feasible} converged={report.converged} "
          f"final_cost={report.final_cost:.6g} "
          f"max_violation={float(np.max(report.max_violation_per_constraint, initial=0.0)):.6g}")
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


def cmd_execute(args) -> int:
    config, fmap = _load(args)
    out = _outdir(args)
    problem = bio.build_problem(config, fmap, mode=args.mode, visibility=args.visibility)
    policy = bio.load_policy(args.policy)
    trace = execute_once(problem, policy, seed=args.seed)
    bio.dump_document(bio.trace_document(trace), out / "trace.yaml")
    header, rows = bio.trace_table_rows(trace)
    bio.write_table(out / "trace_table.csv", header, rows)
    print(f"seed={trace.seed} steps={trace.steps} diverged={trace.diverged}")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    if args.runs < 1:
        print("montecarlo requires --runs >= 1", file=sys.stderr)
        return EXIT_ERROR
    config, fmap = _load(args)
    out = _outdir(args)
    problem = bio.build_problem(config, fmap, mode=args.mode, visibility=args.visibility)
    policy = bio.load_policy(args.policy)
    bounds_spec = problem.constraints
    if bounds_spec is None and np.all(config.three_sigma > 0):
        from .costs import ConstraintSpec

        bounds_spec = ConstraintSpec.for_state_variances(3, (0, 1, 2), config.three_sigma)
    summary = monte_carlo(problem, policy, n_runs=args.runs, base_seed=args.seed,
                          bounds_spec=bounds_spec)
    bio.dump_document(bio.summary_document(summary), out / "summary.yaml")
    header = ["run", "seed", "k", "err_x", "err_y", "err_theta",
              "planned_sig3_x", "planned_sig3_y", "planned_sig3_theta",
              "realized_sig3_x", "realized_sig3_y", "realized_sig3_theta"]
    rows = []
    for i in range(args.runs):
        trace = execute_once(problem, policy, seed=args.seed + i)
        for k in range(trace.true_states.shape[0]):
            rows.append([i, trace.seed, k, *trace.estimation_errors[k].tolist(),
                         *trace.planned_3sigma[k].tolist(),
                         *trace.realized_3sigma[k].tolist()])
    bio.write_table(out / "montecarlo_table.csv", header, rows)
    counts = {k: int(v) for k, v in bio.summary_document(summary)["violation_counts"].items()}
    print(f"runs={summary.runs} base_seed={summary.base_seed} violations={counts} "
          f"within_3sigma={np.round(summary.within_3sigma_fraction, 4).tolist()}")
    return EXIT_OK


def cmd_ablation(args) -> int:
    config, fmap = _load(args)
    out = _outdir(args)
    results = {}
    for visibility in ("smooth", "hard"):
        problem, policy, report = _solve(config, fmap, visibility=visibility)
        results[visibility] = (problem, policy, report)
        bio.serialize_policy(policy, out / f"policy_{visibility}.yaml")
        bio.dump_document(bio.report_document(report), out / f"report_{visibility}.yaml")
    doc = {
        "initial_trajectory_hash": bio.initial_trajectory_hash(results["smooth"][0]),
        "smooth": {"final_cost": results["smooth"][2].final_cost,
                   "feasible": results["smooth"][2].feasible,
                   "initial_trajectory_hash": bio.initial_trajectory_hash(results["smooth"][0])},
        "hard": {"final_cost": results["hard"][2].final_cost,
                 "feasible": results["hard"][2].feasible,
                 "initial_trajectory_hash": bio.initial_trajectory_hash(results["hard"][0])},
    }
    bio.dump_document(doc, out / "ablation_report.yaml")
    print(f"smooth_cost={doc['smooth']['final_cost']:.6g} hard_cost={doc['hard']['final_cost']:.6g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config, fmap = _load(args)
    out = _outdir(args)
    summary = {}
    any_infeasible = False
    for regime, sigmas in bio.SWEEP_REGIMES.items():
        problem, policy, report = _solve(config, fmap, mode="constrained",
                                         three_sigma=np.array(sigmas))
        subdir = out / regime
        subdir.mkdir(parents=True, exist_ok=True)
        bio.serialize_policy(policy, subdir / "policy.yaml")
        bio.dump_document(bio.report_document(report), subdir / "report.yaml")
        header, rows = bio.plan_table_rows(problem, policy)
        bio.write_table(subdir / "plan_table.csv", header, rows)
        summary[regime] = {
            "three_sigma": list(sigmas),
            "final_cost": report.final_cost,
            "feasible": report.feasible,
            "max_violation": float(np.max(report.max_violation_per_constraint, initial=0.0)),
        }
        any_infeasible = any_infeasible or not report.feasible
    bio.dump_document(summary, out / "sweep_summary.yaml")
    costs = {k: f"{v['final_cost']:.6g}" for k, v in summary.items()}
    print(f"sweep costs: {costs}")
    return EXIT_INFEASIBLE if any_infeasible else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beliefopt",
                                     description="Belief-space trajectory optimization under uncertainty constraints")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, policy=False, seed=False, runs=False):
        p.add_argument("--scenario", required=True, help="scenario YAML file")
        p.add_argument("--map", default=None, help="map YAML file (overrides the scenario's map)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--mode", choices=("constrained", "unconstrained"), default=None)
        p.add_argument("--visibility", choices=("smooth", "hard"), default=None)
        if policy:
            p.add_argument("--policy", required=True, help="policy YAML from a plan run")
        if seed:
            p.add_argument("--seed", type=int, default=0)
        if runs:
            p.add_argument("--runs", type=int, required=True)

    common(sub.add_parser("plan", help="solve a scenario and write policy/report/table"))
    common(sub.add_parser("execute", help="simulate one closed-loop run of a policy"),
           policy=True, seed=True)
    common(sub.add_parser("montecarlo", help="batch closed-loop runs with violation stats"),
           policy=True, seed=True, runs=True)
    common(sub.add_parser("ablation", help="paired solves with smooth vs hard visibility"))
    common(sub.add_parser("sweep", help="loose/medium/tight constraint sweep"))
    return parser


_COMMANDS = {
    "plan": cmd_plan,
    "execute": cmd_execute,
    "montecarlo": cmd_montecarlo,
    "ablation": cmd_ablation,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (bio.SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
