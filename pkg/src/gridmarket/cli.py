"""Command-line interface.

Subcommands:

* ``run``         simulate a scenario with one controller, write CSV + report
* ``compare``     run both controllers on the same scenario, joint report
* ``equilibrium`` print the welfare-optimal equilibrium and common price
* ``validate``    check a scenario file and exit

Exit codes: 0 when the run met its convergence criteria (or the file
validated), 2 when a simulation completed without converging, 1 on any
error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .closed_loop import SimulationError, solve_equilibrium
from .runner import (
    compare_controllers,
    export_trajectory,
    fmt,
    run_scenario,
    write_comparison,
    write_plot_sidecar,
    write_report,
)
from .scenario import ScenarioError, build_system, load_scenario
from .welfare import QuadraticWelfare, lambda_star

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def _add_common(p: argparse.ArgumentParser, controller: bool = True):
    p.add_argument("--scenario", required=True, metavar="PATH",
                   help="scenario file to load")
    if controller:
        p.add_argument("--controller", choices=("internal-model", "gradient"),
                       default=None, help="override the scenario's controller")
    p.add_argument("--out", metavar="DIR", default=None,
                   help="output directory (default: scenario's output.dir)")
    p.add_argument("--dt", type=float, default=None, help="override integrator step")
    p.add_argument("--t-end", type=float, default=None, help="override horizon")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridmarket",
        description="Frequency regulation and welfare-optimal dispatch "
                    "through real-time dynamic pricing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("run", help="simulate one controller"))
    _add_common(sub.add_parser("compare", help="run both controllers side by side"),
                controller=False)

    eq = sub.add_parser("equilibrium", help="print the optimal steady state")
    eq.add_argument("--scenario", required=True, metavar="PATH")
    eq.add_argument("--controller", choices=("internal-model", "gradient"), default=None)

    val = sub.add_parser("validate", help="validate a scenario file")
    val.add_argument("--scenario", required=True, metavar="PATH")

    return parser


def _out_dir(args, scenario) -> Path:
    out = Path(args.out) if args.out is not None else Path(scenario.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _slug(kind: str) -> str:
    return kind.replace("-", "_")


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    out = _out_dir(args, scenario)
    traj, report = run_scenario(scenario, controller_override=args.controller,
                                dt=args.dt, t_end=getattr(args, "t_end"))
    slug = _slug(report.controller)
    export_trajectory(traj, out / f"trajectory_{slug}.csv")
    write_report(report, out / f"report_{slug}.txt")
    write_plot_sidecar(traj, out / f"plots_{slug}.txt")
    status = "converged" if report.converged else "NOT converged"
    print(f"{report.controller}: {status} at t = {fmt(report.final_time)} "
          f"(wall clock {report.wall_clock_seconds:.2f} s)")
    print(f"  lambda = {np.array2string(report.final_lambda, precision=6)}"
          f"  target = {fmt(report.lambda_targets[-1])}")
    print(f"  outputs in {out}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _cmd_compare(args) -> int:
    scenario = load_scenario(args.scenario)
    out = _out_dir(args, scenario)
    traj_im, traj_gr, comparison = compare_controllers(scenario, dt=args.dt,
                                                       t_end=getattr(args, "t_end"))
    export_trajectory(traj_im, out / "trajectory_internal_model.csv")
    export_trajectory(traj_gr, out / "trajectory_gradient.csv")
    write_report(comparison.internal, out / "report_internal_model.txt")
    write_report(comparison.gradient, out / "report_gradient.txt")
    write_comparison(comparison, out / "report_compare.txt")
    write_plot_sidecar(traj_im, out / "plots_internal_model.txt")
    write_plot_sidecar(traj_gr, out / "plots_gradient.txt")
    for rep in (comparison.internal, comparison.gradient):
        status = "converged" if rep.converged else "NOT converged"
        print(f"{rep.controller}: {status}, wall clock {rep.wall_clock_seconds:.2f} s")
    verdict = "pass" if comparison.internal_tv_le_gradient else "fail"
    print(f"price-oscillation check (internal <= gradient): {verdict}")
    print(f"  outputs in {out}")
    both = comparison.internal.converged and comparison.gradient.converged
    return EXIT_OK if both else EXIT_NOT_CONVERGED


def _cmd_equilibrium(args) -> int:
    scenario = load_scenario(args.scenario)
    system = build_system(scenario, controller_override=args.controller)
    state = solve_equilibrium(system)
    if isinstance(scenario.welfare, QuadraticWelfare):
        print(f"lambda_star = {fmt(lambda_star(scenario.welfare))}")
    else:
        print(f"lambda_star = {fmt(float(np.mean(state.controller.lam)))}")
    print(f"lambda = {np.array2string(state.controller.lam, precision=8)}")
    if system.kind == "gradient":
        print(f"ug = {np.array2string(state.controller.ug, precision=8)}")
        print(f"ud = {np.array2string(state.controller.ud, precision=8)}")
        print(f"v = {np.array2string(state.controller.v, precision=8)}")
    else:
        zc = system.controller.pack(state.controller)
        ug, ud = system.controller.output(zc)
        print(f"ug = {np.array2string(ug, precision=8)}")
        print(f"ud = {np.array2string(ud, precision=8)}")
    print(f"eta = {np.array2string(state.physical.eta, precision=8)}")
    margin = float(np.min(np.pi / 2 - np.abs(state.physical.eta)))
    print(f"security_margin = {fmt(margin)}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    build_system(scenario)
    print(f"{args.scenario}: OK ({scenario.name}, n = {scenario.physical.n}, "
          f"controller = {scenario.controller_kind}, events = {len(scenario.events)})")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "compare": _cmd_compare,
        "equilibrium": _cmd_equilibrium,
        "validate": _cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except (ScenarioError, SimulationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
