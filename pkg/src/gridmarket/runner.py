"""Run orchestration: simulate a scenario, export CSV, build reports.

Everything written to disk is byte-deterministic: floats are printed
with 17 significant digits (lossless for IEEE doubles, so a parsed CSV
reproduces the in-memory trajectory bit for bit) and the report file
carries no timing information — wall-clock time lives only on the
in-memory report and the console.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .closed_loop import (
    CHANNEL_NAMES,
    ClosedLoopSystem,
    Trajectory,
    detect_steady_state,
    lyapunov_descent_check,
    simulate,
)
from .scenario import Scenario, build_system, initial_state
from .welfare import QuadraticWelfare, lambda_star

__all__ = [
    "RunReport",
    "ComparisonReport",
    "run_scenario",
    "compare_controllers",
    "export_trajectory",
    "format_report",
    "write_report",
    "format_comparison",
    "write_comparison",
    "write_plot_sidecar",
    "total_variation",
    "fmt",
]


def fmt(x: float) -> str:
    """Lossless decimal rendering of a double (17 significant digits)."""
    return f"{float(x):.17g}"


def _fmt_vec(v) -> str:
    return "[" + ", ".join(fmt(x) for x in np.asarray(v, dtype=float)) + "]"


def total_variation(series: np.ndarray) -> float:
    """Sum of absolute increments of a sampled signal."""
    series = np.asarray(series, dtype=float)
    return float(np.sum(np.abs(np.diff(series))))


@dataclass
class RunReport:
    """Machine-readable outcome of one simulation run.

    Field names here are the report file's key names (see
    ``format_report``); values that depend on the welfare segment are
    reported per segment in segment order.
    """

    scenario: str
    controller: str
    t_end: float
    dt: float
    sample_every: int
    steady_tol: float
    converged: bool
    final_time: float
    final_lambda: np.ndarray
    final_omega: np.ndarray
    final_ug: np.ndarray
    final_ud: np.ndarray
    supply_demand_gap: float
    final_kkt_residual: float
    lambda_targets: list
    final_lambda_error: float
    lyapunov_max_increment: float
    lyapunov_max_mismatch: float
    passivity_max_residual: float
    security_margin_min: float
    lambda_total_variation: np.ndarray
    event_times: list
    n_samples: int
    wall_clock_seconds: float  # console only, never written to the report file


def _physics_port_residual(sys: ClosedLoopSystem, traj: Trajectory) -> float:
    """Max of d(H_p)/dt - u.T y over the sampled trajectory, per segment.

    Finite differences at the sampling resolution (not the integrator
    step), so this is a coarse report figure; the acceptance-grade
    passivity check integrates the open-loop physics at full resolution.
    """
    m, n = sys.physics.m, sys.physics.n
    worst = -np.inf
    for seg in traj.segments:
        rows = traj.values[seg.start:seg.stop]
        times = traj.times[seg.start:seg.stop]
        if len(times) < 2:
            continue
        seg_sys = sys.with_welfare(seg.welfare)
        hp = np.empty(len(times))
        power = np.empty(len(times))
        for i, x in enumerate(rows):
            eta, p, zc = x[:m], x[m:m + n], x[m + n:]
            omega = p / sys.physics.inertia
            ug, ud = seg_sys.controller.output(zc)
            hp[i] = (0.5 * float(p @ (omega))
                     - float(sys.physics.line_strength @ np.cos(eta)))
            power[i] = float(omega @ (ug - ud))
        fd = np.diff(hp) / np.diff(times)
        worst = max(worst, float(np.max(fd - 0.5 * (power[:-1] + power[1:]))))
    return worst if np.isfinite(worst) else float("nan")


def _segment_price_targets(traj: Trajectory) -> list:
    targets = []
    for seg in traj.segments:
        if isinstance(seg.welfare, QuadraticWelfare):
            targets.append(lambda_star(seg.welfare))
        elif seg.anchor is not None:
            targets.append(float(np.mean(seg.anchor.controller.lam)))
        else:
            targets.append(float("nan"))
    return targets


def run_scenario(scenario: Scenario, controller_override: str | None = None,
                 dt: float | None = None, t_end: float | None = None):
    """Simulate a scenario and assemble its report.

    Returns ``(trajectory, report)``.  ``controller_override``, ``dt``
    and ``t_end`` replace the scenario's values without mutating it.
    """
    sys = build_system(scenario, controller_override)
    s0 = initial_state(scenario, sys)
    run_dt = scenario.dt if dt is None else float(dt)
    run_t_end = scenario.t_end if t_end is None else float(t_end)

    start = time.perf_counter()
    traj = simulate(sys, s0, run_t_end, run_dt,
                    events=scenario.events, sample_every=scenario.sample_every)
    elapsed = time.perf_counter() - start

    final = traj.states[-1]
    final_sys = sys.with_welfare(traj.segments[-1].welfare)
    omega = final.physical.p / sys.physics.inertia
    ug, ud = final_sys.controller.output(final_sys.pack(final)[sys.physics.m + sys.physics.n:])
    targets = _segment_price_targets(traj)
    lam = final.controller.lam

    descent = lyapunov_descent_check(sys, traj) if len(traj) >= 2 else []
    lyap_inc = max((r.max_increment for r in descent), default=float("nan"))
    lyap_mis = max((r.max_mismatch for r in descent), default=float("nan"))

    n = sys.physics.n
    lam_columns = np.stack([traj.column(f"lam_{i + 1}") for i in range(n)], axis=1)

    report = RunReport(
        scenario=scenario.name,
        controller=sys.kind,
        t_end=run_t_end,
        dt=run_dt,
        sample_every=scenario.sample_every,
        steady_tol=scenario.steady_tol,
        converged=detect_steady_state(final_sys, final, scenario.steady_tol),
        final_time=float(traj.times[-1]),
        final_lambda=lam.copy(),
        final_omega=omega.copy(),
        final_ug=np.asarray(ug, dtype=float).copy(),
        final_ud=np.asarray(ud, dtype=float).copy(),
        supply_demand_gap=abs(float(np.sum(ug) - np.sum(ud))),
        final_kkt_residual=float(traj.channels["kkt_residual"][-1]),
        lambda_targets=targets,
        final_lambda_error=float(np.max(np.abs(lam - targets[-1]))),
        lyapunov_max_increment=lyap_inc,
        lyapunov_max_mismatch=lyap_mis,
        passivity_max_residual=_physics_port_residual(sys, traj),
        security_margin_min=float(np.min(traj.channels["security_margin"])),
        lambda_total_variation=np.array([total_variation(lam_columns[:, i])
                                         for i in range(n)]),
        event_times=[ev.time for ev in scenario.events],
        n_samples=len(traj),
        wall_clock_seconds=elapsed,
    )
    return traj, report


@dataclass
class ComparisonReport:
    """Side-by-side result of both controllers on identical physics/welfare."""

    internal: RunReport
    gradient: RunReport
    tv_window_start: float
    tv_internal: np.ndarray
    tv_gradient: np.ndarray
    internal_tv_le_gradient: bool


def _window_tv(traj: Trajectory, t_start: float) -> np.ndarray:
    keep = traj.times >= t_start
    n = sum(1 for lbl in traj.state_labels if lbl.startswith("lam_"))
    return np.array([total_variation(traj.column(f"lam_{i + 1}")[keep]) for i in range(n)])


def compare_controllers(scenario: Scenario, dt: float | None = None,
                        t_end: float | None = None):
    """Run both controllers on the scenario and judge the oscillation claim.

    The total variation of each price trace is compared over the window
    from the first event (or t = 0 when there are none) to the end: the
    internal-model controller dissipates price differences while the
    gradient controller integrates them, so the former's traces should
    never be more oscillatory.

    Returns ``(traj_internal, traj_gradient, comparison)``.
    """
    traj_im, rep_im = run_scenario(scenario, "internal-model", dt=dt, t_end=t_end)
    traj_gr, rep_gr = run_scenario(scenario, "gradient", dt=dt, t_end=t_end)
    window = scenario.events[0].time if scenario.events else 0.0
    tv_im = _window_tv(traj_im, window)
    tv_gr = _window_tv(traj_gr, window)
    comparison = ComparisonReport(
        internal=rep_im,
        gradient=rep_gr,
        tv_window_start=window,
        tv_internal=tv_im,
        tv_gradient=tv_gr,
        internal_tv_le_gradient=bool(np.all(tv_im <= tv_gr)),
    )
    return traj_im, traj_gr, comparison


# -- output files -------------------------------------------------------------


def export_trajectory(traj: Trajectory, path) -> None:
    """Write a trajectory as CSV: time, state columns, monitor channels.

    17-significant-digit decimals; parsing the file reproduces the
    in-memory values exactly.
    """
    path = Path(path)
    header = ["t"] + list(traj.state_labels) + list(CHANNEL_NAMES)
    lines = [",".join(header)]
    channel_matrix = np.stack([traj.channels[name] for name in CHANNEL_NAMES], axis=1)
    for i in range(len(traj)):
        row = [fmt(traj.times[i])]
        row += [fmt(x) for x in traj.values[i]]
        row += [fmt(x) for x in channel_matrix[i]]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def format_report(report: RunReport) -> str:
    """Render a run report in the same flat key = value syntax as scenarios.

    Deterministic; excludes wall-clock time (see module docstring).
    """
    lines = [
        f"scenario = {report.scenario}",
        f"controller = {report.controller}",
        f"t_end = {fmt(report.t_end)}",
        f"dt = {fmt(report.dt)}",
        f"sample_every = {report.sample_every}",
        f"steady_tol = {fmt(report.steady_tol)}",
        f"converged = {'true' if report.converged else 'false'}",
        f"final.time = {fmt(report.final_time)}",
        f"final.lambda = {_fmt_vec(report.final_lambda)}",
        f"final.omega = {_fmt_vec(report.final_omega)}",
        f"final.omega_inf = {fmt(np.max(np.abs(report.final_omega)))}",
        f"final.ug = {_fmt_vec(report.final_ug)}",
        f"final.ud = {_fmt_vec(report.final_ud)}",
        f"final.supply_demand_gap = {fmt(report.supply_demand_gap)}",
        f"final.kkt_residual = {fmt(report.final_kkt_residual)}",
        f"final.lambda_error = {fmt(report.final_lambda_error)}",
    ]
    for i, target in enumerate(report.lambda_targets, 1):
        lines.append(f"segment.{i}.lambda_target = {fmt(target)}")
    lines += [
        f"lyapunov.max_increment = {fmt(report.lyapunov_max_increment)}",
        f"lyapunov.max_mismatch = {fmt(report.lyapunov_max_mismatch)}",
        f"passivity.max_residual = {fmt(report.passivity_max_residual)}",
        f"security.min_margin = {fmt(report.security_margin_min)}",
        f"oscillation.lambda_tv = {_fmt_vec(report.lambda_total_variation)}",
        f"events = {_fmt_vec(report.event_times)}",
        f"n_samples = {report.n_samples}",
    ]
    return "\n".join(lines) + "\n"


def write_report(report: RunReport, path) -> None:
    Path(path).write_text(format_report(report))


def format_comparison(comparison: ComparisonReport) -> str:
    ok = "pass" if comparison.internal_tv_le_gradient else "fail"
    lines = [
        f"comparison.tv_window_start = {fmt(comparison.tv_window_start)}",
        f"comparison.tv_internal_model = {_fmt_vec(comparison.tv_internal)}",
        f"comparison.tv_gradient = {_fmt_vec(comparison.tv_gradient)}",
        f"comparison.internal_tv_le_gradient = {ok}",
        "",
        "# internal-model run",
    ]
    lines += ["internal." + line for line in
              format_report(comparison.internal).rstrip("\n").split("\n")]
    lines += ["", "# gradient run"]
    lines += ["gradient." + line for line in
              format_report(comparison.gradient).rstrip("\n").split("\n")]
    return "\n".join(lines) + "\n"


def write_comparison(comparison: ComparisonReport, path) -> None:
    Path(path).write_text(format_comparison(comparison))


def write_plot_sidecar(traj: Trajectory, path) -> None:
    """Suggested plot panels for a trajectory CSV (column names per panel)."""
    n = sum(1 for lbl in traj.state_labels if lbl.startswith("lam_"))
    panels = [
        ("prices", [f"lam_{i + 1}" for i in range(n)]),
        ("momenta", [f"p_{i + 1}" for i in range(n)]),
    ]
    if traj.controller_kind == "gradient":
        panels.append(("dispatch", [f"ug_{i + 1}" for i in range(n)]
                       + [f"ud_{i + 1}" for i in range(n)]))
    panels += [
        ("optimality", ["kkt_residual", "price_disagreement"]),
        ("energy", ["hamiltonian", "shifted_hamiltonian"]),
        ("margins", ["omega_inf", "security_margin"]),
    ]
    lines = [f"panel.{name} = [{', '.join(cols)}]" for name, cols in panels]
    Path(path).write_text("\n".join(lines) + "\n")
