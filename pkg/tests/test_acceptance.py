"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The bundled four-area scenario is run once per controller at full length
(t_end = 40, dt = 1e-3) and shared across criteria; dedicated shorter
runs cover the step-size scaling measurements.
"""

import math

import numpy as np
import pytest

from gridmarket import (
    ClosedLoopSystem,
    Event,
    GradientController,
    InternalModelController,
    PhysicalParams,
    PhysicalState,
    QuadraticWelfare,
    bundled_scenario_path,
    integrate_open_loop,
    kkt_residual,
    load_scenario,
    lyapunov_descent_check,
    optimal_dispatch,
    passivity_residual,
    projected_gradient_dispatch,
    quartic_welfare,
    ring,
    rk4,
    run_scenario,
    simulate,
    solve_equilibrium,
    total_variation,
)
from gridmarket.runner import export_trajectory, format_report

LAMBDA_PRE = 66.0 / 73.0
LAMBDA_POST = 69.0 / 73.0
CONTROLLERS = ("internal-model", "gradient")


def check(criterion, ok, detail):
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{criterion}: {detail}"


@pytest.fixture(scope="module")
def bundled():
    scenario = load_scenario(bundled_scenario_path())
    runs = {kind: run_scenario(scenario, controller_override=kind)
            for kind in CONTROLLERS}
    return scenario, runs


def four_area_physics():
    g = ring(4)
    return PhysicalParams(g, np.ones(4), 2.0 * np.ones(4), np.ones(4)), g


def test_c1_common_price_pre_event(bundled):
    _, runs = bundled
    for kind in CONTROLLERS:
        traj, report = runs[kind]
        boundary = traj.segments[0].stop - 1  # t = 1^-
        assert traj.times[boundary] == 1.0
        lam = np.array([traj.column(f"lam_{i + 1}")[boundary] for i in range(4)])
        err = np.max(np.abs(lam - LAMBDA_PRE))
        check("1 common-price-pre-event",
              err < 1e-3 and report.wall_clock_seconds < 10.0,
              f"{kind}: max |lambda - 66/73| = {err:.3e}, "
              f"wall {report.wall_clock_seconds:.2f} s")


def test_c2_common_price_post_event(bundled):
    _, runs = bundled
    for kind in CONTROLLERS:
        _, report = runs[kind]
        err = np.max(np.abs(report.final_lambda - LAMBDA_POST))
        check("2 common-price-post-event", err < 1e-3,
              f"{kind}: max |lambda - 69/73| = {err:.3e} at t = 40")


def test_c3_frequency_regulation(bundled):
    _, runs = bundled
    for kind in CONTROLLERS:
        _, report = runs[kind]
        omega_inf = np.max(np.abs(report.final_omega))
        check("3 frequency-regulation", omega_inf < 1e-4,
              f"{kind}: |omega(t_end)|_inf = {omega_inf:.3e}")


def test_c4_optimal_dispatch(bundled):
    scenario, runs = bundled
    target = optimal_dispatch(scenario.events[0].welfare)
    for kind in CONTROLLERS:
        _, report = runs[kind]
        err = max(np.max(np.abs(report.final_ug - target.ug)),
                  np.max(np.abs(report.final_ud - target.ud)))
        check("4 optimal-dispatch",
              err < 1e-3 and report.supply_demand_gap < 1e-6,
              f"{kind}: dispatch error {err:.3e}, "
              f"balance gap {report.supply_demand_gap:.3e}")


def test_c5_kkt_optimality(bundled):
    _, runs = bundled
    for kind in CONTROLLERS:
        _, report = runs[kind]
        check("5 kkt-at-t-end", report.final_kkt_residual < 1e-4,
              f"{kind}: kkt residual {report.final_kkt_residual:.3e}")
    # closed form vs the independent projected-gradient oracle
    rng = np.random.RandomState(20240917)
    worst = 0.0
    for _ in range(20):
        n = int(rng.randint(2, 7))
        bg = rng.normal(size=(n, n))
        bd = rng.normal(size=(n, n))
        w = QuadraticWelfare(bg.T @ bg / n + np.eye(n), bd.T @ bd / n + np.eye(n),
                             rng.normal(size=n), rng.normal(size=n))
        closed = optimal_dispatch(w)
        brute = projected_gradient_dispatch(w)
        worst = max(worst,
                    float(np.max(np.abs(closed.ug - brute.ug))),
                    float(np.max(np.abs(closed.ud - brute.ud))))
    check("5 oracle-agreement", worst < 1e-6,
          f"worst dispatch gap over 20 random instances: {worst:.3e}")


def test_c6_lyapunov_descent(bundled):
    scenario, runs = bundled
    sys_by_kind = {}
    for kind in CONTROLLERS:
        traj, report = runs[kind]
        check("6 lyapunov-descent", report.lyapunov_max_increment < 1e-6,
              f"{kind}: max shifted-H increment {report.lyapunov_max_increment:.3e} "
              f"at dt = 1e-3")
    # finite-difference dH/dt vs the analytic dissipation: O(dt^2) scaling
    phys, g = four_area_physics()
    welfare = scenario.welfare
    for kind in CONTROLLERS:
        if kind == "internal-model":
            sys = ClosedLoopSystem(phys, InternalModelController(welfare, g))
        else:
            sys = ClosedLoopSystem(phys, GradientController(welfare, g))
        eq = solve_equilibrium(sys)
        s0 = eq.copy()
        s0.physical.p = s0.physical.p + np.array([0.3, -0.1, 0.2, -0.4])
        mismatch = {}
        for dt in (1e-2, 1e-3):
            traj = simulate(sys, s0, 3.0, dt, sample_every=1)
            rep, = lyapunov_descent_check(sys, traj)
            mismatch[dt] = rep.max_mismatch
        order = math.log10(mismatch[1e-2] / mismatch[1e-3])
        check("6 dissipation-identity-scaling", order > 1.5,
              f"{kind}: mismatch {mismatch[1e-2]:.2e} -> {mismatch[1e-3]:.2e}, "
              f"order {order:.2f}")


def test_c7_passivity():
    phys, _ = four_area_physics()
    state0 = PhysicalState(np.zeros(4), np.array([0.1, 0.0, 0.0, 0.0]))

    def u_fn(t):
        u_g = np.array([0.3 * np.sin(1.3 * t) + 0.2, 0.1, 0.05 * np.cos(t), 0.0])
        u_d = np.array([0.1, 0.2, 0.1 * np.sin(0.7 * t), 0.05])
        return u_g, u_d

    for dt in (1e-2, 1e-3):
        run = integrate_open_loop(phys, state0, u_fn, 5.0, dt)
        residual = passivity_residual(phys, run).max_port_residual
        check("7 passivity", residual <= 10 * dt * dt,
              f"dt = {dt:g}: max per-sample dH/dt - u.y = {residual:.3e} "
              f"(bound {10 * dt * dt:g})")


def test_c8_integrator_order(bundled):
    scenario, _ = bundled
    phys, g = four_area_physics()
    sys = ClosedLoopSystem(phys, InternalModelController(scenario.welfare, g))
    eq = solve_equilibrium(sys)
    x0 = sys.pack(eq)
    x0[4:8] += np.array([0.4, -0.2, 0.3, -0.5])
    x0[8:] += np.array([0.2, -0.1, 0.15, -0.05])
    horizon = 2.0

    def endpoint(dt):
        x = x0.copy()
        for _ in range(int(round(horizon / dt))):
            x = rk4(sys.rhs_flat, x, dt)
        return x

    reference = endpoint(1.25e-4)
    errors = [float(np.max(np.abs(endpoint(dt) - reference)))
              for dt in (4e-3, 2e-3, 1e-3)]
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    check("8 integrator-order", all(3.5 <= o <= 4.5 for o in orders),
          f"errors {errors[0]:.2e}/{errors[1]:.2e}/{errors[2]:.2e}, "
          f"orders {orders[0]:.2f}, {orders[1]:.2f}")


def test_c9_general_convex_welfare():
    phys, g = four_area_physics()
    w_pre = quartic_welfare([1, 2, 3, 4], [1, 1, 1, 1], [0, 0, 0, 0],
                            [1, 1.25, 1.5, 1.75])
    w_post = quartic_welfare([1, 2, 3, 4], [1, 1, 1, 1], [0, 0, 0, 0],
                             [1, 1.25, 1.5, 2])
    sys = ClosedLoopSystem(phys, GradientController(w_pre, g))
    eq = solve_equilibrium(sys)
    traj = simulate(sys, eq, 50.0, 1e-3, events=[Event(1.0, w_post)],
                    sample_every=100)
    final_sys = sys.with_welfare(w_post)
    x_end = traj.values[-1]
    rhs_norm = float(np.max(np.abs(final_sys.rhs_flat(x_end))))
    n = 4
    z_end = x_end[8:]
    kkt = kkt_residual(w_post, g, z_end[:n], z_end[n:2 * n],
                       z_end[2 * n:2 * n + 4], z_end[2 * n + 4:])
    check("9 convex-welfare-converges", rhs_norm < 1e-6 and kkt < 1e-4,
          f"gradient controller, quartic costs: rhs norm {rhs_norm:.3e}, "
          f"kkt {kkt:.3e}")
    refused = False
    try:
        InternalModelController(w_pre, g)
    except TypeError:
        refused = True
    check("9 internal-model-refusal", refused,
          "internal-model controller rejects non-quadratic welfare at construction")


def test_c10_oscillation_comparison(bundled):
    _, runs = bundled
    tv = {}
    for kind in CONTROLLERS:
        traj, _ = runs[kind]
        window = traj.times >= 1.0
        tv[kind] = total_variation(traj.column("lam_1")[window])
    check("10 oscillation-comparison", tv["internal-model"] < tv["gradient"],
          f"TV(lambda_1) over [1, 40]: internal {tv['internal-model']:.4f} "
          f"< gradient {tv['gradient']:.4f}")


def test_c11_determinism(bundled, tmp_path):
    scenario, runs = bundled
    traj1, report1 = runs["internal-model"]
    traj2, report2 = run_scenario(scenario, controller_override="internal-model")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    export_trajectory(traj1, a)
    export_trajectory(traj2, b)
    # sampling rule: 11 rows on [0, 1], 391 on [1, 40] (event boundary twice)
    assert len(a.read_text().splitlines()) == 1 + 402
    same_csv = a.read_bytes() == b.read_bytes()
    same_report = format_report(report1) == format_report(report2)
    check("11 determinism", same_csv and same_report,
          "repeated bundled runs produce byte-identical CSV and report")
