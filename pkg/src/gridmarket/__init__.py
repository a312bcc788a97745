"""Frequency regulation with welfare-optimal real-time pricing.

A lossless AC power network in port-Hamiltonian form, coupled to one of
two distributed dynamic-pricing controllers over a communication graph:
an internal-model price-consensus design (quadratic welfare) and a
primal-dual gradient design (general convex welfare).  The package
simulates the closed loop with a deterministic fixed-step integrator and
monitors the theory at runtime: passivity of the grid, descent of the
shifted Hamiltonian, KKT optimality of the steady state.
"""

from .graph import GraphError, NetworkGraph, min_norm_flow, path, ring
from .physics import (
    OpenLoopRun,
    PassivityCheck,
    PhysicalParams,
    PhysicalState,
    frequency_deviation,
    hamiltonian,
    hamiltonian_gradient,
    integrate_open_loop,
    passivity_residual,
    physics_output,
    physics_rhs,
    security_margin,
)
from .welfare import (
    ConvexWelfare,
    Dispatch,
    QuadraticWelfare,
    WelfareError,
    consensus_projection,
    kkt_residual,
    lambda_star,
    optimal_dispatch,
    price_disagreement,
    projected_gradient_dispatch,
    quartic_welfare,
)
from .internal_model import InternalModelController, InternalModelState
from .gradient import GradientController, GradientControllerState, TimeConstants
from .closed_loop import (
    ClosedLoopSystem,
    DescentReport,
    EquilibriumError,
    Event,
    FullState,
    InfeasibleFlow,
    NoConvergence,
    SimulationError,
    StructureMismatch,
    Trajectory,
    closed_loop_rhs,
    detect_steady_state,
    dissipation_rate,
    lyapunov_descent_check,
    rk4,
    rk4_step,
    shifted_hamiltonian,
    simulate,
    solve_equilibrium,
)
from .scenario import (
    Scenario,
    ScenarioError,
    build_system,
    bundled_scenario_path,
    initial_state,
    load_scenario,
    parse_scenario_text,
)
from .runner import (
    ComparisonReport,
    RunReport,
    compare_controllers,
    export_trajectory,
    run_scenario,
    total_variation,
    write_report,
)

__version__ = "0.1.0"
