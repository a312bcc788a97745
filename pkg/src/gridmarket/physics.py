"""Lossless swing-equation network in port-Hamiltonian form.

State is stored in energy variables: voltage-angle differences ``eta``
(one per line, signed by the line's orientation) and angular momenta
``p = M omega`` (one per bus).  Absolute voltage angles never appear;
only differences enter the dynamics.  The energy function is

    H(eta, p) = 1/2 p.T M^-1 p - sum_k gamma_k cos(eta_k),

kinetic plus pendulum-like potential energy, and the open system

    d(eta)/dt = D.T M^-1 p
    d(p)/dt   = -D Gamma sin(eta) - A M^-1 p + u_g - u_d

with inputs ``u = (u_g, u_d)`` (generation, demand) and collocated
outputs ``y = (omega, -omega)`` is passive: dH/dt <= u.T y along every
trajectory.  All quantities are in per-unit; ``omega`` is the deviation
from the nominal frequency, so the nominal value never enters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .graph import NetworkGraph

__all__ = [
    "PhysicalParams",
    "PhysicalState",
    "hamiltonian",
    "hamiltonian_gradient",
    "frequency_deviation",
    "physics_rhs",
    "physics_output",
    "structure_matrix",
    "security_margin",
    "OpenLoopRun",
    "integrate_open_loop",
    "PassivityCheck",
    "passivity_residual",
]


@dataclass(frozen=True)
class PhysicalParams:
    """Swing-network parameters.

    Attributes
    ----------
    graph : NetworkGraph
        Physical topology (buses and transmission lines).
    inertia : array, shape (n,)
        Diagonal of the inertia matrix M [s^2 p.u.], strictly positive.
    damping : array, shape (n,)
        Diagonal of the damping matrix A [p.u.], strictly positive.
    line_strength : array, shape (m,)
        Per-line coupling gamma_k = V_i V_j B_ij [p.u.], strictly positive.
        Voltages and susceptances are never stored separately; only their
        product enters the model.
    """

    graph: NetworkGraph
    inertia: np.ndarray
    damping: np.ndarray
    line_strength: np.ndarray

    def __post_init__(self):
        n, m = self.graph.n, self.graph.m
        for name, arr, size in (
            ("inertia", self.inertia, n),
            ("damping", self.damping, n),
            ("line_strength", self.line_strength, m),
        ):
            arr = np.asarray(arr, dtype=float)
            object.__setattr__(self, name, arr)
            if arr.shape != (size,):
                raise ValueError(f"{name} must have shape ({size},), got {arr.shape}")
            if not np.all(arr > 0.0):
                raise ValueError(f"{name} entries must be strictly positive")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def m(self) -> int:
        return self.graph.m


@dataclass
class PhysicalState:
    """Energy variables of the swing network: angle differences and momenta."""

    eta: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if not (np.all(np.isfinite(self.eta)) and np.all(np.isfinite(self.p))):
            raise ValueError("physical state entries must be finite")

    def copy(self) -> "PhysicalState":
        return PhysicalState(self.eta.copy(), self.p.copy())


def _check_state(params: PhysicalParams, state: PhysicalState):
    if state.eta.shape != (params.m,):
        raise ValueError(f"eta must have shape ({params.m},), got {state.eta.shape}")
    if state.p.shape != (params.n,):
        raise ValueError(f"p must have shape ({params.n},), got {state.p.shape}")


def hamiltonian(params: PhysicalParams, state: PhysicalState) -> float:
    """Total energy 1/2 p.T M^-1 p - sum_k gamma_k cos(eta_k)."""
    _check_state(params, state)
    kinetic = 0.5 * float(state.p @ (state.p / params.inertia))
    potential = -float(params.line_strength @ np.cos(state.eta))
    return kinetic + potential


def hamiltonian_gradient(params: PhysicalParams, state: PhysicalState):
    """Gradient of the energy: (Gamma sin(eta), M^-1 p)."""
    _check_state(params, state)
    return params.line_strength * np.sin(state.eta), state.p / params.inertia


def frequency_deviation(params: PhysicalParams, state: PhysicalState) -> np.ndarray:
    """Per-bus frequency deviation omega = M^-1 p."""
    return np.asarray(state.p, dtype=float) / params.inertia


def physics_rhs(params: PhysicalParams, state: PhysicalState,
                u_g: np.ndarray, u_d: np.ndarray):
    """Open-system vector field; returns ``(deta, dp)``."""
    _check_state(params, state)
    u_g = np.asarray(u_g, dtype=float)
    u_d = np.asarray(u_d, dtype=float)
    if u_g.shape != (params.n,) or u_d.shape != (params.n,):
        raise ValueError(f"inputs must have shape ({params.n},)")
    d = params.graph.incidence()
    omega = state.p / params.inertia
    deta = d.T @ omega
    dp = -(d @ (params.line_strength * np.sin(state.eta))) - params.damping * omega + u_g - u_d
    return deta, dp


def physics_output(params: PhysicalParams, state: PhysicalState):
    """Collocated port output y = (omega, -omega)."""
    omega = frequency_deviation(params, state)
    return omega, -omega


def structure_matrix(params: PhysicalParams) -> np.ndarray:
    """Assembled interconnection-minus-dissipation matrix [[0, D.T], [-D, -A]].

    Its skew part is exactly [[0, D.T], [-D, 0]] and its symmetric part
    is -diag(0, A), which is negative semidefinite.
    """
    n, m = params.n, params.m
    d = params.graph.incidence()
    s = np.zeros((m + n, m + n))
    s[:m, m:] = d.T
    s[m:, :m] = -d
    s[m:, m:] = -np.diag(params.damping)
    return s


def security_margin(state: PhysicalState) -> float:
    """min_k (pi/2 - |eta_k|); negative when a line leaves the security region.

    Monitored, never enforced: trajectories may transiently leave the
    region and the report flags it.
    """
    return float(np.min(np.pi / 2 - np.abs(state.eta)))


@dataclass
class OpenLoopRun:
    """Physics-only trajectory with the inputs that produced it, sampled every step."""

    times: np.ndarray   # (k,)
    eta: np.ndarray     # (k, m)
    p: np.ndarray       # (k, n)
    u_g: np.ndarray     # (k, n)
    u_d: np.ndarray     # (k, n)
    dt: float


def integrate_open_loop(params: PhysicalParams, state0: PhysicalState,
                        u_of_t: Callable[[float], tuple], t_end: float,
                        dt: float) -> OpenLoopRun:
    """Integrate the open swing network with a prescribed input signal.

    Classical fixed-step RK4 with input evaluated at the stage times;
    every step is recorded so finite-difference energy checks see the
    integrator's own resolution.
    """
    _check_state(params, state0)
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ValueError("dt must divide t_end within rounding")

    d = params.graph.incidence()
    dt_mat = d.T
    gamma = params.line_strength
    minv = 1.0 / params.inertia
    damping = params.damping
    m = params.m

    def f(x, t):
        eta, p = x[:m], x[m:]
        ug, ud = u_of_t(t)
        omega = p * minv
        deta = dt_mat @ omega
        dp = -(d @ (gamma * np.sin(eta))) - damping * omega + ug - ud
        return np.concatenate((deta, dp))

    x = np.concatenate((state0.eta, state0.p))
    times = np.empty(n_steps + 1)
    etas = np.empty((n_steps + 1, params.m))
    ps = np.empty((n_steps + 1, params.n))
    ugs = np.empty((n_steps + 1, params.n))
    uds = np.empty((n_steps + 1, params.n))

    def record(i, t, x):
        times[i] = t
        etas[i] = x[:m]
        ps[i] = x[m:]
        ug, ud = u_of_t(t)
        ugs[i] = ug
        uds[i] = ud

    record(0, 0.0, x)
    for k in range(n_steps):
        t = k * dt
        k1 = f(x, t)
        k2 = f(x + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = f(x + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = f(x + dt * k3, t + dt)
        x = x + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at t = {(k + 1) * dt:g}")
        record(k + 1, (k + 1) * dt, x)
    return OpenLoopRun(times, etas, ps, ugs, uds, dt)


@dataclass
class PassivityCheck:
    """Finite-difference energy-balance diagnostics over a run.

    ``max_port_residual``: max over intervals of dH/dt - u.T y, the
    supplied-power bound; values at most O(dt^2) certify numerical
    passivity.  ``max_balance_error``: max |dH/dt - (-omega.T A omega +
    omega.T (u_g - u_d))|, the exact balance channel, which must be
    O(dt^2) purely from integration accuracy.
    """

    max_port_residual: float
    max_balance_error: float


def passivity_residual(params: PhysicalParams, run: OpenLoopRun) -> PassivityCheck:
    """Check the passivity inequality along an integrated run.

    dH/dt is the per-interval finite difference of the energy; the port
    power u.T y = omega.T (u_g - u_d) and the dissipation omega.T A omega
    are averaged over the interval endpoints (trapezoid), so both
    residual channels carry only the O(dt^2) finite-difference error.
    """
    k = len(run.times)
    if k < 2:
        raise ValueError("passivity check needs at least 2 samples")
    h = np.empty(k)
    supplied = np.empty(k)   # u.T y
    balance = np.empty(k)    # -omega.T A omega + omega.T (u_g - u_d)
    for i in range(k):
        state = PhysicalState(run.eta[i], run.p[i])
        h[i] = hamiltonian(params, state)
        omega = run.p[i] / params.inertia
        net = run.u_g[i] - run.u_d[i]
        supplied[i] = omega @ net
        balance[i] = -(omega @ (params.damping * omega)) + omega @ net
    dts = np.diff(run.times)
    dh = np.diff(h) / dts
    supplied_mid = 0.5 * (supplied[:-1] + supplied[1:])
    balance_mid = 0.5 * (balance[:-1] + balance[1:])
    return PassivityCheck(
        max_port_residual=float(np.max(dh - supplied_mid)),
        max_balance_error=float(np.max(np.abs(dh - balance_mid))),
    )
