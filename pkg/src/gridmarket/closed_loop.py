"""Power-preserving interconnection of the grid with a pricing controller.

The grid's port output y = (omega, -omega) is fed to the controller with
a sign flip (u_ctrl = -y) and the controller's output — a dispatch
(u_g, u_d) — is fed back into the grid (u_grid = y_ctrl), so the
interconnection itself neither stores nor dissipates energy:
u_grid.T y_grid + u_ctrl.T y_ctrl = 0 at every instant.  The result is an
autonomous closed-loop port-Hamiltonian system whose equilibria are
exactly the welfare-optimal, zero-frequency-deviation operating points.

This module owns everything that operates on the coupled system:

* the closed-loop vector field, with an optional debug path that
  assembles the full structure matrix and cross-checks the
  port-interconnection computation against it;
* the shifted Hamiltonian (Lyapunov candidate centered at an
  equilibrium) and its analytic dissipation rate, plus a descent check
  that turns the stability proof into a runtime monitor;
* the equilibrium solver (closed-form prices for quadratic welfare, the
  projected-gradient oracle otherwise; line angles by inverting the flow
  map inside the security region);
* a deterministic fixed-step RK4 integrator with event handling
  (discontinuous welfare-parameter swaps at aligned step boundaries) and
  per-sample monitor channels.

State layout throughout: x = (eta, p, z_ctrl) where z_ctrl is the
controller's packed (co-energy) state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import physics as phys
from .graph import min_norm_flow
from .physics import PhysicalParams, PhysicalState
from .welfare import (
    QuadraticWelfare,
    WelfareError,
    kkt_residual,
    optimal_dispatch,
    price_disagreement,
    projected_gradient_dispatch,
)

__all__ = [
    "SimulationError",
    "EquilibriumError",
    "InfeasibleFlow",
    "NoConvergence",
    "StructureMismatch",
    "FullState",
    "Event",
    "Trajectory",
    "TrajectorySegment",
    "ClosedLoopSystem",
    "closed_loop_rhs",
    "rk4",
    "rk4_step",
    "shifted_hamiltonian",
    "dissipation_rate",
    "DescentReport",
    "lyapunov_descent_check",
    "solve_equilibrium",
    "simulate",
    "detect_steady_state",
    "CHANNEL_NAMES",
]

# Security region: equilibrium line angles must satisfy |eta_k| < pi/2;
# the solver stays strictly inside with a small margin.
_SIN_CAP = math.sin(0.999 * math.pi / 2)
_EQ_RESIDUAL_TOL = 1e-9


class SimulationError(RuntimeError):
    """A simulation could not be carried out as requested."""


class EquilibriumError(SimulationError):
    """The equilibrium solver failed."""


class InfeasibleFlow(EquilibriumError):
    """The optimal dispatch needs a line flow outside the security region."""


class NoConvergence(EquilibriumError):
    """An iterative solve did not reach its residual target."""


class StructureMismatch(RuntimeError):
    """Port-interconnection and assembled-matrix vector fields disagree."""


@dataclass
class FullState:
    """Closed-loop state: physical energy variables plus controller state."""

    physical: PhysicalState
    controller: object  # InternalModelState or GradientControllerState

    def copy(self) -> "FullState":
        return FullState(self.physical.copy(), self.controller.copy())


@dataclass(frozen=True)
class Event:
    """Scheduled welfare-parameter replacement, applied exactly at `time`.

    The state is continuous across an event; only the parameters jump.
    """

    time: float
    welfare: object

    def __post_init__(self):
        if self.time < 0:
            raise ValueError("event time must be nonnegative")


@dataclass
class TrajectorySegment:
    """Rows [start, stop) of a trajectory sharing one welfare and one anchor."""

    start: int
    stop: int
    welfare: object
    anchor: Optional[FullState]


CHANNEL_NAMES = (
    "hamiltonian",
    "shifted_hamiltonian",
    "omega_inf",
    "kkt_residual",
    "price_disagreement",
    "security_margin",
)


@dataclass
class Trajectory:
    """Sampled closed-loop run with monitor channels.

    Sampling rule (this is the normative definition of the row set):
    every inter-event segment contributes a row at its first step, at
    every ``sample_every``-th step after that, and at its last step.
    Event boundaries therefore appear twice — once as the end of the old
    segment (pre-event channels) and once as the start of the new one
    (post-event channels) — with the same timestamp and state; times are
    strictly increasing within each segment.
    """

    times: np.ndarray
    states: list
    values: np.ndarray          # packed states, one row per sample
    channels: dict
    segments: list
    state_labels: list
    dt: float
    sample_every: int
    controller_kind: str

    def __len__(self) -> int:
        return len(self.times)

    def column(self, label: str) -> np.ndarray:
        """State column by its CSV label (e.g. ``lam_1``)."""
        idx = self.state_labels.index(label)
        return self.values[:, idx]


class ClosedLoopSystem:
    """Grid + controller with precomputed matrices for the hot loop."""

    def __init__(self, physics: PhysicalParams, controller):
        if physics.graph.n != controller.n:
            raise ValueError(
                f"physical graph has {physics.graph.n} nodes "
                f"but controller is sized for {controller.n}"
            )
        self.physics = physics
        self.controller = controller
        self._m = physics.m
        self._n = physics.n
        self._nc = controller.state_size
        self.dim = self._m + self._n + self._nc
        self._d = physics.graph.incidence()
        self._d_t = self._d.T.copy()
        self._gamma = physics.line_strength
        self._minv = 1.0 / physics.inertia
        self._damping = physics.damping
        self._assembled = self._build_assembled()

    @property
    def welfare(self):
        return self.controller.welfare

    @property
    def comm(self):
        return self.controller.comm

    @property
    def kind(self) -> str:
        return self.controller.kind

    def with_welfare(self, welfare) -> "ClosedLoopSystem":
        """Same physics and controller wiring, new welfare parameters."""
        return ClosedLoopSystem(self.physics, self.controller.with_welfare(welfare))

    # -- state packing ----------------------------------------------------

    def pack(self, s: FullState) -> np.ndarray:
        if s.physical.eta.shape != (self._m,) or s.physical.p.shape != (self._n,):
            raise ValueError("physical state dimensions do not match the system")
        return np.concatenate((s.physical.eta, s.physical.p,
                               self.controller.pack(s.controller)))

    def unpack(self, x: np.ndarray) -> FullState:
        m, n = self._m, self._n
        return FullState(
            PhysicalState(x[:m].copy(), x[m:m + n].copy()),
            self.controller.unpack(x[m + n:]),
        )

    def state_labels(self):
        labels = [f"eta_{k + 1}" for k in range(self._m)]
        labels += [f"p_{i + 1}" for i in range(self._n)]
        labels += self.controller.state_labels()
        return labels

    # -- vector field ------------------------------------------------------

    def rhs_flat(self, x: np.ndarray) -> np.ndarray:
        """Closed-loop vector field via the port interconnection."""
        m, n = self._m, self._n
        eta = x[:m]
        p = x[m:m + n]
        zc = x[m + n:]
        omega = p * self._minv
        u_g, u_d = self.controller.output(zc)
        out = np.empty_like(x)
        out[:m] = self._d_t @ omega
        out[m:m + n] = (-(self._d @ (self._gamma * np.sin(eta)))
                        - self._damping * omega + u_g - u_d)
        out[m + n:] = self.controller.rhs(zc, -omega, omega)
        return out

    def _build_assembled(self):
        """Precompute the assembled closed-loop structure for the debug path."""
        m, n = self._m, self._n
        ctrl = self.controller
        if ctrl.kind == "internal-model":
            w = ctrl.welfare
            qg_inv = np.linalg.inv(w.qg)
            qd_inv = np.linalg.inv(w.qd)
            s_sum = qg_inv + qd_inv
            size = m + 2 * n
            full = np.zeros((size, size))
            full[:m, m:m + n] = self._d_t
            full[m:m + n, :m] = -self._d
            full[m:m + n, m:m + n] = -np.diag(self._damping)
            full[m:m + n, m + n:] = s_sum
            full[m + n:, m:m + n] = -s_sum
            full[m + n:, m + n:] = -ctrl._laplacian
            affine = np.zeros(size)
            affine[m:m + n] = -(qg_inv @ w.c + qd_inv @ w.b)
            return full, affine
        # gradient controller, energy-variable form
        mc = ctrl.m_c
        dc = ctrl.comm.incidence()
        size = m + 4 * n + mc
        eye = np.eye(n)
        full = np.zeros((size, size))
        r_p = slice(m, m + n)
        r_g = slice(m + n, m + 2 * n)
        r_d = slice(m + 2 * n, m + 3 * n)
        r_v = slice(m + 3 * n, m + 3 * n + mc)
        r_l = slice(m + 3 * n + mc, size)
        full[:m, r_p] = self._d_t
        full[r_p, :m] = -self._d
        full[r_p, r_p] = -np.diag(self._damping)
        full[r_p, r_g] = eye
        full[r_p, r_d] = -eye
        full[r_g, r_p] = -eye
        full[r_g, r_l] = eye
        full[r_d, r_p] = eye
        full[r_d, r_l] = -eye
        full[r_v, r_l] = -dc.T
        full[r_l, r_g] = -eye
        full[r_l, r_d] = eye
        full[r_l, r_v] = dc
        return full, None

    def assembled_rhs_flat(self, x: np.ndarray) -> np.ndarray:
        """Closed-loop vector field by multiplying the assembled matrices.

        Algebraically identical to ``rhs_flat``; computed along a
        different floating-point path, so agreement to 1e-14 certifies
        the structure (skew interconnection, dissipation placement,
        affine terms) was assembled consistently with the ports.
        """
        m, n = self._m, self._n
        eta = x[:m]
        p = x[m:m + n]
        zc = x[m + n:]
        full, affine = self._assembled
        ctrl = self.controller
        if ctrl.kind == "internal-model":
            grad = np.concatenate((self._gamma * np.sin(eta), p * self._minv, zc))
            return full @ grad + affine
        w = ctrl.welfare
        grad = np.concatenate((self._gamma * np.sin(eta), p * self._minv, zc))
        xdot = full @ grad
        ug = zc[:n]
        ud = zc[n:2 * n]
        xdot[m + n:m + 2 * n] -= w.cost_gradient(ug)
        xdot[m + 2 * n:m + 3 * n] += w.utility_gradient(ud)
        out = np.empty(self.dim)
        out[:m + n] = xdot[:m + n]
        out[m + n:] = xdot[m + n:] / ctrl._tau_flat  # energy -> co-energy rates
        return out

    def structure_matrices(self):
        """(J, R) of the closed loop: skew interconnection and dissipation.

        J is exactly skew-symmetric.  R is the positive-semidefinite
        dissipation matrix when the welfare is quadratic; for general
        convex welfare the dispatch dissipation is a nonlinear monotone
        map, so R covers only the damping/Laplacian part and the rest is
        checked through monotonicity, not eigenvalues.
        """
        m, n = self._m, self._n
        ctrl = self.controller
        if ctrl.kind == "internal-model":
            full, _ = self._assembled
            j = np.zeros_like(full)
            j[:] = full
            j[m:m + n, m:m + n] = 0.0
            j[m + n:, m + n:] = 0.0
            r = np.zeros_like(full)
            r[m:m + n, m:m + n] = np.diag(self._damping)
            r[m + n:, m + n:] = ctrl._laplacian
            return j, r
        full, _ = self._assembled
        j = full.copy()
        j[m:m + n, m:m + n] = 0.0
        r = np.zeros_like(full)
        r[m:m + n, m:m + n] = np.diag(self._damping)
        w = ctrl.welfare
        if isinstance(w, QuadraticWelfare):
            r[m + n:m + 2 * n, m + n:m + 2 * n] = w.qg
            r[m + 2 * n:m + 3 * n, m + 2 * n:m + 3 * n] = w.qd
            return j, r
        return j, None

    # -- energies ----------------------------------------------------------

    def hamiltonian(self, x: np.ndarray) -> float:
        """Total closed-loop energy: grid energy plus controller storage."""
        m, n = self._m, self._n
        state = PhysicalState(x[:m], x[m:m + n])
        return phys.hamiltonian(self.physics, state) + self.controller.hamiltonian(x[m + n:])

    def shifted_hamiltonian_flat(self, x: np.ndarray, x_bar: np.ndarray) -> float:
        m, n = self._m, self._n
        eta, p = x[:m], x[m:m + n]
        eta_b, p_b = x_bar[:m], x_bar[m:m + n]
        dp = p - p_b
        kinetic = 0.5 * float(dp @ (dp * self._minv))
        potential = float(
            self._gamma @ (np.cos(eta_b) - np.cos(eta))
            - (eta - eta_b) @ (self._gamma * np.sin(eta_b))
        )
        return kinetic + potential + self.controller.shifted_storage(x[m + n:], x_bar[m + n:])

    def dissipation_rate_flat(self, x: np.ndarray, x_bar: np.ndarray) -> float:
        m, n = self._m, self._n
        omega = x[m:m + n] * self._minv
        return (-float(omega @ (self._damping * omega))
                + self.controller.dissipation_rate(x[m + n:], x_bar[m + n:]))

    # -- monitor channels ---------------------------------------------------

    def monitor_channels(self, x: np.ndarray, anchor: Optional[np.ndarray]) -> dict:
        m, n = self._m, self._n
        eta = x[:m]
        p = x[m:m + n]
        zc = x[m + n:]
        ctrl = self.controller
        u_g, u_d = ctrl.output(zc)
        lam = ctrl.prices(zc)
        if ctrl.kind == "gradient":
            v = zc[2 * n:2 * n + ctrl.m_c]
        else:
            # No flow state to report against; the deterministic
            # minimum-norm flow leaves exactly the supply/demand
            # imbalance in the balance residual.
            v = min_norm_flow(self.comm, u_g - u_d)
        return {
            "hamiltonian": self.hamiltonian(x),
            "shifted_hamiltonian": (self.shifted_hamiltonian_flat(x, anchor)
                                    if anchor is not None else math.nan),
            "omega_inf": float(np.max(np.abs(p * self._minv))),
            "kkt_residual": kkt_residual(self.welfare, self.comm, u_g, u_d, v, lam),
            "price_disagreement": price_disagreement(lam),
            "security_margin": float(np.min(np.pi / 2 - np.abs(eta))),
        }


def closed_loop_rhs(sys: ClosedLoopSystem, s: FullState,
                    check_structure: bool = False) -> FullState:
    """Closed-loop derivative at a state, as a state-shaped container.

    With ``check_structure=True`` the vector field is computed twice —
    through the ports and through the assembled structure matrices — and
    a disagreement above 1e-14 raises ``StructureMismatch``.
    """
    x = sys.pack(s)
    dx = sys.rhs_flat(x)
    if check_structure:
        dx_mat = sys.assembled_rhs_flat(x)
        gap = float(np.max(np.abs(dx - dx_mat)))
        # 1e-14 absolute for O(1) dynamics; proportional beyond that
        tol = 1e-14 * max(1.0, float(np.max(np.abs(dx_mat))))
        if gap > tol:
            raise StructureMismatch(
                f"port and assembled vector fields disagree by {gap:.3e}"
            )
    return sys.unpack(dx)


def rk4(f, x: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of an autonomous field."""
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def rk4_step(sys: ClosedLoopSystem, s: FullState, dt: float) -> FullState:
    """One RK4 step of the closed loop; the input state is not mutated."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = rk4(sys.rhs_flat, sys.pack(s), dt)
    if not np.all(np.isfinite(x)):
        raise SimulationError("non-finite derivative encountered in rk4 step")
    return sys.unpack(x)


def shifted_hamiltonian(sys: ClosedLoopSystem, s: FullState, sbar: FullState) -> float:
    """Lyapunov candidate H(x) - (x - xbar).T grad H(xbar) - H(xbar).

    Zero at the anchor; nonnegative in a neighborhood of it whenever the
    anchor's line angles lie strictly inside the security region (the
    potential term is then a Bregman distance of a locally convex
    function).  Along closed-loop trajectories it is non-increasing.
    """
    return sys.shifted_hamiltonian_flat(sys.pack(s), sys.pack(sbar))


def dissipation_rate(sys: ClosedLoopSystem, s: FullState, sbar: FullState) -> float:
    """Analytic rate of the shifted Hamiltonian along the flow (<= 0).

    Internal-model: -omega.T A omega - (lam - lam_bar).T L_c (lam - lam_bar).
    Gradient: -omega.T A omega minus the monotone gap of the marginal
    cost/utility maps between the state and the anchor.
    """
    return sys.dissipation_rate_flat(sys.pack(s), sys.pack(sbar))


@dataclass
class DescentReport:
    """Per-segment Lyapunov monitoring result.

    ``max_increment``: largest rise of the shifted Hamiltonian between
    consecutive samples (a correct integration of the true dynamics
    keeps this at the integrator's error level, O(dt^2) or far below).
    ``max_mismatch``: largest deviation between the finite-difference
    derivative of the shifted Hamiltonian and the analytic dissipation
    rate (trapezoid over each interval), an O(dt^2) quantity.
    """

    max_increment: float
    max_mismatch: float
    n_samples: int


def _descent_metrics(seg_sys: ClosedLoopSystem, times: np.ndarray,
                     values: np.ndarray, anchor: np.ndarray) -> DescentReport:
    k = len(times)
    if k < 2:
        raise ValueError("descent check needs at least 2 samples")
    hbar = np.array([seg_sys.shifted_hamiltonian_flat(values[i], anchor) for i in range(k)])
    rate = np.array([seg_sys.dissipation_rate_flat(values[i], anchor) for i in range(k)])
    dts = np.diff(times)
    fd = np.diff(hbar) / dts
    rate_mid = 0.5 * (rate[:-1] + rate[1:])
    return DescentReport(
        max_increment=float(np.max(np.diff(hbar))),
        max_mismatch=float(np.max(np.abs(fd - rate_mid))),
        n_samples=k,
    )


def lyapunov_descent_check(sys: ClosedLoopSystem, trajectory: Trajectory,
                           sbar: Optional[FullState] = None) -> list:
    """Run the descent monitor on every inter-event segment of a trajectory.

    Each segment is checked against its own anchor (the equilibrium of
    the welfare active on that segment, re-solved after each event); a
    caller-supplied ``sbar`` overrides the anchor for single-segment
    trajectories.  Segments whose equilibrium could not be solved are
    skipped (their shifted-Hamiltonian channel is NaN already).
    """
    if sbar is not None and len(trajectory.segments) > 1:
        raise ValueError("explicit anchor only makes sense for single-segment trajectories")
    if len(trajectory) < 2:
        raise ValueError("descent check needs at least 2 samples")
    reports = []
    for seg in trajectory.segments:
        if seg.stop - seg.start < 2:
            continue  # zero-length segment (event at a boundary)
        seg_sys = sys.with_welfare(seg.welfare)
        anchor_state = sbar if sbar is not None else seg.anchor
        if anchor_state is None:
            continue
        anchor = seg_sys.pack(anchor_state)
        times = trajectory.times[seg.start:seg.stop]
        values = trajectory.values[seg.start:seg.stop]
        reports.append(_descent_metrics(seg_sys, times, values, anchor))
    return reports


def solve_equilibrium(sys: ClosedLoopSystem) -> FullState:
    """Welfare-optimal zero-frequency equilibrium of the closed loop.

    Prices and dispatch come from the closed form (quadratic welfare) or
    the projected-gradient oracle (general convex).  The line angles
    solve D Gamma sin(eta) = u_g - u_d: the minimum-norm flow f from the
    incidence pseudoinverse gives sin(eta_k) = f_k / gamma_k, taken on
    the principal branch so the equilibrium lies inside the security
    region; anti-phase equilibria are deliberately unreachable.  A damped
    Gauss-Newton refinement runs if the residual somehow exceeds 1e-9
    (it does not in practice: the minimum-norm flow solves the balance
    exactly for connected graphs).
    """
    w = sys.welfare
    if isinstance(w, QuadraticWelfare):
        dispatch = optimal_dispatch(w)
    else:
        try:
            dispatch = projected_gradient_dispatch(w, tol=1e-12)
        except WelfareError as exc:
            raise NoConvergence(f"welfare optimum not found: {exc}") from exc
    injection = dispatch.ug - dispatch.ud
    d = sys.physics.graph.incidence()
    gamma = sys.physics.line_strength
    flow = min_norm_flow(sys.physics.graph, injection)
    s = flow / gamma
    worst = int(np.argmax(np.abs(s)))
    if abs(s[worst]) > _SIN_CAP:
        raise InfeasibleFlow(
            f"optimal dispatch needs |sin(eta)| = {abs(s[worst]):.6f} on edge {worst}; "
            "no equilibrium inside the security region"
        )
    eta = np.arcsin(s)
    residual = d @ (gamma * np.sin(eta)) - injection
    if np.max(np.abs(residual)) >= _EQ_RESIDUAL_TOL:
        eta = _refine_angles(d, gamma, injection, eta)
    zc = sys.controller.equilibrium_state(dispatch)
    return FullState(
        PhysicalState(eta, np.zeros(sys.physics.n)),
        sys.controller.unpack(zc),
    )


def _refine_angles(d, gamma, injection, eta, max_iter: int = 50) -> np.ndarray:
    """Damped Gauss-Newton on D Gamma sin(eta) = injection (roundoff guard)."""
    residual = d @ (gamma * np.sin(eta)) - injection
    for _ in range(max_iter):
        if np.max(np.abs(residual)) < _EQ_RESIDUAL_TOL:
            return eta
        jac = d * (gamma * np.cos(eta))
        step, *_ = np.linalg.lstsq(jac, -residual, rcond=None)
        alpha = 1.0
        norm0 = np.linalg.norm(residual)
        while alpha > 1e-12:
            trial = eta + alpha * step
            r_trial = d @ (gamma * np.sin(trial)) - injection
            if np.linalg.norm(r_trial) < norm0:
                eta, residual = trial, r_trial
                break
            alpha *= 0.5
        else:
            raise NoConvergence("angle refinement stalled")
        if np.max(np.abs(eta)) > 0.999 * np.pi / 2:
            raise InfeasibleFlow("angle refinement left the security region")
    raise NoConvergence(f"angle refinement did not converge in {max_iter} iterations")


def detect_steady_state(sys: ClosedLoopSystem, s: FullState, tol: float) -> bool:
    """True iff the closed-loop vector field is below `tol` in max-norm."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    return float(np.max(np.abs(sys.rhs_flat(sys.pack(s))))) < tol


def _segment_boundaries(t_end: float, events) -> list:
    times = [ev.time for ev in events]
    if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
        raise SimulationError("events must be sorted by strictly increasing time")
    if times and times[-1] > t_end:
        raise SimulationError(f"event at t = {times[-1]:g} is beyond t_end = {t_end:g}")
    return [0.0] + times + [t_end]


def _segment_steps(t0: float, t1: float, dt: float) -> int:
    length = t1 - t0
    n_steps = int(round(length / dt))
    if abs(n_steps * dt - length) > 1e-9 * max(1.0, length):
        raise SimulationError(
            f"dt = {dt:g} does not divide the interval [{t0:g}, {t1:g}]"
        )
    return n_steps


def simulate(sys: ClosedLoopSystem, s0: FullState, t_end: float, dt: float,
             events=(), sample_every: int = 1) -> Trajectory:
    """Integrate the closed loop with events and monitor channels.

    Fixed-step RK4; step boundaries are aligned to event times, each
    event swaps the welfare parameters exactly at its timestamp (state
    continuous), and the Lyapunov anchor is re-solved per segment.
    Sampling follows the rule documented on ``Trajectory``.  The run is
    deterministic: identical inputs give bit-identical trajectories.
    """
    if t_end < 0:
        raise SimulationError("t_end must be nonnegative")
    if dt <= 0:
        raise SimulationError("dt must be positive")
    if sample_every < 1:
        raise SimulationError("sample_every must be >= 1")
    boundaries = _segment_boundaries(t_end, events)
    welfares = [sys.welfare] + [ev.welfare for ev in events]

    times: list = []
    states: list = []
    rows: list = []
    channel_rows: list = []
    segments: list = []

    x = sys.pack(s0)
    current = sys
    for seg_idx in range(len(boundaries) - 1):
        t0, t1 = boundaries[seg_idx], boundaries[seg_idx + 1]
        if seg_idx > 0:
            current = current.with_welfare(welfares[seg_idx])
        try:
            anchor_state = solve_equilibrium(current)
            anchor = current.pack(anchor_state)
        except EquilibriumError:
            anchor_state, anchor = None, None
        seg_start_row = len(times)

        def record(t, x, current=current, anchor=anchor):
            times.append(t)
            states.append(current.unpack(x))
            rows.append(x.copy())
            channel_rows.append(current.monitor_channels(x, anchor))

        record(t0, x)
        n_steps = _segment_steps(t0, t1, dt)
        f = current.rhs_flat
        for k in range(1, n_steps + 1):
            k1 = f(x)
            k2 = f(x + 0.5 * dt * k1)
            k3 = f(x + 0.5 * dt * k2)
            k4 = f(x + dt * k3)
            x = x + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            if k % sample_every == 0 or k == n_steps:
                if not np.all(np.isfinite(x)):
                    raise SimulationError(
                        f"non-finite state at t = {t0 + k * dt:g}"
                    )
                record(t0 + k * dt, x)
        segments.append(TrajectorySegment(seg_start_row, len(times),
                                          current.welfare, anchor_state))

    channels = {
        name: np.array([row[name] for row in channel_rows]) for name in CHANNEL_NAMES
    }
    return Trajectory(
        times=np.array(times),
        states=states,
        values=np.array(rows),
        channels=channels,
        segments=segments,
        state_labels=sys.state_labels(),
        dt=dt,
        sample_every=sample_every,
        controller_kind=sys.kind,
    )
