"""Primal-dual gradient controller: saddle-point dynamics on the welfare problem.

Continuous-time gradient descent on the primal variables (u_g, u_d, v)
and ascent on the multiplier lam of the balance-constrained welfare
problem, with per-block time constants tau:

    tau_g d(u_g)/dt   = -grad C(u_g) + lam + w_g
    tau_d d(u_d)/dt   = grad U(u_d) - lam + w_d
    tau_v d(v)/dt     = -D_c.T lam
    tau_l d(lam)/dt   = D_c v - u_g + u_d

The stationary points with zero port input are exactly the KKT points
of the welfare problem.  The system is port-Hamiltonian with quadratic
storage 1/2 x.T tau^-1 x in the energy variables x = tau z, a skew
interconnection built from +/-I and the communication incidence, and
the convex dissipation map z -> (grad C(u_g), -grad U(u_d), 0, 0).

The state is stored in co-energy variables z = (u_g, u_d, v, lam) and
the right-hand side pre-multiplies by tau^-1; this avoids converting
back and forth in the output map (the port output is just the (u_g,
u_d) slice).  Unlike the internal-model design, any welfare with
monotone gradients is accepted, including the built-in
quadratic-plus-quartic family.

The v dynamics integrate the price differences along communication
edges (rather than dissipating them), which is what makes this
controller slightly more oscillatory than the internal-model one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import NetworkGraph, min_norm_flow
from .welfare import Dispatch

__all__ = ["TimeConstants", "GradientControllerState", "GradientController"]


@dataclass(frozen=True)
class TimeConstants:
    """Diagonal, strictly positive controller timescales per block."""

    tau_g: np.ndarray
    tau_d: np.ndarray
    tau_v: np.ndarray
    tau_lambda: np.ndarray

    def __post_init__(self):
        for name in ("tau_g", "tau_d", "tau_v", "tau_lambda"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            if arr.ndim != 1:
                raise ValueError(f"{name} must be a vector of diagonal entries")
            if not np.all(arr > 0.0):
                raise ValueError(f"{name} entries must be strictly positive")

    @classmethod
    def ones(cls, n: int, m_c: int) -> "TimeConstants":
        return cls(np.ones(n), np.ones(n), np.ones(m_c), np.ones(n))


@dataclass
class GradientControllerState:
    """Co-energy controller state: dispatches, edge flows of price information, prices."""

    ug: np.ndarray
    ud: np.ndarray
    v: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        for name in ("ug", "ud", "v", "lam"):
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} entries must be finite")

    def copy(self) -> "GradientControllerState":
        return GradientControllerState(self.ug.copy(), self.ud.copy(),
                                       self.v.copy(), self.lam.copy())


class GradientController:
    """Primal-dual gradient controller bound to a welfare, comm graph and timescales."""

    kind = "gradient"

    def __init__(self, welfare, comm: NetworkGraph, tau: TimeConstants | None = None):
        n, m_c = comm.n, comm.m
        if welfare.n != n:
            raise ValueError(f"welfare has {welfare.n} areas but comm graph has {n} nodes")
        if tau is None:
            tau = TimeConstants.ones(n, m_c)
        if tau.tau_g.shape != (n,) or tau.tau_d.shape != (n,) or tau.tau_lambda.shape != (n,):
            raise ValueError(f"tau_g, tau_d, tau_lambda must have shape ({n},)")
        if tau.tau_v.shape != (m_c,):
            raise ValueError(f"tau_v must have shape ({m_c},), got {tau.tau_v.shape}")
        self.welfare = welfare
        self.comm = comm
        self.tau = tau
        self._dc = comm.incidence()
        self._dc_t = self._dc.T.copy()
        self._inv_g = 1.0 / tau.tau_g
        self._inv_d = 1.0 / tau.tau_d
        self._inv_v = 1.0 / tau.tau_v
        self._inv_l = 1.0 / tau.tau_lambda
        self._tau_flat = np.concatenate((tau.tau_g, tau.tau_d, tau.tau_v, tau.tau_lambda))

    @property
    def n(self) -> int:
        return self.comm.n

    @property
    def m_c(self) -> int:
        return self.comm.m

    @property
    def state_size(self) -> int:
        return 3 * self.n + self.m_c

    def with_welfare(self, welfare) -> "GradientController":
        return GradientController(welfare, self.comm, self.tau)

    def _slices(self, z: np.ndarray):
        n, m_c = self.n, self.m_c
        return z[:n], z[n:2 * n], z[2 * n:2 * n + m_c], z[2 * n + m_c:]

    def rhs(self, z: np.ndarray, wg: np.ndarray, wd: np.ndarray) -> np.ndarray:
        """Controller vector field in co-energy variables.

        Under the closed-loop interconnection wg = -omega, wd = omega.
        """
        ug, ud, v, lam = self._slices(z)
        w = self.welfare
        dug = self._inv_g * (lam - w.cost_gradient(ug) + wg)
        dud = self._inv_d * (w.utility_gradient(ud) - lam + wd)
        dv = -self._inv_v * (self._dc_t @ lam)
        dlam = self._inv_l * (self._dc @ v - ug + ud)
        return np.concatenate((dug, dud, dv, dlam))

    def output(self, z: np.ndarray):
        """Port output: the (u_g, u_d) slice of the state, unchanged."""
        n = self.n
        return z[:n], z[n:2 * n]

    def hamiltonian(self, z: np.ndarray) -> float:
        """Storage 1/2 x.T tau^-1 x = 1/2 z.T tau z in co-energy variables."""
        return 0.5 * float(z @ (self._tau_flat * z))

    def structure_matrix(self) -> np.ndarray:
        """Skew interconnection of the controller's port-Hamiltonian form."""
        n, m_c = self.n, self.m_c
        size = 3 * n + m_c
        j = np.zeros((size, size))
        eye = np.eye(n)
        lam0 = 2 * n + m_c
        j[:n, lam0:] = eye
        j[n:2 * n, lam0:] = -eye
        j[2 * n:lam0, lam0:] = -self._dc_t
        j[lam0:, :n] = -eye
        j[lam0:, n:2 * n] = eye
        j[lam0:, 2 * n:lam0] = self._dc
        return j

    def equilibrium_state(self, dispatch: Dispatch) -> np.ndarray:
        """Stationary controller state for a welfare optimum.

        v is non-unique on cyclic comm graphs; the minimum-norm flow
        solving D_c v = u_g - u_d is the deterministic representative.
        """
        v = min_norm_flow(self.comm, dispatch.ug - dispatch.ud)
        return np.concatenate((dispatch.ug, dispatch.ud, v, dispatch.lam))

    def pack(self, state: GradientControllerState) -> np.ndarray:
        n, m_c = self.n, self.m_c
        if state.ug.shape != (n,) or state.ud.shape != (n,) or state.lam.shape != (n,):
            raise ValueError(f"ug, ud, lam must have shape ({n},)")
        if state.v.shape != (m_c,):
            raise ValueError(f"v must have shape ({m_c},), got {state.v.shape}")
        return np.concatenate((state.ug, state.ud, state.v, state.lam))

    def unpack(self, vec: np.ndarray) -> GradientControllerState:
        ug, ud, v, lam = self._slices(np.asarray(vec, dtype=float))
        return GradientControllerState(ug.copy(), ud.copy(), v.copy(), lam.copy())

    def state_labels(self):
        labels = [f"ug_{i + 1}" for i in range(self.n)]
        labels += [f"ud_{i + 1}" for i in range(self.n)]
        labels += [f"v_{k + 1}" for k in range(self.m_c)]
        labels += [f"lam_{i + 1}" for i in range(self.n)]
        return labels

    def prices(self, vec: np.ndarray) -> np.ndarray:
        return vec[2 * self.n + self.m_c:]

    def dispatch_of(self, vec: np.ndarray):
        return self.output(vec)

    def shifted_storage(self, vec: np.ndarray, vec_bar: np.ndarray) -> float:
        """Shifted controller energy 1/2 (z - z_bar).T tau (z - z_bar)."""
        d = vec - vec_bar
        return 0.5 * float(d @ (self._tau_flat * d))

    def dissipation_rate(self, vec: np.ndarray, vec_bar: np.ndarray) -> float:
        """Controller part of the Lyapunov dissipation:

        -(z - z_bar).T (grad R(z) - grad R(z_bar)) restricted to its
        support, i.e. the monotone gap of the marginal cost/utility maps.
        Nonpositive for convex cost / concave utility.
        """
        n = self.n
        w = self.welfare
        dug = vec[:n] - vec_bar[:n]
        dud = vec[n:2 * n] - vec_bar[n:2 * n]
        gap_g = w.cost_gradient(vec[:n]) - w.cost_gradient(vec_bar[:n])
        gap_d = -w.utility_gradient(vec[n:2 * n]) + w.utility_gradient(vec_bar[n:2 * n])
        return -float(dug @ gap_g) - float(dud @ gap_d)
