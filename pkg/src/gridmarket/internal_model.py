"""Internal-model price controller: consensus dynamics on the area prices.

The controller state is the price vector lam (one price per control
area).  Its dynamics dissipate price differences through the Laplacian
of the communication graph and integrate the frequency deviations fed
back from the grid:

    d(lam)/dt = -L_c lam + Qg^-1 u_1 - Qd^-1 u_2
    y = (Qg^-1 (lam - c), Qd^-1 (b - lam))

with controller Hamiltonian 1/2 lam.T lam.  The output is the
marginal-cost / marginal-utility inversion evaluated at the current
price: generation and demand that each area would choose if lam were
the market price.  Under the power-preserving interconnection with the
grid (u = -y_grid = (-omega, omega)) the prices settle on consensus at
the welfare-optimal common price while the frequency deviation goes to
zero.

Only quadratic welfare is supported: the Q matrices appear inside the
closed-loop interconnection itself, so the design does not generalize
to other convex costs (that is the gradient controller's job).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import NetworkGraph
from .welfare import QuadraticWelfare, Dispatch

__all__ = ["InternalModelState", "InternalModelController"]


@dataclass
class InternalModelState:
    """Controller state: per-area prices."""

    lam: np.ndarray

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        if not np.all(np.isfinite(self.lam)):
            raise ValueError("lam entries must be finite")

    def copy(self) -> "InternalModelState":
        return InternalModelState(self.lam.copy())


class InternalModelController:
    """Price-consensus controller bound to a quadratic welfare and a comm graph."""

    kind = "internal-model"

    def __init__(self, welfare: QuadraticWelfare, comm: NetworkGraph):
        if not isinstance(welfare, QuadraticWelfare):
            raise TypeError(
                "internal-model controller requires quadratic welfare; "
                "use the gradient controller for general convex welfare"
            )
        if welfare.n != comm.n:
            raise ValueError(f"welfare has {welfare.n} areas but comm graph has {comm.n} nodes")
        self.welfare = welfare
        self.comm = comm
        self._qg_inv = np.linalg.inv(welfare.qg)
        self._qd_inv = np.linalg.inv(welfare.qd)
        self._laplacian = comm.laplacian()

    @property
    def n(self) -> int:
        return self.comm.n

    @property
    def state_size(self) -> int:
        return self.n

    def with_welfare(self, welfare: QuadraticWelfare) -> "InternalModelController":
        """Same comm graph, new welfare parameters (event handling)."""
        return InternalModelController(welfare, self.comm)

    def rhs(self, lam: np.ndarray, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
        """d(lam)/dt = -L_c lam + Qg^-1 u1 - Qd^-1 u2.

        Under the closed-loop interconnection u = (-omega, omega) this is
        -L_c lam - (Qg^-1 + Qd^-1) omega.
        """
        if lam.shape != (self.n,) or u1.shape != (self.n,) or u2.shape != (self.n,):
            raise ValueError(f"lam, u1, u2 must have shape ({self.n},)")
        return -(self._laplacian @ lam) + self._qg_inv @ u1 - self._qd_inv @ u2

    def output(self, lam: np.ndarray):
        """Dispatch chosen at price lam: ug = Qg^-1 (lam - c), ud = Qd^-1 (b - lam)."""
        w = self.welfare
        return self._qg_inv @ (lam - w.c), self._qd_inv @ (w.b - lam)

    def hamiltonian(self, lam: np.ndarray) -> float:
        return 0.5 * float(lam @ lam)

    def equilibrium_state(self, dispatch: Dispatch) -> np.ndarray:
        return dispatch.lam.copy()

    # State packing: the controller vector IS the price vector.
    def pack(self, state: InternalModelState) -> np.ndarray:
        return np.asarray(state.lam, dtype=float).copy()

    def unpack(self, vec: np.ndarray) -> InternalModelState:
        return InternalModelState(np.asarray(vec, dtype=float).copy())

    def state_labels(self):
        return [f"lam_{i + 1}" for i in range(self.n)]

    def prices(self, vec: np.ndarray) -> np.ndarray:
        return vec

    def dispatch_of(self, vec: np.ndarray):
        """(ug, ud) implied by the packed controller state."""
        return self.output(vec)

    def shifted_storage(self, vec: np.ndarray, vec_bar: np.ndarray) -> float:
        """Shifted controller energy 1/2 ||lam - lam_bar||^2."""
        d = vec - vec_bar
        return 0.5 * float(d @ d)

    def dissipation_rate(self, vec: np.ndarray, vec_bar: np.ndarray) -> float:
        """Controller part of the Lyapunov dissipation:

        -(lam - lam_bar).T L_c (lam - lam_bar) <= 0 — price differences
        are dissipated through the Laplacian.
        """
        d = vec - vec_bar
        return -float(d @ (self._laplacian @ d))
