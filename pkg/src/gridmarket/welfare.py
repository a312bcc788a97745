"""Cost/utility models, the social-welfare problem and its KKT machinery.

The market side of the simulation maximizes the social welfare
U(u_d) - C(u_g) (consumer utility minus generation cost) subject to
total supply matching total demand.  With a connected communication
graph (incidence D_c) the balance constraint is written as
D_c v - u_g + u_d = 0 for some edge variable v, which makes the problem
distributable.  The first-order optimality conditions are

    grad C(u_g) - lam        = 0
    -grad U(u_d) + lam       = 0
    D_c.T lam                = 0
    D_c v - u_g + u_d        = 0,

so at an optimum every area sees the same price: marginal cost equals
marginal utility equals the common price.

Two welfare models are provided.  ``QuadraticWelfare`` (SPD matrices
Q_g, Q_d with linear terms c, b) admits closed forms for the common
price and the optimal dispatch.  ``ConvexWelfare`` carries user-supplied
gradients for general strictly convex cost / strictly concave utility;
the gradient-based controller accepts it, and a brute-force
projected-gradient solver provides optima where no closed form exists.
That solver is deliberately independent of the closed forms so the two
can cross-check each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .graph import NetworkGraph

__all__ = [
    "WelfareError",
    "QuadraticWelfare",
    "ConvexWelfare",
    "quartic_welfare",
    "Dispatch",
    "lambda_star",
    "optimal_dispatch",
    "kkt_residual",
    "consensus_projection",
    "price_disagreement",
    "projected_gradient_dispatch",
]


class WelfareError(ValueError):
    """A welfare model violates an invariant, or a solve failed."""


def _check_spd(name: str, q: np.ndarray, n: int) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (n, n):
        raise WelfareError(f"{name} must have shape ({n}, {n}), got {q.shape}")
    if np.max(np.abs(q - q.T)) > 1e-12 * max(1.0, np.max(np.abs(q))):
        raise WelfareError(f"{name} must be symmetric")
    smallest = float(np.linalg.eigvalsh(q)[0])
    if smallest <= 0.0:
        raise WelfareError(f"{name} must be positive definite (smallest eigenvalue {smallest:g})")
    return q


@dataclass(frozen=True)
class QuadraticWelfare:
    """Quadratic cost and utility:

    C(u_g) = 1/2 u_g.T Q_g u_g + c.T u_g
    U(u_d) = -1/2 u_d.T Q_d u_d + b.T u_d

    with Q_g, Q_d symmetric positive definite.  Full matrices are
    supported; diagonal matrices correspond to decomposed per-area
    costs (each area needs only its own coefficients).
    """

    qg: np.ndarray
    qd: np.ndarray
    c: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        n = c.shape[0] if c.ndim == 1 else 0
        b = np.asarray(self.b, dtype=float)
        if c.shape != (n,) or b.shape != (n,) or n == 0:
            raise WelfareError("c and b must be vectors of equal length")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "qg", _check_spd("qg", self.qg, n))
        object.__setattr__(self, "qd", _check_spd("qd", self.qd, n))

    @classmethod
    def diagonal(cls, qg_diag, qd_diag, c, b) -> "QuadraticWelfare":
        """Build from per-area coefficients (diagonal Q matrices)."""
        return cls(np.diag(np.asarray(qg_diag, dtype=float)),
                   np.diag(np.asarray(qd_diag, dtype=float)), c, b)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def cost(self, u_g: np.ndarray) -> float:
        u_g = np.asarray(u_g, dtype=float)
        return 0.5 * float(u_g @ (self.qg @ u_g)) + float(self.c @ u_g)

    def utility(self, u_d: np.ndarray) -> float:
        u_d = np.asarray(u_d, dtype=float)
        return -0.5 * float(u_d @ (self.qd @ u_d)) + float(self.b @ u_d)

    def cost_gradient(self, u_g: np.ndarray) -> np.ndarray:
        return self.qg @ u_g + self.c

    def utility_gradient(self, u_d: np.ndarray) -> np.ndarray:
        return -(self.qd @ u_d) + self.b


@dataclass(frozen=True)
class ConvexWelfare:
    """General convex welfare given through its gradients.

    ``cost_gradient`` must be the gradient of a strictly convex C and
    ``utility_gradient`` of a strictly concave U; monotonicity is
    spot-checked on a fixed set of random point pairs at construction
    (a cheap sanity net, not a proof).  Value functions are optional and
    only needed for reporting and for the brute-force optimizer; the
    controller dynamics use gradients exclusively, so no numerical
    differentiation ever enters the vector field.
    """

    n: int
    cost_gradient: Callable[[np.ndarray], np.ndarray]
    utility_gradient: Callable[[np.ndarray], np.ndarray]
    cost: Optional[Callable[[np.ndarray], float]] = None
    utility: Optional[Callable[[np.ndarray], float]] = None

    def __post_init__(self):
        if self.n < 1:
            raise WelfareError("n must be positive")
        rng = np.random.RandomState(20240917)
        for _ in range(8):
            z1 = rng.uniform(-3.0, 3.0, self.n)
            z2 = rng.uniform(-3.0, 3.0, self.n)
            dz = z1 - z2
            if float(dz @ (self.cost_gradient(z1) - self.cost_gradient(z2))) < -1e-10:
                raise WelfareError("cost_gradient is not monotone (cost not convex?)")
            if float(dz @ (self.utility_gradient(z1) - self.utility_gradient(z2))) > 1e-10:
                raise WelfareError("utility_gradient is not anti-monotone (utility not concave?)")


def quartic_welfare(qg_diag, qd_diag, c, b, quartic=1.0) -> ConvexWelfare:
    """Built-in non-quadratic family: per-area cost with a quartic term.

    C_i(u) = 1/2 qg_i u^2 + 1/4 a_i u^4 + c_i u  (strictly convex, smooth)
    U_i(u) = -1/2 qd_i u^2 + b_i u               (quadratic concave)

    ``quartic`` is a scalar or per-area vector of nonnegative quartic
    coefficients a_i.  Used to exercise the gradient controller beyond
    the quadratic case.
    """
    qg = np.asarray(qg_diag, dtype=float)
    qd = np.asarray(qd_diag, dtype=float)
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float)
    n = qg.shape[0]
    a = np.broadcast_to(np.asarray(quartic, dtype=float), (n,)).copy()
    if any(arr.shape != (n,) for arr in (qd, c, b)):
        raise WelfareError("quartic family coefficient vectors must share one length")
    if not (np.all(qg > 0) and np.all(qd > 0) and np.all(a >= 0)):
        raise WelfareError("quartic family needs qg, qd > 0 and quartic >= 0")
    return ConvexWelfare(
        n=n,
        cost_gradient=lambda u: qg * u + a * u ** 3 + c,
        utility_gradient=lambda u: -(qd * u) + b,
        cost=lambda u: float(np.sum(0.5 * qg * u ** 2 + 0.25 * a * u ** 4 + c * u)),
        utility=lambda u: float(np.sum(-0.5 * qd * u ** 2 + b * u)),
    )


class Dispatch(NamedTuple):
    """A production/demand/price triple; ``lam`` is the per-area price vector."""

    ug: np.ndarray
    ud: np.ndarray
    lam: np.ndarray

    @property
    def price(self) -> float:
        """Common price (mean of the per-area prices)."""
        return float(np.mean(self.lam))


def lambda_star(w: QuadraticWelfare) -> float:
    """Closed-form common price for quadratic welfare:

    lambda* = 1.T (Qg^-1 c + Qd^-1 b) / (1.T (Qg^-1 + Qd^-1) 1).

    The denominator is positive because both inverses are positive
    definite.
    """
    qg_inv = np.linalg.inv(w.qg)
    qd_inv = np.linalg.inv(w.qd)
    ones = np.ones(w.n)
    num = float(ones @ (qg_inv @ w.c + qd_inv @ w.b))
    den = float(ones @ ((qg_inv + qd_inv) @ ones))
    return num / den


def optimal_dispatch(w: QuadraticWelfare) -> Dispatch:
    """Closed-form welfare optimum: marginal cost = marginal utility = lambda*.

    u_g = Qg^-1 (lam - c), u_d = Qd^-1 (b - lam) with lam = lambda* ones;
    total supply equals total demand by construction of lambda*.
    """
    lam = lambda_star(w) * np.ones(w.n)
    ug = np.linalg.solve(w.qg, lam - w.c)
    ud = np.linalg.solve(w.qd, w.b - lam)
    return Dispatch(ug, ud, lam)


def kkt_residual(w, comm: NetworkGraph, ug: np.ndarray, ud: np.ndarray,
                 v: np.ndarray, lam: np.ndarray) -> float:
    """Max-norm of the stacked first-order optimality residuals.

    Zero exactly at the welfare optima; for quadratic welfare each block
    is affine, so the residual grows linearly under perturbations.
    """
    ug = np.asarray(ug, dtype=float)
    ud = np.asarray(ud, dtype=float)
    v = np.asarray(v, dtype=float)
    lam = np.asarray(lam, dtype=float)
    n, mc = comm.n, comm.m
    if ug.shape != (n,) or ud.shape != (n,) or lam.shape != (n,):
        raise ValueError(f"ug, ud, lam must have shape ({n},)")
    if v.shape != (mc,):
        raise ValueError(f"v must have shape ({mc},), got {v.shape}")
    dc = comm.incidence()
    r = np.concatenate((
        w.cost_gradient(ug) - lam,
        -w.utility_gradient(ud) + lam,
        dc.T @ lam,
        dc @ v - ug + ud,
    ))
    return float(np.max(np.abs(r)))


def consensus_projection(lam: np.ndarray) -> np.ndarray:
    """Projection of a price vector onto the consensus subspace span(1).

    For any connected communication graph the third KKT condition
    D_c.T lam = 0 forces lam into span(1), so the distance to this
    projection is the natural price-disagreement monitor.
    """
    lam = np.asarray(lam, dtype=float)
    return np.full_like(lam, np.mean(lam))


def price_disagreement(lam: np.ndarray) -> float:
    """Max-norm distance of the prices from consensus."""
    lam = np.asarray(lam, dtype=float)
    return float(np.max(np.abs(lam - consensus_projection(lam))))


def projected_gradient_dispatch(w, tol: float = 1e-7, max_iter: int = 50000,
                                x0: Optional[np.ndarray] = None) -> Dispatch:
    """Brute-force welfare optimizer: projected gradient with backtracking.

    Minimizes C(u_g) - U(u_d) over the balance subspace
    {1.T u_g = 1.T u_d} by descending the gradient projected onto the
    subspace, with Armijo backtracking on the objective value.  Requires
    the welfare's value functions (gradients alone cannot drive the line
    search).  Entirely independent of the closed forms in
    ``optimal_dispatch``, so it serves as their oracle; it is also the
    equilibrium solver for non-quadratic welfare.

    Iterations stop when the projected gradient drops below ``tol`` in
    max-norm or when the objective hits its floating-point floor (no
    step achieves a measurable decrease), whichever comes first; in the
    latter case the gradient is typically ~1e-8 for O(1)-scaled
    problems, and anything above 1e-6 raises.  Returns the dispatch and
    the consensus price vector recovered as the mean marginal cost at
    the optimum.
    """
    if getattr(w, "cost", None) is None or getattr(w, "utility", None) is None:
        raise WelfareError("projected-gradient oracle needs cost/utility value functions")
    n = w.n
    # Balance constraint a.T x = 0 with x = (u_g, u_d), a = (1, ..., 1, -1, ..., -1).
    a = np.concatenate((np.ones(n), -np.ones(n)))
    a_norm2 = 2.0 * n

    def project(vec):
        return vec - a * (float(a @ vec) / a_norm2)

    def value(x):
        return w.cost(x[:n]) - w.utility(x[n:])

    def gradient(x):
        return np.concatenate((w.cost_gradient(x[:n]), -w.utility_gradient(x[n:])))

    x = project(np.zeros(2 * n) if x0 is None else np.asarray(x0, dtype=float))
    fx = value(x)
    step = 1.0
    converged = False
    for _ in range(max_iter):
        g = project(gradient(x))
        gnorm2 = float(g @ g)
        if float(np.max(np.abs(g))) < tol:
            converged = True
            break
        step = min(step * 2.0, 1e6)  # allow recovery after conservative steps
        while step > 1e-16:
            x_new = x - step * g
            f_new = value(x_new)
            if f_new <= fx - 1e-4 * step * gnorm2:
                break
            step *= 0.5
        else:
            break  # objective at its floating-point floor
        x, fx = x_new, f_new
    final_gap = float(np.max(np.abs(project(gradient(x)))))
    if not converged and final_gap > 1e-6:
        raise WelfareError(
            f"projected gradient stalled with gradient max-norm {final_gap:.3e}"
        )
    ug, ud = x[:n], x[n:]
    lam = np.full(n, float(np.mean(w.cost_gradient(ug))))
    return Dispatch(ug, ud, lam)
