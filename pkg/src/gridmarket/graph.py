"""Connected graphs with oriented edges, incidence matrices and Laplacians.

One class serves both the physical transmission network and the controller
communication network.  Edge orientation (which end carries the '+' label)
is chosen by the caller and preserved: per-edge quantities such as angle
differences and flows are signed accordingly, while node-level results
(Laplacians, power balances) are orientation invariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["GraphError", "NetworkGraph", "ring", "path", "min_norm_flow"]


class GraphError(ValueError):
    """A graph violates a construction invariant."""


@dataclass(frozen=True)
class NetworkGraph:
    """Connected undirected graph with an arbitrary '+'/'-' label per edge.

    Attributes
    ----------
    n : int
        Node count; nodes are indexed ``0 .. n-1``.
    edges : tuple of (int, int)
        Ordered edge list; edge ``k = (i, j)`` has positive end ``i`` and
        negative end ``j``.  Self-loops are rejected; parallel edges are
        allowed.  Connectivity is checked at construction, so a valid
        instance never needs a runtime connectivity check.
    """

    n: int
    edges: tuple

    def __post_init__(self):
        try:
            edges = tuple((int(i), int(j)) for i, j in self.edges)
        except (TypeError, ValueError) as exc:
            raise GraphError(f"edges must be (node, node) pairs: {exc}") from exc
        object.__setattr__(self, "edges", edges)
        if self.n < 1:
            raise GraphError("graph needs at least one node")
        for k, (i, j) in enumerate(edges):
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise GraphError(
                    f"edge {k} = ({i}, {j}) references a node outside [0, {self.n})"
                )
            if i == j:
                raise GraphError(f"edge {k} is a self-loop at node {i}")
        if not self._connected():
            raise GraphError("graph is not connected")

    @property
    def m(self) -> int:
        """Edge count."""
        return len(self.edges)

    def _connected(self) -> bool:
        adj = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == self.n

    def incidence(self) -> np.ndarray:
        """n-by-m incidence matrix: +1 at each edge's positive end, -1 at its negative end.

        Every column sums to zero, so ``ones @ incidence() == 0``.
        """
        d = np.zeros((self.n, self.m))
        for k, (i, j) in enumerate(self.edges):
            d[i, k] = 1.0
            d[j, k] = -1.0
        return d

    def laplacian(self) -> np.ndarray:
        """Graph Laplacian ``D @ D.T``.

        Symmetric positive semidefinite; for a connected graph the kernel
        is exactly the span of the ones vector.  Independent of the edge
        orientation.
        """
        d = self.incidence()
        return d @ d.T

    def with_edge_flipped(self, k: int) -> "NetworkGraph":
        """Copy of the graph with edge ``k``'s '+'/'-' labels swapped."""
        edges = list(self.edges)
        i, j = edges[k]
        edges[k] = (j, i)
        return NetworkGraph(self.n, tuple(edges))


def ring(n: int) -> NetworkGraph:
    """Ring graph ``0-1-...-(n-1)-0`` with edges oriented along the cycle."""
    if n < 3:
        raise GraphError("a ring needs at least 3 nodes")
    return NetworkGraph(n, tuple((i, (i + 1) % n) for i in range(n)))


def path(n: int) -> NetworkGraph:
    """Path graph ``0-1-...-(n-1)`` (acyclic)."""
    return NetworkGraph(n, tuple((i, i + 1) for i in range(n - 1)))


def min_norm_flow(graph: NetworkGraph, injection: np.ndarray) -> np.ndarray:
    """Minimum-norm edge flow ``f`` with ``incidence @ f = injection``.

    The system is solvable exactly iff the injections sum to zero (the
    incidence matrix of a connected graph has range equal to the
    zero-mean subspace); otherwise the least-squares solution leaves the
    mean component of ``injection`` unmatched.  Among all exact solutions
    the returned flow has minimum Euclidean norm, which makes it a
    deterministic representative when the graph has cycles.
    """
    injection = np.asarray(injection, dtype=float)
    if injection.shape != (graph.n,):
        raise ValueError(f"injection must have shape ({graph.n},), got {injection.shape}")
    f, *_ = np.linalg.lstsq(graph.incidence(), injection, rcond=None)
    return f
