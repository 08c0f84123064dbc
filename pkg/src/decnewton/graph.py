"""Random connected topologies, Metropolis mixing matrices, multi-step consensus.

A topology is an undirected connected graph on ``n`` nodes with a target
edge count of ``round(tau * n * (n - 1) / 2)``. Its mixing matrix ``W`` is
built with the Metropolis-Hastings rule, which is symmetric, doubly
stochastic, and supported exactly on the graph (plus self-loops). The key
spectral quantity is ``sigma``, the second largest singular value of ``W``,
equivalently ``||W - W_inf||`` where ``W_inf = (1/n) 11^T`` is the averaging
projector. Applying ``W^m`` blockwise contracts the disagreement
``||x - W_inf x||`` by ``sigma**m`` per call while leaving the block average
unchanged.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Topology",
    "MixingMatrix",
    "generate_topology",
    "metropolis_weights",
    "second_singular_value",
    "consensus_apply",
    "save_matrix",
    "load_matrix",
]

# Above this size a full SVD is wasteful; fall back to power iteration.
_FULL_SVD_MAX_N = 200


@dataclass(frozen=True)
class Topology:
    """Undirected connected graph with a connectivity-ratio target."""

    n: int
    edges: frozenset
    tau: float

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        return A

    def is_connected(self) -> bool:
        adj = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n


@dataclass
class MixingMatrix:
    """Doubly stochastic gossip matrix with its second singular value.

    ``power(m)`` caches ``W**m`` so per-iteration multi-step consensus does
    not redo the matrix power.
    """

    W: np.ndarray
    sigma: float
    _powers: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.W.shape[0]

    def power(self, m: int) -> np.ndarray:
        if m == 1:
            return self.W
        P = self._powers.get(m)
        if P is None:
            P = np.linalg.matrix_power(self.W, m)
            self._powers[m] = P
        return P


def generate_topology(n: int, tau: float, seed: int) -> Topology:
    """Sample a connected graph with round(tau*n*(n-1)/2) edges.

    A uniformly random spanning tree (Pruefer decoding) guarantees
    connectivity; the remaining edges are drawn uniformly without
    replacement from the non-tree pairs. Deterministic for a fixed seed.
    """
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got n={n}")
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    target = int(round(tau * n * (n - 1) / 2))
    if target < n - 1:
        raise ValueError(
            f"tau={tau} yields {target} edges, below the {n - 1} needed for connectivity"
        )
    rng = np.random.default_rng(seed)
    tree = _random_spanning_tree(n, rng)
    edges = set(tree)
    extra = target - len(edges)
    if extra > 0:
        pool = [
            (i, j)
            for i in range(n)
            for j in range(i + 1, n)
            if (i, j) not in edges
        ]
        picks = rng.choice(len(pool), size=extra, replace=False)
        for idx in sorted(picks):
            edges.add(pool[idx])
    return Topology(n=n, edges=frozenset(edges), tau=tau)


def _random_spanning_tree(n: int, rng: np.random.Generator) -> list:
    """Uniform random labeled tree via a random Pruefer sequence."""
    if n == 2:
        return [(0, 1)]
    seq = rng.integers(0, n, size=n - 2)
    degree = np.ones(n, dtype=int)
    for v in seq:
        degree[v] += 1
    leaves = [i for i in range(n) if degree[i] == 1]
    heapq.heapify(leaves)
    edges = []
    for v in seq:
        leaf = heapq.heappop(leaves)
        edges.append((min(leaf, int(v)), max(leaf, int(v))))
        degree[v] -= 1
        if degree[v] == 1:
            heapq.heappush(leaves, int(v))
    u = heapq.heappop(leaves)
    w = heapq.heappop(leaves)
    edges.append((min(u, w), max(u, w)))
    return edges


def metropolis_weights(topology: Topology) -> MixingMatrix:
    """Metropolis-Hastings weights: w_ij = 1/(1+max(deg_i, deg_j)) on edges.

    The diagonal absorbs the slack so every row sums to one; the result is
    non-negative, symmetric, doubly stochastic, and supported exactly on the
    graph plus self-loops.
    """
    if not topology.is_connected():
        raise ValueError("topology must be connected")
    n = topology.n
    deg = topology.degrees()
    W = np.zeros((n, n))
    for i, j in topology.edges:
        w = 1.0 / (1.0 + max(deg[i], deg[j]))
        W[i, j] = w
        W[j, i] = w
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return MixingMatrix(W=W, sigma=second_singular_value(W))


def second_singular_value(W) -> float:
    """Largest singular value of W - (1/n) 11^T.

    Accepts a raw matrix or a MixingMatrix. Uses a full SVD up to
    200x200 and power iteration beyond.
    """
    A = W.W if isinstance(W, MixingMatrix) else np.asarray(W, dtype=float)
    n = A.shape[0]
    B = A - np.full((n, n), 1.0 / n)
    if n <= _FULL_SVD_MAX_N:
        return float(np.linalg.svd(B, compute_uv=False)[0])
    return _power_iteration_norm(B)


def _power_iteration_norm(B: np.ndarray, iters: int = 500, tol: float = 1e-14) -> float:
    # B is symmetric here, so the spectral norm is the dominant |eigenvalue|
    # of B @ B; iterate on the square to dodge +/-sigma oscillation.
    n = B.shape[0]
    rng = np.random.default_rng(0)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    S = B @ B
    prev = 0.0
    for _ in range(iters):
        w = S @ v
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
        if abs(lam - prev) <= tol * max(lam, 1.0):
            break
        prev = lam
    return float(np.sqrt(lam))


def consensus_apply(W: MixingMatrix, m: int, blocks) -> np.ndarray:
    """Apply W^m blockwise to per-node blocks stacked on axis 0.

    The block average is restored exactly after the multiply (doubly
    stochastic matrices preserve it in exact arithmetic; the correction
    removes roundoff drift so tracking identities hold to machine
    precision over long runs).
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if isinstance(blocks, (list, tuple)):
        shapes = {np.shape(b) for b in blocks}
        if len(shapes) != 1:
            raise ValueError(f"per-node blocks must share one shape, got {sorted(shapes)}")
        blocks = np.stack([np.asarray(b, dtype=float) for b in blocks])
    else:
        blocks = np.asarray(blocks, dtype=float)
    if blocks.shape[0] != W.n:
        raise ValueError(f"expected {W.n} node blocks, got {blocks.shape[0]}")
    P = W.power(m)
    out = np.tensordot(P, blocks, axes=(1, 0))
    out += blocks.mean(axis=0) - out.mean(axis=0)
    return out


def save_matrix(path, M: np.ndarray) -> None:
    """Plain-text dump: one row per line, space-separated decimals."""
    np.savetxt(path, np.atleast_2d(np.asarray(M, dtype=float)), fmt="%.17g")


def load_matrix(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, dtype=float))
