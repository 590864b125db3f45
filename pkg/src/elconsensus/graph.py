"""Leader-follower communication topology.

Builds the follower Laplacian, the leader-augmented matrix ``H = L + diag(a_i0)``
and its Kronecker expansion to 3-D agents, plus a spectral summary whose
connectivity flag is cross-checked against a breadth-first traversal.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


class TopologyError(ValueError):
    """Raised when an adjacency/leader-weight pair is not a valid undirected topology."""


class SpectralMismatch(RuntimeError):
    """Spectral and traversal connectivity disagree."""


@dataclass(frozen=True)
class NetworkTopology:
    """Undirected weighted follower graph plus leader links.

    Parameters
    ----------
    adjacency : array_like, shape (n, n)
        Symmetric nonnegative edge weights ``a_ij`` with zero diagonal.
    leader_weights : array_like, shape (n,)
        Nonnegative weights ``a_i0`` of the leader -> follower links.
    """

    adjacency: np.ndarray
    leader_weights: np.ndarray

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=float)
        lw = np.array(self.leader_weights, dtype=float).reshape(-1)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] == 0:
            raise TopologyError(f"adjacency must be a non-empty square matrix, got shape {adj.shape}")
        n = adj.shape[0]
        if lw.shape != (n,):
            raise TopologyError(f"leader_weights must have length {n}, got {lw.shape[0]}")
        if not (np.all(np.isfinite(adj)) and np.all(np.isfinite(lw))):
            raise TopologyError("weights must be finite")
        if np.any(adj < 0):
            i, j = np.argwhere(adj < 0)[0]
            raise TopologyError(f"negative edge weight a[{i}][{j}] = {adj[i, j]}")
        if np.any(lw < 0):
            i = int(np.argmax(lw < 0))
            raise TopologyError(f"negative leader weight a[{i}][0] = {lw[i]}")
        if np.any(np.diag(adj) != 0):
            i = int(np.flatnonzero(np.diag(adj))[0])
            raise TopologyError(f"self edge a[{i}][{i}] = {adj[i, i]}; diagonal must be zero")
        asym = np.argwhere(adj != adj.T)
        if asym.size:
            i, j = asym[0]
            raise TopologyError(
                f"adjacency not symmetric: a[{i}][{j}] = {adj[i, j]} but a[{j}][{i}] = {adj[j, i]}"
            )
        adj.setflags(write=False)
        lw.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "leader_weights", lw)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]


@dataclass(frozen=True)
class SpectralReport:
    eigenvalues: np.ndarray
    algebraic_connectivity: float
    min_eig_H: float
    connected: bool
    spectral_connected: bool
    zero_tol: float


def degree_matrix(topology: NetworkTopology) -> np.ndarray:
    return np.diag(topology.adjacency.sum(axis=1))


def laplacian(topology: NetworkTopology) -> np.ndarray:
    """``L = D - A``; zero row sums, symmetric, positive semidefinite."""
    adj = topology.adjacency
    lap = -adj.copy()
    # diagonal set as the row sum so that L @ 1 cancels to rounding error
    np.fill_diagonal(lap, adj.sum(axis=1))
    return lap


def augmented_matrix(topology: NetworkTopology) -> np.ndarray:
    return laplacian(topology) + np.diag(topology.leader_weights)


def kron_expand(H: np.ndarray, dim: int = 3) -> np.ndarray:
    """Expand an n x n agent matrix to ``H (x) I_dim`` acting on stacked dim-vectors."""
    H = np.asarray(H, dtype=float)
    return np.kron(H, np.eye(dim))


def is_connected(topology: NetworkTopology) -> bool:
    """Breadth-first reachability from follower 0 over edges with positive weight."""
    n = topology.n
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in topology.neighbors(i):
            if j not in seen:
                seen.add(j)
                queue.append(j)
    return len(seen) == n


def spectral_report(topology: NetworkTopology, strict: bool = True) -> SpectralReport:
    """Eigen-summary of ``L`` and ``H``.

    The traversal result is authoritative for ``connected``; with ``strict`` a
    disagreement with the ``lambda_2 > tol`` test raises :class:`SpectralMismatch`.
    """
    lap = laplacian(topology)
    eig = np.sort(np.linalg.eigvalsh(lap))
    scale = float(np.max(np.abs(lap))) if lap.size else 0.0
    tol = 1e-9 * scale if scale > 0 else 1e-12
    lam2 = float(eig[1]) if topology.n > 1 else 0.0
    spectral = topology.n == 1 or lam2 > tol
    connected = is_connected(topology)
    if strict and spectral != connected:
        raise SpectralMismatch(
            f"traversal says connected={connected} but lambda_2 = {lam2:.3e} (tol {tol:.1e})"
        )
    min_h = float(np.linalg.eigvalsh(augmented_matrix(topology))[0])
    return SpectralReport(
        eigenvalues=eig,
        algebraic_connectivity=lam2,
        min_eig_H=min_h,
        connected=connected,
        spectral_connected=spectral,
        zero_tol=tol,
    )


def path_topology(n: int, leader_weight: float = 1.0) -> NetworkTopology:
    """Unit-weight path graph 1-2-...-n with every follower linked to the leader."""
    adj = np.zeros((n, n))
    idx = np.arange(n - 1)
    adj[idx, idx + 1] = 1.0
    adj[idx + 1, idx] = 1.0
    return NetworkTopology(adj, np.full(n, float(leader_weight)))
