"""Supergraphs, random weight-matrix processes and the contraction factor mu_bar.

A :class:`WeightProcess` describes i.i.d. symmetric stochastic matrices W(k)
obtained from a supergraph whose links go online independently with a fixed
probability.  Samples are produced in batches so that Monte Carlo checks and
multi-run simulations can be vectorized over a leading axis.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Sequence

import numpy as np

from .rng import Stream, stream

#: default number of Monte Carlo draws used to estimate E[W^2]
MU_SAMPLES = 100_000

_ROW_SUM_TOL = 1e-12


class Scheme(str, Enum):
    UNIFORM = "uniform"
    METROPOLIS = "metropolis"
    DETERMINISTIC = "deterministic"


class WeightFloorError(ValueError):
    """A sampled weight violates the configured floor ``w_floor``."""


@dataclass(frozen=True, eq=False)
class Supergraph:
    """Undirected graph of all realizable links.

    Edges are stored as sorted pairs ``(i, j)`` with ``i < j`` in
    lexicographic order; the order fixes the column layout of every per-edge
    array produced by :class:`WeightProcess`.
    """

    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    positions: np.ndarray | None = None

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be positive")
        seen = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise ValueError(f"edge {(i, j)} has an endpoint outside [0, {self.n_nodes})")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
        object.__setattr__(self, "edges", tuple(sorted(seen)))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def edge_array(self) -> np.ndarray:
        """Edges as an ``(E, 2)`` integer array."""
        return np.array(self.edges, dtype=np.intp).reshape(-1, 2)

    @cached_property
    def incidence(self) -> np.ndarray:
        """Unsigned ``(E, N)`` node-edge incidence matrix."""
        inc = np.zeros((self.n_edges, self.n_nodes))
        rows = np.arange(self.n_edges)
        inc[rows, self.edge_array[:, 0]] = 1.0
        inc[rows, self.edge_array[:, 1]] = 1.0
        return inc

    def degrees(self) -> np.ndarray:
        return self.incidence.sum(axis=0).astype(int)

    def laplacian(self) -> np.ndarray:
        """Unweighted graph Laplacian."""
        lap = np.diag(self.degrees().astype(float))
        i, j = self.edge_array.T
        lap[i, j] = -1.0
        lap[j, i] = -1.0
        return lap

    def to_json(self) -> str:
        pos = None if self.positions is None else np.asarray(self.positions).tolist()
        return json.dumps({"n": self.n_nodes, "edges": [list(e) for e in self.edges], "positions": pos})

    @classmethod
    def from_json(cls, text: str) -> Supergraph:
        data = json.loads(text)
        pos = data.get("positions")
        return cls(
            n_nodes=int(data["n"]),
            edges=tuple((int(i), int(j)) for i, j in data["edges"]),
            positions=None if pos is None else np.asarray(pos, dtype=float),
        )


def build_geometric_supergraph(n: int, radius: float, seed: int) -> Supergraph:
    """Random geometric graph on the unit square.

    Node positions are i.i.d. uniform in ``[0, 1]^2``; ``{i, j}`` is an edge
    iff the Euclidean distance is strictly below ``radius``.
    """
    if n < 2:
        raise ValueError("need at least two nodes")
    if not 0 < radius <= math.sqrt(2) + 1.0:
        raise ValueError("radius must be positive")
    pos = stream(seed).random((n, 2))
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    i, j = np.nonzero(np.triu(dist < radius, k=1))
    return Supergraph(n, tuple(zip(i.tolist(), j.tolist())), positions=pos)


def is_connected(g: Supergraph) -> bool:
    """Breadth-first reachability from node 0."""
    adj: list[list[int]] = [[] for _ in range(g.n_nodes)]
    for i, j in g.edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == g.n_nodes


def laplacian_eigenvalues(g: Supergraph) -> np.ndarray:
    """Eigenvalues of the unweighted Laplacian, ascending."""
    return np.linalg.eigvalsh(g.laplacian())


def algebraic_connectivity(g: Supergraph) -> float:
    """Second smallest Laplacian eigenvalue (positive iff ``g`` is connected)."""
    return float(laplacian_eigenvalues(g)[1]) if g.n_nodes > 1 else 0.0


def second_largest_laplacian_eigenvalue(g: Supergraph) -> float:
    return float(laplacian_eigenvalues(g)[-2]) if g.n_nodes > 1 else 0.0


# ---------------------------------------------------------------------------
# weight processes


def uniform_static_matrix(g: Supergraph) -> np.ndarray:
    """W with weight 1/N on every supergraph edge and the row complement on the diagonal."""
    w = np.full(g.n_edges, 1.0 / g.n_nodes)
    return _dense(g, w[None, :])[0]


def metropolis_static_matrix(g: Supergraph) -> np.ndarray:
    return _dense(g, _metropolis_weights(g, np.ones((1, g.n_edges), dtype=bool)))[0]


def _metropolis_weights(g: Supergraph, online: np.ndarray) -> np.ndarray:
    deg = online.astype(float) @ g.incidence
    i, j = g.edge_array.T
    return np.where(online, 1.0 / (1.0 + np.maximum(deg[:, i], deg[:, j])), 0.0)


def _dense(g: Supergraph, w: np.ndarray) -> np.ndarray:
    """Dense ``(S, N, N)`` matrices from per-edge weights ``w`` of shape ``(S, E)``."""
    n_samples = w.shape[0]
    mats = np.zeros((n_samples, g.n_nodes, g.n_nodes))
    if g.n_edges:
        i, j = g.edge_array.T
        mats[:, i, j] = w
        mats[:, j, i] = w
    diag = np.arange(g.n_nodes)
    mats[:, diag, diag] = 1.0 - mats.sum(axis=2)
    return mats


@dataclass(frozen=True, eq=False)
class WeightProcess:
    """Sampler of i.i.d. random weight matrices over a supergraph.

    Parameters
    ----------
    supergraph : Supergraph
        Links that may be online.
    scheme : Scheme
        ``UNIFORM``: online links get weight 1/N.  ``METROPOLIS``: online
        links get ``1/(1 + max(deg_i, deg_j))`` with degrees taken in the
        realized graph of the round.  ``DETERMINISTIC``: every sample is the
        fixed ``matrix`` (uniform 1/N weights on all supergraph edges when no
        matrix is given).
    edge_online_prob : float
        Independent per-round probability that a link is online.
    w_floor : float, optional
        Lower bound on nonzero weights.  Defaults to the smallest legitimate
        weight of the scheme minus 1e-12.
    matrix : ndarray, optional
        Fixed matrix for the deterministic scheme.
    """

    supergraph: Supergraph
    scheme: Scheme = Scheme.UNIFORM
    edge_online_prob: float = 1.0
    w_floor: float | None = None
    matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not 0.0 < self.edge_online_prob <= 1.0:
            raise ValueError("edge_online_prob must lie in (0, 1]")
        n = self.supergraph.n_nodes
        if self.scheme is Scheme.DETERMINISTIC:
            mat = uniform_static_matrix(self.supergraph) if self.matrix is None else np.asarray(self.matrix, float)
            if mat.shape != (n, n):
                raise ValueError(f"matrix must be {n}x{n}")
            object.__setattr__(self, "matrix", mat)
            object.__setattr__(self, "edge_online_prob", 1.0)
        elif self.matrix is not None:
            raise ValueError("a fixed matrix only makes sense with the deterministic scheme")
        if self.w_floor is None:
            if self.scheme is Scheme.UNIFORM:
                floor = 1.0 / n - 1e-12
            elif self.scheme is Scheme.METROPOLIS:
                floor = 1.0 / (n + 1) - 1e-12
            else:
                positive = self.matrix[self.matrix > 0]
                floor = float(positive.min()) - 1e-12
            object.__setattr__(self, "w_floor", floor)
        if self.w_floor <= 0:
            raise ValueError("w_floor must be positive")
        if self.scheme is Scheme.DETERMINISTIC:
            report = validate_weight_matrix(self.matrix, self.w_floor)
            if report is not None:
                raise WeightFloorError(str(report))

    @property
    def n_nodes(self) -> int:
        return self.supergraph.n_nodes

    @property
    def is_static(self) -> bool:
        return self.scheme is Scheme.DETERMINISTIC or self.edge_online_prob == 1.0

    def edge_weights(self, online: np.ndarray) -> np.ndarray:
        """Per-edge weights for boolean online masks of shape ``(S, E)``."""
        if self.scheme is Scheme.UNIFORM:
            return np.where(online, 1.0 / self.n_nodes, 0.0)
        if self.scheme is Scheme.METROPOLIS:
            return _metropolis_weights(self.supergraph, online)
        raise TypeError("deterministic processes have no per-edge representation")

    def matrices_from_uniforms(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms of shape ``(S, E)`` to ``(S, N, N)`` weight matrices.

        Link ``e`` is online in sample ``s`` iff ``u[s, e] < edge_online_prob``.
        """
        u = np.asarray(u)
        if self.scheme is Scheme.DETERMINISTIC:
            return np.broadcast_to(self.matrix, (u.shape[0],) + self.matrix.shape).copy()
        w = self.edge_weights(u < self.edge_online_prob)
        mats = _dense(self.supergraph, w)
        self._check_floor(w, mats)
        return mats

    def sample(self, rng: Stream, size: int) -> np.ndarray:
        """Draw ``size`` i.i.d. matrices, shape ``(size, N, N)``."""
        return self.matrices_from_uniforms(rng.random((size, self.supergraph.n_edges)))

    def _check_floor(self, w: np.ndarray, mats: np.ndarray) -> None:
        floor = self.w_floor
        diag = np.diagonal(mats, axis1=1, axis2=2)
        if diag.min(initial=np.inf) < floor:
            s, i = np.unravel_index(np.argmin(diag), diag.shape)
            raise WeightFloorError(f"diagonal W[{i},{i}]={diag[s, i]:.6g} below w_floor={floor:.6g}")
        bad = (w > 0) & (w < floor)
        if bad.any():
            s, e = np.argwhere(bad)[0]
            i, j = self.supergraph.edges[e]
            raise WeightFloorError(f"off-diagonal W[{i},{j}]={w[s, e]:.6g} inside (0, {floor:.6g})")

    def to_dict(self) -> dict:
        out = {
            "scheme": self.scheme.value,
            "edge_online_prob": self.edge_online_prob,
            "w_floor": self.w_floor,
        }
        if self.scheme is Scheme.DETERMINISTIC:
            out["matrix"] = self.matrix.tolist()
        return out


def sample_weight_matrix(p: WeightProcess, rng: Stream) -> np.ndarray:
    """One draw W(k) of the process."""
    return p.sample(rng, 1)[0]


def mu_bar(p: WeightProcess, n_samples: int = MU_SAMPLES, rng: Stream | None = None, *, chunk: int = 10_000) -> float:
    """Estimate ``sqrt(||E[W^2] - J||)``.

    For the deterministic scheme the expectation is exact and the result
    equals ``||W - J||``.  Otherwise E[W^T W] is a Monte Carlo mean over
    ``n_samples`` draws, accumulated chunk by chunk in a fixed order.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    n = p.n_nodes
    if p.scheme is Scheme.DETERMINISTIC:
        second = p.matrix.T @ p.matrix
    else:
        if rng is None:
            raise ValueError("a random stream is required for a random process")
        acc = np.zeros((n, n))
        left = n_samples
        while left:
            m = min(chunk, left)
            mats = p.sample(rng, m)
            acc += np.einsum("sji,sjk->ik", mats, mats)
            left -= m
        second = acc / n_samples
    return _sqrt_spectral_gap(second)


def mu_bar_exact(p: WeightProcess) -> float:
    """Closed form of mu_bar for uniform weights and independent links.

    With W = I - w * sum_e m_e L_e (L_e the edge Laplacians, m_e ~ Bernoulli(q)):
    E[W^2] = I - 2 q w L + w^2 (q^2 L^2 + 2 q (1 - q) L).
    """
    if p.scheme is Scheme.DETERMINISTIC:
        return mu_bar(p, 1)
    if p.scheme is not Scheme.UNIFORM:
        raise ValueError("closed form only available for uniform weights")
    lap = p.supergraph.laplacian()
    q, w = p.edge_online_prob, 1.0 / p.n_nodes
    eye = np.eye(p.n_nodes)
    second = eye - 2 * q * w * lap + w**2 * (q**2 * lap @ lap + 2 * q * (1 - q) * lap)
    return _sqrt_spectral_gap(second)


def _sqrt_spectral_gap(second_moment: np.ndarray) -> float:
    n = second_moment.shape[0]
    sym = 0.5 * (second_moment + second_moment.T) - np.full((n, n), 1.0 / n)
    norm = float(np.max(np.abs(np.linalg.eigvalsh(sym))))
    return math.sqrt(norm)


@dataclass(frozen=True)
class Violation:
    kind: str
    indices: tuple[int, ...]
    value: float

    def __str__(self):
        return f"{self.kind} at {self.indices}: {self.value:.6g}"


def validate_weight_matrix(W: np.ndarray, w_floor: float) -> Violation | None:
    """Return the first violated weight-matrix invariant, or ``None``.

    Checked in order: symmetry, unit row sums, entries in [0, 1], diagonal
    at least ``w_floor``, no off-diagonal entry inside ``(0, w_floor)``.
    """
    W = np.asarray(W, dtype=float)
    asym = np.abs(W - W.T)
    if asym.max(initial=0.0) > 0.0:
        i, j = np.unravel_index(np.argmax(asym), W.shape)
        return Violation("not symmetric", (int(i), int(j)), float(asym[i, j]))
    rows = np.abs(W.sum(axis=1) - 1.0)
    if rows.max(initial=0.0) > _ROW_SUM_TOL:
        i = int(np.argmax(rows))
        return Violation("row sum differs from 1", (i,), float(W[i].sum()))
    outside = (W < 0.0) | (W > 1.0)
    if outside.any():
        i, j = np.argwhere(outside)[0]
        return Violation("entry outside [0, 1]", (int(i), int(j)), float(W[i, j]))
    diag = np.diagonal(W)
    if diag.min(initial=np.inf) < w_floor:
        i = int(np.argmin(diag))
        return Violation("diagonal below floor", (i, i), float(diag[i]))
    off = W.copy()
    np.fill_diagonal(off, 0.0)
    tiny = (off > 0.0) & (off < w_floor)
    if tiny.any():
        i, j = np.argwhere(tiny)[0]
        return Violation("off-diagonal inside (0, w_floor)", (int(i), int(j)), float(W[i, j]))
    return None


def geometric_network(n: int, radius: float, seed: int, max_tries: int = 1000) -> Supergraph:
    """First connected geometric supergraph among seeds ``seed, seed+1, ...``."""
    for offset in range(max_tries):
        g = build_geometric_supergraph(n, radius, seed + offset)
        if is_connected(g):
            return g
    raise RuntimeError(f"no connected graph found in {max_tries} tries")


def supergraph_from_edges(n: int, edges: Sequence[Sequence[int]]) -> Supergraph:
    return Supergraph(n, tuple((int(i), int(j)) for i, j in edges))
