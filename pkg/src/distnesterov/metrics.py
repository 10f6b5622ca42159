"""Per-iteration metrics: normalized optimality gap, disagreement norms, counters."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Supergraph


@dataclass
class RunRecord:
    run_id: int
    k: int
    comm_rounds: int
    scalar_tx: int
    err_f: float
    z_norm: float
    z_norm_sq: float
    per_node_gap: np.ndarray | None = field(default=None, repr=False)
    diverged: bool = False


def transmissions(n_edges: int, payload_dim: int, rounds: int) -> int:
    # both endpoints of every supergraph link transmit, online or not
    return rounds * 2 * n_edges * payload_dim


def count_transmissions(supergraph: Supergraph, payload_dim: int, rounds: int) -> int:
    """Scalar transmissions for ``rounds`` broadcast rounds of a ``payload_dim`` vector."""
    return transmissions(supergraph.n_edges, payload_dim, rounds)


def disagreement(X: np.ndarray) -> np.ndarray:
    """Deviation of each node's row from the network average, shape preserved."""
    return X - X.mean(axis=-2, keepdims=True)


def compute_metrics(x: np.ndarray, y: np.ndarray, objs, f_star: float | None = None, f_zero: float | None = None) -> dict:
    """Metrics of stacked iterates ``x, y`` of shape ``(..., N, d)``.

    ``err_f`` is the node average of ``(f(x_i) - f*) / (f(0) - f*)``;
    ``z_norm`` is the norm of the stacked disagreements ``(y~, x~)``;
    ``per_node_gap`` holds ``(f(x_i) - f*) / N``.
    Leading batch axes are kept on every returned array.
    """
    if f_star is None:
        f_star = objs.f_star
    if f_zero is None:
        f_zero = objs.f_zero()
    n = x.shape[-2]
    gap = objs.total(x) - f_star
    denom = f_zero - f_star
    err_f = gap.mean(axis=-1) / denom if denom > 0 else np.zeros(gap.shape[:-1])
    z_sq = (disagreement(x) ** 2).sum(axis=(-2, -1)) + (disagreement(y) ** 2).sum(axis=(-2, -1))
    return {
        "err_f": err_f,
        "z_norm": np.sqrt(z_sq),
        "z_norm_sq": z_sq,
        "per_node_gap": gap / n,
    }
