"""mD-NG / mD-NC iterations, their D-NG / D-NC ancestors and the plain distributed gradient baseline.

All iterates are stacked as ``(..., N, d)`` arrays; weight matrices are
``(..., N, N)``.  Any leading axes broadcast, which is how many independent
Monte Carlo runs advance in lock step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

from .graph import MU_SAMPLES, WeightProcess, mu_bar
from .metrics import RunRecord, compute_metrics, transmissions
from .rng import MU, round_stream, stream


class Variant(str, Enum):
    MDNG = "MDNG"
    DNG = "DNG"
    MDNC = "MDNC"
    DNC = "DNC"
    SUBGRAD = "SUBGRAD"
    MDNG_FREE_C = "MDNG_FREE_C"
    MDNC_RELAXED = "MDNC_RELAXED"


GATED_C = {Variant.MDNG, Variant.DNG}
GATED_ALPHA = {Variant.MDNC, Variant.DNC}
CONSENSUS = {Variant.MDNC, Variant.DNC, Variant.MDNC_RELAXED}

#: a run is flagged divergent once err_f exceeds this multiple of its initial value
DIVERGENCE_FACTOR = 1e6


class ConfigError(ValueError):
    pass


def step_sizes(k: int, c: float) -> tuple[float, float]:
    """``(c / (k + 1), k / (k + 3))``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    return c / (k + 1), k / (k + 3)


def momentum(k: int) -> float:
    return k / (k + 3)


def tau_k(k: int, n: int, mu: float, static: bool = False) -> int:
    """Inner consensus rounds at outer iteration ``k``.

    ``ceil((3 log k + log n) / -log mu)``; the ``log n`` term is dropped for
    static networks.  Never less than one round.
    """
    if not 0.0 < mu < 1.0:
        raise ValueError(f"mu must lie in (0, 1), got {mu}")
    if k < 1:
        raise ValueError("k must be at least 1")
    num = 3.0 * math.log(k) + (0.0 if static else math.log(n))
    ratio = num / -math.log(mu)
    # absorb rounding so that exact integer ratios are not bumped up by one
    return max(1, math.ceil(ratio - 1e-9 * max(1.0, ratio)))


@dataclass(frozen=True)
class Schedule:
    """Step sizes, momentum and consensus budget of one solver variant.

    ``mu``, ``n_nodes`` and ``static`` are only read by the consensus
    variants (``tau_k``); :func:`bind_schedule` fills them from a network.
    """

    variant: Variant = Variant.MDNG
    c: float = 0.5
    alpha: float = 0.5
    p: float = 1.0
    mu: float | None = None
    n_nodes: int | None = None
    static: bool = False
    momentum: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.c <= 0 or self.alpha <= 0:
            raise ConfigError("step scales must be positive")
        if not 0.0 < self.p <= 1.0:
            raise ConfigError("p must lie in (0, 1]")

    def validate(self, lipschitz: float) -> None:
        limit = 1.0 / (2.0 * lipschitz) if lipschitz > 0 else math.inf
        if self.variant in GATED_C and self.c > limit * (1 + 1e-12):
            raise ConfigError(f"{self.variant.value} needs c <= 1/(2L) = {limit}; use MDNG_FREE_C for larger c")
        if self.variant in GATED_ALPHA and self.alpha > limit * (1 + 1e-12):
            raise ConfigError(f"{self.variant.value} needs alpha <= 1/(2L) = {limit}")

    def beta(self, k: int) -> float:
        return momentum(k) if self.momentum else 0.0

    def consensus_step(self, k: int) -> float:
        """Gradient step of outer iteration ``k`` (1-based) for the consensus variants."""
        if self.variant is Variant.MDNC_RELAXED:
            return 1.0 / k**self.p
        return self.alpha

    def rounds(self, k: int) -> int:
        """Consensus rounds of outer iteration ``k`` (1-based)."""
        if self.variant is Variant.MDNC_RELAXED:
            return k
        if self.mu is None or self.n_nodes is None:
            raise ConfigError("schedule has no mu / n_nodes; bind it to a network first")
        return tau_k(k, self.n_nodes, self.mu, self.static)


@dataclass
class SolverState:
    """Stacked iterates plus iteration and communication counters.

    ``x`` and ``y`` are ``x(k)`` and ``y(k)``; ``x_prev`` is ``x(k-1)``
    (equal to ``x`` at ``k = 0``).  ``n_edges`` is the supergraph link count
    used by the transmission counter.
    """

    x: np.ndarray
    y: np.ndarray
    x_prev: np.ndarray
    k: int = 0
    comm_rounds: int = 0
    scalar_tx: int = 0
    n_edges: int = 0

    @classmethod
    def initial(cls, x0: np.ndarray, n_edges: int = 0) -> SolverState:
        x0 = np.asarray(x0, dtype=float)
        return cls(x0.copy(), x0.copy(), x0.copy(), n_edges=n_edges)

    @classmethod
    def zeros(cls, shape: tuple[int, ...], n_edges: int = 0) -> SolverState:
        return cls.initial(np.zeros(shape), n_edges)

    @property
    def dim(self) -> int:
        return self.x.shape[-1]


def _check_dims(s: SolverState, W: np.ndarray) -> None:
    n = s.x.shape[-2]
    if W.shape[-2:] != (n, n):
        raise ValueError(f"weight matrix shape {W.shape} does not match {n} nodes")


def _advance(s: SolverState, x_new, y_new, rounds: int, payload: int) -> SolverState:
    return SolverState(
        x=x_new,
        y=y_new,
        x_prev=s.x,
        k=s.k + 1,
        comm_rounds=s.comm_rounds + rounds,
        scalar_tx=s.scalar_tx + transmissions(s.n_edges, payload, rounds),
        n_edges=s.n_edges,
    )


def mdng_step(s: SolverState, W: np.ndarray, objs, sched: Schedule) -> SolverState:
    """One mD-NG iteration: both ``y`` and the previous ``x`` travel in the same round."""
    _check_dims(s, W)
    alpha = sched.c / (s.k + 1)
    beta = sched.beta(s.k)
    x_new = W @ s.y - alpha * objs.local_grads(s.y)
    y_new = (1.0 + beta) * x_new - beta * (W @ s.x)
    return _advance(s, x_new, y_new, 1, 2 * s.dim)


def dng_step(s: SolverState, W: np.ndarray, objs, sched: Schedule) -> SolverState:
    """One D-NG iteration: only ``y`` is exchanged; momentum uses the node's own ``x``."""
    _check_dims(s, W)
    alpha = sched.c / (s.k + 1)
    beta = sched.beta(s.k)
    x_new = W @ s.y - alpha * objs.local_grads(s.y)
    y_new = (1.0 + beta) * x_new - beta * s.x
    return _advance(s, x_new, y_new, 1, s.dim)


def _consensus(Ws: Iterable[np.ndarray], chi: np.ndarray, n: int) -> np.ndarray:
    for W in Ws:
        if W.shape[-2:] != (n, n):
            raise ValueError(f"weight matrix shape {W.shape} does not match {n} nodes")
        chi = W @ chi
    return chi


def mdnc_outer_step(s: SolverState, Ws: Sequence[np.ndarray], objs, sched: Schedule) -> SolverState:
    """One outer mD-NC iteration.

    The gradient point ``x_a = y - alpha grad F(y)`` and the previous ``x``
    are stacked into one ``2d`` payload and averaged over the ``len(Ws)``
    rounds, applied in order.  ``len(Ws)`` must match ``sched.rounds``.
    """
    k = s.k + 1
    expected = sched.rounds(k)
    if len(Ws) != expected:
        raise ValueError(f"outer iteration {k} needs {expected} consensus rounds, got {len(Ws)}")
    d = s.dim
    n = s.x.shape[-2]
    x_a = s.y - sched.consensus_step(k) * objs.local_grads(s.y)
    chi = _consensus(Ws, np.concatenate([x_a, s.x], axis=-1), n)
    x_new, x_b = chi[..., :d], chi[..., d:]
    beta = sched.beta(s.k)
    y_new = (1.0 + beta) * x_new - beta * x_b
    return _advance(s, x_new, y_new, expected, 2 * d)


def dnc_outer_step(s: SolverState, Ws_pair: tuple[Sequence[np.ndarray], Sequence[np.ndarray]], objs, sched: Schedule) -> SolverState:
    """One outer D-NC iteration: two separate consensus phases on ``d``-vectors.

    The first phase averages the gradient point into ``x(k)``; the second
    averages the momentum combination into ``y(k)``.
    """
    Ws_x, Ws_y = Ws_pair
    k = s.k + 1
    expected = sched.rounds(k)
    if len(Ws_x) != expected or len(Ws_y) != expected:
        raise ValueError(f"outer iteration {k} needs {expected} rounds per phase")
    n = s.x.shape[-2]
    x_new = _consensus(Ws_x, s.y - sched.consensus_step(k) * objs.local_grads(s.y), n)
    beta = sched.beta(s.k)
    y_new = _consensus(Ws_y, (1.0 + beta) * x_new - beta * s.x, n)
    return _advance(s, x_new, y_new, 2 * expected, s.dim)


def subgradient_step(s: SolverState, W: np.ndarray, objs, k: int, step: float | None = None) -> SolverState:
    """Standard distributed gradient: ``x <- W x - step grad F(x)``, default step ``1/sqrt(k)``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    _check_dims(s, W)
    if step is None:
        step = 1.0 / math.sqrt(k)
    x_new = W @ s.x - step * objs.local_grads(s.x)
    return _advance(s, x_new, x_new, 1, s.dim)


# ---------------------------------------------------------------------------
# driver


class _Rounds(Sequence):
    """Lazy per-round weight matrices ``(R, N, N)`` built from uniforms ``(R, rows, E)``."""

    def __init__(self, process: WeightProcess, uniforms: np.ndarray, start: int, stop: int):
        self.process = process
        self.uniforms = uniforms
        self.start = start
        self.stop = stop

    def __len__(self):
        return self.stop - self.start

    def __getitem__(self, i):
        if not 0 <= i < len(self):
            raise IndexError(i)
        return self.process.matrices_from_uniforms(self.uniforms[:, self.start + i, :])


class _Static(Sequence):
    def __init__(self, W: np.ndarray, length: int):
        self.W = W
        self.length = length

    def __len__(self):
        return self.length

    def __getitem__(self, i):
        if not 0 <= i < self.length:
            raise IndexError(i)
        return self.W


def bind_schedule(sched: Schedule, network: WeightProcess, mu: float | None = None, seed: int = 0) -> Schedule:
    """Fill ``mu``, ``n_nodes`` and ``static`` of a consensus schedule from ``network``.

    ``mu`` defaults to the schedule's own value, else a Monte Carlo estimate
    drawn from the ``MU`` stream of ``seed``.
    """
    if sched.variant not in CONSENSUS or sched.variant is Variant.MDNC_RELAXED:
        return replace(sched, n_nodes=network.n_nodes)
    if mu is None:
        mu = sched.mu
    if mu is None:
        mu = mu_bar(network, MU_SAMPLES, stream(seed, MU))
    return replace(sched, mu=mu, n_nodes=network.n_nodes, static=network.is_static)


def rows_per_iteration(sched: Schedule, k: int) -> int:
    if sched.variant in (Variant.MDNC, Variant.MDNC_RELAXED):
        return sched.rounds(k)
    if sched.variant is Variant.DNC:
        return 2 * sched.rounds(k)
    return 1


def default_record_policy(k: int) -> bool:
    return k <= 100 or k % 10 == 0


def simulate(
    network: WeightProcess,
    objs,
    sched: Schedule,
    n_iters: int,
    seed: int,
    run_ids: Sequence[int] = (0,),
    *,
    record: Callable[[int], bool] | int | None = None,
    hooks: Sequence[Callable[[SolverState], None]] = (),
) -> list[list[RunRecord]]:
    """Advance several independent runs in lock step and collect their records.

    Run ``r`` draws the matrices of iteration ``k`` from
    ``round_stream(seed, r, k)``, so its trajectory does not depend on which
    other runs share the batch.  A run whose ``err_f`` exceeds
    ``DIVERGENCE_FACTOR`` times its initial value (or turns non-finite) gets
    one record flagged ``diverged`` and is frozen from then on.

    ``sched`` must already be bound (see :func:`bind_schedule`) for the
    consensus variants.  ``record`` is a predicate on ``k``, an integer
    period, or ``None`` for :func:`default_record_policy`; ``k = 0`` and
    ``k = n_iters`` are always recorded.
    """
    if n_iters < 1:
        raise ConfigError("n_iters must be at least 1")
    if objs.n_nodes != network.n_nodes:
        raise ConfigError("objective and network disagree on the number of nodes")
    sched.validate(objs.lipschitz())
    if record is None:
        record = default_record_policy
    elif isinstance(record, int):
        period = record
        record = lambda k: k % period == 0  # noqa: E731
    run_ids = list(run_ids)
    n_runs, n, d = len(run_ids), network.n_nodes, objs.dim
    n_edges = network.supergraph.n_edges
    f_star, f_zero = objs.f_star, objs.f_zero()

    state = SolverState.zeros((n_runs, n, d), n_edges)
    records: list[list[RunRecord]] = [[] for _ in run_ids]
    alive = np.ones(n_runs, dtype=bool)
    initial_err = None

    def emit(st: SolverState, force: bool = False):
        nonlocal initial_err
        m = compute_metrics(st.x, st.y, objs, f_star, f_zero)
        if initial_err is None:
            initial_err = m["err_f"].copy()
        blown = ~np.isfinite(m["err_f"]) | (m["err_f"] > DIVERGENCE_FACTOR * np.maximum(initial_err, 1e-300))
        for r in np.flatnonzero(alive):
            if force or record(st.k) or blown[r]:
                records[r].append(
                    RunRecord(
                        run_id=run_ids[r],
                        k=st.k,
                        comm_rounds=st.comm_rounds,
                        scalar_tx=st.scalar_tx,
                        err_f=float(m["err_f"][r]),
                        z_norm=float(m["z_norm"][r]),
                        z_norm_sq=float(m["z_norm_sq"][r]),
                        per_node_gap=m["per_node_gap"][r],
                        diverged=bool(blown[r]),
                    )
                )
        alive[blown] = False

    emit(state, force=True)
    static_W = network.matrix[None] if network.is_static and network.matrix is not None else None
    for k in range(1, n_iters + 1):
        rows = rows_per_iteration(sched, k)
        if static_W is not None:
            rounds: Sequence[np.ndarray] = _Static(static_W, rows)
        else:
            u = np.stack([round_stream(seed, r, k).random((rows, n_edges)) for r in run_ids])
            rounds = _Rounds(network, u, 0, rows)
        new = _step(state, rounds, objs, sched)
        if not alive.all():
            keep = alive[:, None, None]
            new.x = np.where(keep, new.x, state.x)
            new.y = np.where(keep, new.y, state.y)
            new.x_prev = np.where(keep, new.x_prev, state.x_prev)
        state = new
        for hook in hooks:
            hook(state)
        emit(state, force=k == n_iters)
        if not alive.any():
            break
    return records


def _step(state: SolverState, rounds: Sequence[np.ndarray], objs, sched: Schedule) -> SolverState:
    v = sched.variant
    with np.errstate(over="ignore", invalid="ignore"):
        if v in (Variant.MDNG, Variant.MDNG_FREE_C):
            return mdng_step(state, rounds[0], objs, sched)
        if v is Variant.DNG:
            return dng_step(state, rounds[0], objs, sched)
        if v is Variant.SUBGRAD:
            return subgradient_step(state, rounds[0], objs, state.k + 1)
        if v in (Variant.MDNC, Variant.MDNC_RELAXED):
            return mdnc_outer_step(state, rounds, objs, sched)
        half = len(rounds) // 2
        return dnc_outer_step(state, (_slice(rounds, 0, half), _slice(rounds, half, len(rounds))), objs, sched)


def _slice(rounds: Sequence[np.ndarray], start: int, stop: int) -> Sequence[np.ndarray]:
    if isinstance(rounds, _Rounds):
        return _Rounds(rounds.process, rounds.uniforms, rounds.start + start, rounds.start + stop)
    return _Static(rounds[0], stop - start) if isinstance(rounds, _Static) else list(rounds)[start:stop]


def run_solver(
    variant: Variant | str,
    network: WeightProcess,
    objs,
    sched: Schedule,
    n_iters: int,
    seed: int,
    hooks: Sequence[Callable[[SolverState], None]] = (),
    *,
    run_index: int = 0,
    mu: float | None = None,
    record: Callable[[int], bool] | int | None = None,
) -> list[RunRecord]:
    """Run one solver trajectory and return its records."""
    sched = bind_schedule(replace(sched, variant=Variant(variant)), network, mu, seed)
    return simulate(network, objs, sched, n_iters, seed, [run_index], record=record, hooks=hooks)[0]
