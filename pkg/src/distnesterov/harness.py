"""Experiment configuration, Monte Carlo orchestration, aggregation, slope fits and CSV output."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import (
    MU_SAMPLES,
    Scheme,
    Supergraph,
    WeightProcess,
    build_geometric_supergraph,
    is_connected,
    mu_bar,
    supergraph_from_edges,
)
from .metrics import RunRecord
from .objective import CostKind, ObjectiveSet, huber_experiment_objective
from .rng import MU, stream
from .solvers import ConfigError, Schedule, Variant, bind_schedule, default_record_policy, simulate

RECORD_COLUMNS = ("run_id", "k", "comm_rounds", "scalar_tx", "err_f", "z_norm", "z_norm_sq")
SUMMARY_COLUMNS = ("k", "mean_err", "std_err", "mean_z", "mean_z_sq", "second_moment_gap")

#: runs advanced together in one batch; bounds memory for long consensus phases
BATCH = 50


@dataclass
class ExperimentConfig:
    """One experiment: network, objective, solver and Monte Carlo settings.

    ``network``, ``objective`` and ``solver`` are the raw JSON sections; see
    :func:`build_network`, :func:`build_objective` and :func:`build_schedule`
    for the accepted keys.  ``record_every=None`` records every iteration up
    to 100 and every tenth after.
    """

    network: dict
    objective: dict
    solver: dict
    seed: int = 0
    n_runs: int = 1
    n_iters: int = 100
    record_every: int | None = None
    output_path: str | None = None
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.n_runs < 1:
            raise ConfigError("n_runs must be at least 1")
        if self.n_iters < 1:
            raise ConfigError("n_iters must be at least 1")
        if self.record_every is not None and self.record_every < 1:
            raise ConfigError("record_every must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = {"network", "objective", "solver", "seed", "n_runs", "n_iters", "record_every", "output_path"}
        missing = {"network", "objective", "solver"} - data.keys()
        if missing:
            raise ConfigError(f"missing config sections: {sorted(missing)}")
        extra = {k: v for k, v in data.items() if k not in known}
        try:
            return cls(**{k: v for k, v in data.items() if k in known}, extra=extra)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = {
            "seed": self.seed,
            "n_runs": self.n_runs,
            "n_iters": self.n_iters,
            "record_every": self.record_every,
            "output_path": self.output_path,
            "network": self.network,
            "objective": self.objective,
            "solver": self.solver,
        }
        out.update(self.extra)
        return out


def build_supergraph(net: dict) -> Supergraph:
    if "edges" in net:
        return supergraph_from_edges(int(net["n"]), net["edges"])
    return build_geometric_supergraph(int(net.get("n", 10)), float(net["radius"]), int(net.get("graph_seed", 0)))


def build_network(cfg: ExperimentConfig) -> WeightProcess:
    """Weight process from the ``network`` section.

    Keys: ``n``, ``radius`` and ``graph_seed`` (geometric) or ``edges``;
    ``scheme`` (uniform | metropolis | deterministic), ``edge_online_prob``,
    ``w_floor``.
    """
    net = cfg.network
    try:
        g = build_supergraph(net)
        proc = WeightProcess(
            g,
            Scheme(net.get("scheme", "uniform")),
            float(net.get("edge_online_prob", 1.0)),
            net.get("w_floor"),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad network section: {exc}") from exc
    variant = Variant(cfg.solver.get("variant", "MDNG"))
    if variant is not Variant.SUBGRAD and not is_connected(g):
        raise ConfigError(f"{variant.value} needs a connected supergraph")
    return proc


def build_objective(cfg: ExperimentConfig) -> ObjectiveSet:
    """Objective from the ``objective`` section.

    Either explicit ``thetas`` (with ``kind``, ``d``, ``b0``) or the Huber
    pattern ``n_plus`` / ``scale`` / ``spread`` drawn from the config seed.
    """
    obj = cfg.objective
    try:
        if "thetas" in obj:
            d = int(obj.get("d", 1))
            thetas = np.asarray(obj["thetas"], dtype=float).reshape(-1, d)
            return ObjectiveSet(CostKind(obj.get("kind", "huber")), thetas, obj.get("b0"))
        if CostKind(obj.get("kind", "huber")) is not CostKind.HUBER:
            raise ConfigError("generated objectives are Huber only; give thetas for fair costs")
        return huber_experiment_objective(
            n=int(cfg.network.get("n", 10)),
            n_plus=int(obj.get("n_plus", 3)),
            scale=float(obj.get("scale", 4.0)),
            spread=float(obj.get("spread", 0.1)),
            seed=int(cfg.seed),
            d=int(obj.get("d", 1)),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad objective section: {exc}") from exc


def build_schedule(cfg: ExperimentConfig, network: WeightProcess) -> Schedule:
    sol = cfg.solver
    try:
        sched = Schedule(
            Variant(sol.get("variant", "MDNG")),
            c=float(sol.get("c", 0.5)),
            alpha=float(sol.get("alpha", 0.5)),
            p=float(sol.get("p", 1.0)),
            mu=sol.get("mu"),
        )
    except ValueError as exc:
        raise ConfigError(f"bad solver section: {exc}") from exc
    mu = sched.mu
    if mu is None and not network.is_static and sched.variant in (Variant.MDNC, Variant.DNC):
        mu = mu_bar(network, int(cfg.network.get("mu_samples", MU_SAMPLES)), stream(cfg.seed, MU))
    return bind_schedule(sched, network, mu, cfg.seed)


def run_experiment(cfg: ExperimentConfig) -> list[RunRecord]:
    """All records of ``cfg.n_runs`` runs, sorted by ``(run_id, k)``."""
    network = build_network(cfg)
    objs = build_objective(cfg)
    sched = build_schedule(cfg, network)
    record = default_record_policy if cfg.record_every is None else cfg.record_every
    out: list[RunRecord] = []
    for start in range(0, cfg.n_runs, BATCH):
        ids = range(start, min(start + BATCH, cfg.n_runs))
        for recs in simulate(network, objs, sched, cfg.n_iters, cfg.seed, ids, record=record):
            out.extend(recs)
    out.sort(key=lambda r: (r.run_id, r.k))
    return out


@dataclass
class SummaryRow:
    k: int
    mean_err: float
    std_err: float
    mean_z: float
    mean_z_sq: float
    second_moment_gap: float


def aggregate(records: Iterable[RunRecord]) -> list[SummaryRow]:
    """Per-``k`` statistics across runs.

    ``std_err`` is the population standard deviation of ``err_f``;
    ``second_moment_gap`` is the mean over runs and nodes of the squared
    per-node gap ``((f(x_i) - f*)/N)^2`` (NaN when no run carries per-node
    gaps).
    """
    by_k: dict[int, list[RunRecord]] = {}
    for r in records:
        by_k.setdefault(r.k, []).append(r)
    rows = []
    for k in sorted(by_k):
        group = by_k[k]
        err = np.array([r.err_f for r in group])
        gaps = [np.asarray(r.per_node_gap) ** 2 for r in group if r.per_node_gap is not None]
        rows.append(
            SummaryRow(
                k=k,
                mean_err=float(err.mean()),
                std_err=float(err.std()),
                mean_z=float(np.mean([r.z_norm for r in group])),
                mean_z_sq=float(np.mean([r.z_norm_sq for r in group])),
                second_moment_gap=float(np.mean(gaps)) if gaps else math.nan,
            )
        )
    return rows


def fit_slope(series: Sequence[tuple[float, float]], k_min: float, k_max: float) -> float:
    """Least-squares slope of ``log10 value`` against ``log10 k`` on ``[k_min, k_max]``.

    Nonpositive or non-finite values are skipped.
    """
    pts = [(k, v) for k, v in series if k_min <= k <= k_max and k > 0 and v > 0 and math.isfinite(v)]
    if len(pts) < 2:
        raise ValueError("need at least two positive points in the window")
    x = np.log10([k for k, _ in pts])
    y = np.log10([v for _, v in pts])
    return float(np.polyfit(x, y, 1)[0])


def summary_slope(rows: Sequence[SummaryRow], k_min: float, k_max: float, column: str = "mean_err") -> float:
    return fit_slope([(r.k, getattr(r, column)) for r in rows], k_min, k_max)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def emit_csv(records: Iterable[RunRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in RECORD_COLUMNS])


def emit_summary_csv(rows: Iterable[SummaryRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in SUMMARY_COLUMNS])


def read_series(path: str | Path) -> list[tuple[int, float]]:
    """``(k, value)`` pairs from a summary CSV (``mean_err``) or a record CSV (mean ``err_f`` per ``k``)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path} has no data rows")
    if "mean_err" in rows[0]:
        return [(int(r["k"]), float(r["mean_err"])) for r in rows]
    by_k: dict[int, list[float]] = {}
    for r in rows:
        by_k.setdefault(int(r["k"]), []).append(float(r["err_f"]))
    return [(k, float(np.mean(v))) for k, v in sorted(by_k.items())]


def with_param(cfg: ExperimentConfig, name: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with one parameter replaced, looked up in network, solver, objective, then top level."""
    for section in ("network", "solver", "objective"):
        body = getattr(cfg, section)
        if name in body:
            return replace(cfg, **{section: {**body, name: value}})
    if name in ("seed", "n_runs", "n_iters", "record_every"):
        return replace(cfg, **{name: type(getattr(cfg, name) or 0)(value)})
    if name in ("edge_online_prob", "scheme", "radius", "graph_seed", "w_floor"):
        return replace(cfg, network={**cfg.network, name: value})
    if name in ("variant", "c", "alpha", "p", "mu"):
        return replace(cfg, solver={**cfg.solver, name: value})
    raise ConfigError(f"unknown parameter {name!r}")
