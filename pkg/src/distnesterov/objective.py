"""Per-node convex costs with bounded, Lipschitz gradients and a centralized f* oracle."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .rng import OBJECTIVE, stream


class CostKind(str, Enum):
    HUBER = "huber"
    FAIR = "fair"


class ConvergenceError(RuntimeError):
    """Centralized solver hit ``max_iter``; carries the best iterate found."""

    def __init__(self, message: str, x_best: np.ndarray, f_best: float):
        super().__init__(message)
        self.x_best = x_best
        self.f_best = f_best


def huber_eval_grad(x, theta) -> tuple[np.ndarray, np.ndarray]:
    """Radial Huber loss with unit threshold, vectorized over leading axes.

    ``0.5 * r**2`` for ``r = ||x - theta|| <= 1`` and ``r - 0.5`` beyond;
    the gradient is ``x - theta`` clipped to the unit ball.
    """
    u = np.asarray(x, dtype=float) - np.asarray(theta, dtype=float)
    r = np.linalg.norm(u, axis=-1)
    value = np.where(r <= 1.0, 0.5 * r * r, r - 0.5)
    scale = 1.0 / np.maximum(r, 1.0)
    return value, u * scale[..., None]


def fair_eval_grad(x, theta, b0: float) -> tuple[np.ndarray, np.ndarray]:
    """Fair loss ``b0^2 (r/b0 - log(1 + r/b0))`` of ``r = ||x - theta||``.

    The gradient ``u / (1 + r/b0)`` has norm strictly below ``b0``.
    """
    if b0 <= 0:
        raise ValueError("b0 must be positive")
    u = np.asarray(x, dtype=float) - np.asarray(theta, dtype=float)
    r = np.linalg.norm(u, axis=-1)
    value = b0 * b0 * (r / b0 - np.log1p(r / b0))
    return value, u / (1.0 + r / b0)[..., None]


@dataclass(frozen=True, eq=False)
class CostModel:
    kind: CostKind
    theta: np.ndarray
    b0: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CostKind(self.kind))
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))
        if self.kind is CostKind.FAIR and (self.b0 is None or self.b0 <= 0):
            raise ValueError("fair cost needs b0 > 0")

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def eval_grad(self, x):
        if self.kind is CostKind.HUBER:
            return huber_eval_grad(x, self.theta)
        return fair_eval_grad(x, self.theta, self.b0)

    def value(self, x):
        return self.eval_grad(x)[0]

    def grad(self, x):
        return self.eval_grad(x)[1]

    def lipschitz(self) -> float:
        return 1.0

    def grad_bound(self) -> float:
        return 1.0 if self.kind is CostKind.HUBER else float(self.b0)


@dataclass(eq=False)
class ObjectiveSet:
    """The N local costs of one problem, all of the same kind.

    Local quantities act on stacked iterates of shape ``(..., N, d)``; the
    global cost ``f(x) = sum_i f_i(x)`` acts on points of shape ``(..., d)``.
    """

    kind: CostKind
    thetas: np.ndarray
    b0: float | None = None
    _solution: tuple[np.ndarray, float] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.kind = CostKind(self.kind)
        self.thetas = np.asarray(self.thetas, dtype=float)
        if self.thetas.ndim == 1:
            self.thetas = self.thetas[:, None]
        if self.kind is CostKind.FAIR and (self.b0 is None or self.b0 <= 0):
            raise ValueError("fair cost needs b0 > 0")

    @classmethod
    def from_costs(cls, costs: Sequence[CostModel]) -> ObjectiveSet:
        kinds = {c.kind for c in costs}
        if len(kinds) != 1:
            raise ValueError("all costs must share one kind")
        return cls(kinds.pop(), np.stack([c.theta for c in costs]), costs[0].b0)

    @property
    def costs(self) -> list[CostModel]:
        return [CostModel(self.kind, t, self.b0) for t in self.thetas]

    @property
    def n_nodes(self) -> int:
        return self.thetas.shape[0]

    @property
    def dim(self) -> int:
        return self.thetas.shape[1]

    def lipschitz(self) -> float:
        return 1.0

    def grad_bound(self) -> float:
        return 1.0 if self.kind is CostKind.HUBER else float(self.b0)

    def _eval(self, x, theta):
        if self.kind is CostKind.HUBER:
            return huber_eval_grad(x, theta)
        return fair_eval_grad(x, theta, self.b0)

    def local_values(self, X):
        """``f_i(x_i)`` for stacked ``X`` of shape ``(..., N, d)``."""
        return self._eval(X, self.thetas)[0]

    def local_grads(self, X):
        """``grad f_i(x_i)`` stacked as ``(..., N, d)``."""
        return self._eval(X, self.thetas)[1]

    def total(self, x):
        """Global cost ``f(x)`` for points of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        return self._eval(x[..., None, :], self.thetas)[0].sum(axis=-1)

    def total_grad(self, x):
        x = np.asarray(x, dtype=float)
        return self._eval(x[..., None, :], self.thetas)[1].sum(axis=-2)

    @property
    def x_star(self) -> np.ndarray:
        return self.solve()[0]

    @property
    def f_star(self) -> float:
        return self.solve()[1]

    def f_zero(self) -> float:
        return float(self.total(np.zeros(self.dim)))

    def solve(self, tol: float = 1e-10, max_iter: int = 200_000) -> tuple[np.ndarray, float]:
        if self._solution is None:
            self._solution = solve_centralized(self, tol, max_iter)
        return self._solution

    def to_json(self) -> str:
        return json.dumps(
            {"kind": self.kind.value, "d": self.dim, "thetas": self.thetas.tolist(), "b0": self.b0}
        )

    @classmethod
    def from_json(cls, text: str) -> ObjectiveSet:
        data = json.loads(text)
        thetas = np.asarray(data["thetas"], dtype=float).reshape(-1, int(data["d"]))
        return cls(data["kind"], thetas, data.get("b0"))


def solve_centralized(objs: ObjectiveSet, tol: float = 1e-10, max_iter: int = 200_000) -> tuple[np.ndarray, float]:
    """Minimize ``f = sum_i f_i`` by Nesterov's method with step ``1/(N L)``.

    Momentum is reset whenever the cost increases (adaptive restart), which
    keeps the method monotone enough to reach gradient norms near machine
    precision on locally strongly convex costs.  Starts from the origin.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    step = 1.0 / (objs.n_nodes * objs.lipschitz())
    x = np.zeros(objs.dim)
    y = x.copy()
    f_x = float(objs.total(x))
    best = (x.copy(), f_x)
    j = 0
    for _ in range(max_iter):
        g = objs.total_grad(x)
        if np.linalg.norm(g) <= tol:
            return x, f_x
        x_new = y - step * objs.total_grad(y)
        f_new = float(objs.total(x_new))
        if f_new > f_x:
            # restart: plain gradient step from x, momentum counter back to zero
            j = 0
            x_new = x - step * g
            f_new = float(objs.total(x_new))
            y = x_new
        else:
            y = x_new + (j / (j + 3)) * (x_new - x)
            j += 1
        x, f_x = x_new, f_new
        if f_x < best[1]:
            best = (x.copy(), f_x)
    raise ConvergenceError(f"gradient norm above {tol} after {max_iter} iterations", best[0], best[1])


def huber_experiment_objective(
    n: int = 10, n_plus: int = 3, scale: float = 4.0, spread: float = 0.1, seed: int = 0, d: int = 1
) -> ObjectiveSet:
    """Huber costs with ``theta_i = +-scale (1 + nu_i)``, ``nu_i ~ U[-spread, spread]``.

    The first ``n_plus`` nodes take the plus sign.  ``nu`` is drawn once from
    the objective stream of ``seed``.
    """
    if not 0 <= n_plus <= n:
        raise ValueError("n_plus must lie in [0, n]")
    nu = stream(seed, OBJECTIVE).uniform(-spread, spread, size=(n, d))
    sign = np.where(np.arange(n) < n_plus, 1.0, -1.0)[:, None]
    return ObjectiveSet(CostKind.HUBER, sign * scale * (1.0 + nu))

