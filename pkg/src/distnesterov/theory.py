"""Numerical checks of the matrix-product and moment lemmas, plus rate-bound evaluators.

Every check returns :class:`BoundReport` rows so that verdicts from exact
scans and Monte Carlo estimates can be collected in one report.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Iterator

import numpy as np

from .graph import MU_SAMPLES, WeightProcess, mu_bar
from .rng import Stream
from .solvers import momentum, tau_k

SLACK_TOL = 1e-12
#: standard errors added to Monte Carlo means before comparing with a bound
SE_MARGIN = 3.0

B1 = np.array([[2.0, -1.0], [1.0, 0.0]])
B2 = np.array([[1.0, -1.0], [1.0, -1.0]])
B3 = np.array([[1.0, -1.0], [0.0, 0.0]])


@dataclass
class BoundReport:
    k: int
    t: int | None
    s: int | None
    lhs: float
    rhs: float
    satisfied: bool
    slack: float
    label: str = ""
    n_samples: int | None = None

    @classmethod
    def of(cls, label: str, lhs: float, rhs: float, k: int, t: int | None = None, s: int | None = None, n_samples: int | None = None) -> BoundReport:
        slack = float(rhs) - float(lhs)
        return cls(k, t, s, float(lhs), float(rhs), slack >= -SLACK_TOL, slack, label, n_samples)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# 2x2 momentum matrices


def a_coef(t: int) -> float:
    return 3.0 / (t + 3)


def b_matrix(k: int) -> np.ndarray:
    """``[[1 + beta_{k-1}, -beta_{k-1}], [1, 0]]``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    beta = momentum(k - 1)
    return np.array([[1.0 + beta, -beta], [1.0, 0.0]])


def b_product_brute(k: int, t: int) -> np.ndarray:
    """``B(k) B(k-1) ... B(k-t)`` by direct multiplication; identity for ``t = -1``."""
    if k < 1 or not -1 <= t <= k - 2:
        raise ValueError(f"t={t} out of range for k={k}")
    out = np.eye(2)
    for j in range(t + 1):
        out = out @ b_matrix(k - j)
    return out


def sigma_sums(k: int, t: int) -> tuple[float, float]:
    """``(sigma_2(k, t), sigma_3(k, t))`` by explicit summation.

    Term ``j = 0..t`` is ``a_{k-t-1+j} * beta_{k-t-1} ... beta_{k-t-2+j}``;
    sigma_2 weights it by ``t - j``, sigma_3 by one.
    """
    if k < 3 or not 1 <= t <= k - 2:
        raise ValueError(f"need k >= 3 and 1 <= t <= k-2, got k={k}, t={t}")
    base = k - t - 1
    j = np.arange(t + 1)
    a = 3.0 / (base + j + 3)
    betas = (base + j[:-1]) / (base + j[:-1] + 3.0)
    prods = np.concatenate([[1.0], np.cumprod(betas)])
    terms = a * prods
    return float(np.dot(t - j, terms)), float(terms.sum())


def b_product_closed(k: int, t: int) -> np.ndarray:
    """Closed form ``B1^{t+1} - sigma_2 B2 - sigma_3 B3`` with ``B1^{t+1} = (t+1) B2 + I``."""
    s2, s3 = sigma_sums(k, t)
    return (t + 1 - s2) * B2 + np.eye(2) - s3 * B3


def norm2x2(m: np.ndarray) -> float:
    """Largest singular value of a 2x2 matrix in closed form."""
    (a, b), (c, d) = np.asarray(m, dtype=float)
    fro = a * a + b * b + c * c + d * d
    det = a * d - b * c
    disc = max(fro * fro - 4.0 * det * det, 0.0)
    return math.sqrt((fro + math.sqrt(disc)) / 2.0)


def check_sigma_bounds(k: int, t: int) -> tuple[BoundReport, BoundReport, BoundReport, BoundReport]:
    """``t^2/(k+2) <= sigma_2 <= t+1`` and ``0 <= sigma_3 <= 1`` as four one-sided rows."""
    s2, s3 = sigma_sums(k, t)
    return (
        BoundReport.of("sigma2_lower", t * t / (k + 2), s2, k, t),
        BoundReport.of("sigma2_upper", s2, t + 1, k, t),
        BoundReport.of("sigma3_lower", 0.0, s3, k, t),
        BoundReport.of("sigma3_upper", s3, 1.0, k, t),
    )


def b_norm_rhs(k: int, t: int) -> float:
    return 8.0 * (k - t - 1) * (t + 1) / k + 5.0


def check_b_norm_bound(k: int, t: int) -> BoundReport:
    """``||B(k, k-t-2)|| <= 8 (k-t-1)(t+1)/k + 5`` for ``0 <= t <= k-1``."""
    if not 0 <= t <= k - 1:
        raise ValueError(f"t={t} out of range for k={k}")
    return BoundReport.of("b_norm", norm2x2(b_product_brute(k, k - t - 2)), b_norm_rhs(k, t), k, t)


def scan_b_norms(k: int) -> Iterator[BoundReport]:
    """All cells ``t = k-1, ..., 0`` of one ``k``, extending the product one factor at a time."""
    prod = np.eye(2)
    for t in range(k - 1, -1, -1):
        if t < k - 1:
            prod = prod @ b_matrix(t + 2)
        yield BoundReport.of("b_norm", norm2x2(prod), b_norm_rhs(k, t), k, t)


def check_scalar_sums(r: float, k: int) -> tuple[BoundReport, BoundReport]:
    """Both geometric-harmonic sum bounds for ``0 < r < 1``."""
    if not 0.0 < r < 1.0:
        raise ValueError("r must lie in (0, 1)")
    if k < 1:
        raise ValueError("k must be at least 1")
    t = np.arange(1, k + 1)
    first = float(np.sum(r**t * t))
    t0 = np.arange(k)
    second = float(np.sum(r ** (k - t0 - 1) / (t0 + 1)))
    return (
        BoundReport.of("sum_t_r^t", first, r / (1 - r) ** 2, k),
        BoundReport.of("sum_r^(k-t-1)/(t+1)", second, 1.0 / ((1 - r) ** 2 * k), k),
    )


# ---------------------------------------------------------------------------
# Monte Carlo moment checks


def _spectral(m: np.ndarray) -> np.ndarray:
    return np.linalg.norm(m, ord=2, axis=(-2, -1))


def _mc_report(label: str, samples: np.ndarray, rhs: float, k: int, t=None, s=None) -> BoundReport:
    n = samples.shape[0]
    se = samples.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    return BoundReport.of(label, samples.mean() + SE_MARGIN * se, rhs, k, t, s, n)


def check_phi_moments(p: WeightProcess, k: int, n_samples: int, rng: Stream, mu: float | None = None) -> list[BoundReport]:
    """Monte Carlo check of the first and second moment bounds on ``Phi~(k, t)``.

    ``Phi~(k, t) = W~(k) ... W~(t+2)`` (identity for ``t = k-1``) with
    ``W~ = W - J``.  For every ``t`` in ``0..k-1`` the rows compare
    ``E||Phi~||`` with ``N mu^(k-t-1)`` and ``E||Phi~^T Phi~||`` with
    ``N^2 mu^(2(k-t-1))``; for every pair ``s < t`` they compare
    ``E||Phi~(k,s)^T Phi~(k,t)||`` with ``N^3 mu^((k-t-1)+(k-s-1))``.
    When ``mu`` is omitted it is estimated from the process with a stream
    drawn from ``rng``.
    """
    if k < 1 or n_samples < 2:
        raise ValueError("need k >= 1 and at least two samples")
    n = p.n_nodes
    if mu is None:
        mu = mu_bar(p, MU_SAMPLES, rng)
    J = np.full((n, n), 1.0 / n)
    chains = np.broadcast_to(np.eye(n), (n_samples, n, n)).copy()
    phis = {k - 1: chains.copy()}
    for t in range(k - 2, -1, -1):
        chains = chains @ (p.sample(rng, n_samples) - J)
        phis[t] = chains.copy()
    out = []
    for t in range(k - 1, -1, -1):
        m = k - t - 1
        norms = _spectral(phis[t])
        out.append(_mc_report("phi_first", norms, n * mu**m, k, t))
        out.append(_mc_report("phi_second", _spectral(np.swapaxes(phis[t], -1, -2) @ phis[t]), n**2 * mu ** (2 * m), k, t))
    for t in range(k):
        for s in range(t):
            cross = _spectral(np.swapaxes(phis[s], -1, -2) @ phis[t])
            out.append(_mc_report("phi_cross", cross, n**3 * mu ** ((k - t - 1) + (k - s - 1)), k, t, s))
    return out


def consensus_products(p: WeightProcess, k: int, n_samples: int, rng: Stream, mu: float) -> list[np.ndarray]:
    """Samples of ``W(j) = W(j, tau_j) ... W(j, 1)`` for ``j = 1..k``, each ``(n_samples, N, N)``."""
    out = []
    for j in range(1, k + 1):
        prod = np.broadcast_to(np.eye(p.n_nodes), (n_samples, p.n_nodes, p.n_nodes)).copy()
        for _ in range(tau_k(j, p.n_nodes, mu, p.is_static)):
            prod = p.sample(rng, n_samples) @ prod
        out.append(prod)
    return out


def check_psi_moments(p: WeightProcess, k: int, n_samples: int, rng: Stream, mu: float | None = None) -> list[BoundReport]:
    """Monte Carlo check of the consensus-product moment bounds.

    For ``j = 1..k``: ``E||W~(j)||^2 <= 1/j^6`` where ``W(j)`` multiplies
    the ``tau_j`` round matrices of outer iteration ``j``.  For
    ``t = 0..k-1``: ``E||Psi~(k, t)|| <= 1/(k^3 (k-1)^3 ... (t+1)^3)`` with
    ``Psi~(k, t) = W~(k) ... W~(t+1)``.
    """
    if k < 1 or n_samples < 2:
        raise ValueError("need k >= 1 and at least two samples")
    n = p.n_nodes
    if mu is None:
        mu = mu_bar(p, MU_SAMPLES, rng)
    J = np.full((n, n), 1.0 / n)
    tilde = [m - J for m in consensus_products(p, k, n_samples, rng, mu)]
    out = [_mc_report("psi_single_sq", _spectral(tilde[j - 1]) ** 2, 1.0 / j**6, j) for j in range(1, k + 1)]
    psi = np.broadcast_to(np.eye(n), tilde[0].shape).copy()
    rhs = 1.0
    for t in range(k - 1, -1, -1):
        psi = psi @ tilde[t]
        rhs /= float(t + 1) ** 3
        out.append(_mc_report("psi_product", _spectral(psi), rhs, k, t))
    return out


# ---------------------------------------------------------------------------
# theorem right-hand sides


class Bound(str, Enum):
    T1 = "T1"
    T1SQ = "T1SQ"
    T2 = "T2"
    T3 = "T3"
    T3SQ = "T3SQ"
    T4 = "T4"
    COMM = "COMM"


def _need_mu(mu) -> float:
    if mu is None or not 0.0 < mu < 1.0:
        raise ValueError(f"mu must lie in (0, 1), got {mu}")
    return float(mu)


def t2_partial_sum(k: int) -> float:
    """``sum_{t=1}^{k-1} (t+2)^2 / ((t+1) t^2)`` by direct summation."""
    t = np.arange(1, k, dtype=float)
    return float(np.sum((t + 2) ** 2 / ((t + 1) * t * t)))


def theorem_bound(which: Bound | str, *, k: int, c: float | None = None, alpha: float | None = None, N: int = 1, G: float = 1.0, L: float = 1.0, mu: float | None = None, R: float = 0.0) -> float:
    """Right-hand side of a rate bound at iteration ``k``.

    ``T1``/``T1SQ``: mean and mean-square disagreement of mD-NG.
    ``T2``: per-node normalized gap of mD-NG.  ``T3``/``T3SQ``: mean and
    mean-square disagreement of mD-NC.  ``T4``: per-node normalized gap of
    mD-NC.  ``COMM``: bound on the consensus rounds of the first ``k``
    mD-NC iterations.
    """
    which = Bound(which)
    if k < 1:
        raise ValueError("k must be at least 1")
    if which is Bound.T1:
        return 50 * c * N**1.5 * G / (1 - _need_mu(mu)) ** 2 / k
    if which is Bound.T1SQ:
        return 50**2 * c**2 * N**4 * G**2 / ((1 - _need_mu(mu)) ** 4 * k**2)
    if which is Bound.T2:
        gap = 1 - _need_mu(mu)
        return (
            2 * R**2 / (c * k)
            + 50**2 * c**2 * N**3 * L * G**2 / gap**4 * t2_partial_sum(k) / k
            + 50 * N**2 * c * G**2 / (gap**2 * k)
        )
    if which is Bound.T3:
        return 50 * alpha * math.sqrt(N) * G / k**2
    if which is Bound.T3SQ:
        return 50**2 * alpha**2 * N * G**2 / k**4
    if which is Bound.T4:
        return (2 * R**2 / alpha + 11 * alpha**2 * L * G**2 + alpha * G**2) / k**2
    return 3.0 / -math.log(_need_mu(mu)) * (k + 1) * math.log(N * (k + 1))


def mu4(p_G: float, w_floor: float, lambda_F: float) -> float:
    """Fourth-moment contraction ``(1 - p_G) + p_G (1 - w^2 lambda_F)^2``.

    Raises unless the result lies in ``[0, 1)``.
    """
    if min(p_G, w_floor, lambda_F) < 0:
        raise ValueError("arguments must be nonnegative")
    if p_G > 1:
        raise ValueError("p_G must not exceed 1")
    value = (1.0 - p_G) + p_G * (1.0 - w_floor**2 * lambda_F) ** 2
    if not 0.0 <= value < 1.0:
        raise ValueError(f"mu4 = {value} is outside [0, 1)")
    return value


# ---------------------------------------------------------------------------
# lemma scans


def scan_closed_form(k_max: int = 50) -> float:
    """Largest entrywise gap between the closed-form and brute-force products over ``3 <= k <= k_max``."""
    worst = 0.0
    for k in range(3, k_max + 1):
        prod = b_matrix(k)
        for t in range(1, k - 1):
            prod = prod @ b_matrix(k - t)
            worst = max(worst, float(np.abs(prod - b_product_closed(k, t)).max()))
    return worst


def scan_sigma(k_max: int = 200) -> list[BoundReport]:
    return [r for k in range(3, k_max + 1) for t in range(1, k - 1) for r in check_sigma_bounds(k, t)]


def scan_b_norm(k_max: int = 200) -> list[BoundReport]:
    return [r for k in range(1, k_max + 1) for r in scan_b_norms(k)]


def scan_scalar_sums(rs=None, k_max: int = 1000) -> list[BoundReport]:
    """Both sum bounds on a grid of ``r`` (default 0.05..0.95 step 0.05) and ``k = 1..k_max``."""
    if rs is None:
        rs = np.round(np.arange(1, 20) * 0.05, 10)
    return [row for r in rs for k in range(1, k_max + 1) for row in check_scalar_sums(float(r), k)]
