"""Importance values to inclusion probabilities.

Solves, for importances q (all > 0) and a budget n,

    min_{c, p}  sum_i (p_i - c q_i)^2
    s.t.        sum_i p_i = n,  0 <= p_i <= 1,  c >= 0

in closed form. With q sorted in decreasing order, the lower box constraints are
never active (gamma_i = 0) and the optimum has the shape p_i = 1 for i < t and
p_i = c q_i - beta/2 for i >= t, where (c, beta/2) solve the 2x2 system

    [[sum_{i>=t} q_i, -(N-t+1)], [sum_{i<t} q_i^2, sum_{i>=t} q_i]] (c, beta/2)
        = (n-t+1, sum_{i<t} q_i).

Each t in 1..n is a candidate (t = 1 is the exactly proportional solution
p = n q / sum(q)), and t = n + 1 (top-n ones, zeros elsewhere) is always feasible.
The feasible candidate of minimum objective wins.

"""
import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from unetslim.core.linalg import solve_2x2
from unetslim.core.utils import as_array
from unetslim.core.exceptions import (
    ArgumentError,
    DegeneratePointError,
    SingularMatrixError,
)

logger = logging.getLogger(__name__)


Q_MIN = 1e-9
SUM_TOL = 1e-9
BOX_TOL = 1e-12
DEGENERATE_TOL = 1e-6
ORACLE_MAX_SIZE = 16
PRUNING_RATES = (0.7, 0.8, 0.9)


@dataclass(frozen=True)
class InclusionSolution:
    """Inclusion probabilities for a budget n.

    Args:
        - p (1darray): Inclusion probabilities in the original index order.
        - c (float): Proportionality constant, c >= 0.
        - t (int): Clamp index, the t - 1 largest importances have p = 1.
        - objective (float): sum_i (p_i - c q_i)^2.
        - beta (float): Multiplier of the sum constraint, NaN for the top-n fallback.
        - delta (1darray): Multipliers of the upper bounds (zero where unclamped).
        - margin (float): Distance of the solution to a change of active set.
        - n (int): Budget.

    """

    p: np.ndarray
    c: float
    t: int
    objective: float
    beta: float = float("nan")
    delta: np.ndarray = None
    margin: float = float("inf")
    n: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def gamma(self):
        """Multipliers of the lower bounds, identically zero."""
        return np.zeros_like(self.p)

    def to_dict(self):
        return {
            "p": [float(v) for v in self.p],
            "c": float(self.c),
            "t": int(self.t),
            "objective": float(self.objective),
        }


def budget_from_rate(rate, N):
    """Number of temporal blocks kept, n = round((1 - rate) N)."""
    if not 0 <= rate <= 1:
        raise ArgumentError(f"Pruning rate must be in [0, 1], got {rate}")
    return int(np.floor((1 - rate) * N + 0.5))


def _validate(q, n, name="q"):
    q = as_array(q, ndim=1, name=name)
    N = q.size
    if N < 2:
        raise ArgumentError(f"At least 2 importance values are required, got {N}")
    if int(n) != n or not 1 <= n < N:
        raise ArgumentError(f"Budget n must be an integer in [1, {N - 1}], got {n}")
    if np.any(q < Q_MIN):
        warnings.warn(f"Importance values below {Q_MIN} clamped to {Q_MIN}")
        q = np.maximum(q, Q_MIN)
    return q, int(n)


def _sorted(q):
    """Descending order, ties broken by the lowest original index."""
    order = np.argsort(-q, kind="stable")
    return order, q[order]


def _unsort(values, order):
    out = np.empty_like(values)
    out[order] = values
    return out


def _branch(qs, n, t):
    """Candidate with the t-1 largest importances clamped to one.

    Returns:
        - (p, c, b) in sorted order, b = beta/2, or None if the system is singular.

    """
    N = qs.size
    head, tail = qs[: t - 1], qs[t - 1 :]
    if t == 1 and np.all(qs == qs[0]):
        return np.full(N, n / N), n / np.sum(qs), 0.0
    matrix = [[tail.sum(), -(N - t + 1)], [np.sum(head**2), tail.sum()]]
    try:
        c, b = solve_2x2(matrix, [n - t + 1, head.sum()])
    except SingularMatrixError as exc:
        logger.debug(f"Skipping singular branch t={t}: det={exc.det}")
        return None
    if t == 1:
        b = 0.0
    p = np.concatenate([np.ones(t - 1), c * tail - b])
    return p, c, b


def _feasible(p, c, n):
    return (
        abs(p.sum() - n) <= SUM_TOL
        and np.all(p >= -BOX_TOL)
        and np.all(p <= 1 + BOX_TOL)
        and c >= 0
    )


def _margin(qs, p, c, b, t):
    """Smallest distance to a switch of the active set."""
    free = p[t - 1 :]
    distances = [free.min(), (1 - free).min()]
    if t > 1:
        distances.append((c * qs[: t - 1] - b - 1).min())
    return float(min(distances))


def solve_inclusion(q, n):
    """Closed-form inclusion probabilities for importances q and budget n.

    Args:
        - q (1darray): N strictly positive importance values, N >= 2.
        - n (int): Budget, 1 <= n < N.

    Returns:
        - solution (InclusionSolution): Minimum-objective feasible candidate.

    Note:
        - Values below 1e-9 are clamped to 1e-9 with a warning.
        - Equal objectives are resolved towards the smallest clamp index t.

    """
    q, n = _validate(q, n)
    N = q.size
    order, qs = _sorted(q)

    best = None
    for t in range(1, n + 1):
        candidate = _branch(qs, n, t)
        if candidate is None:
            continue
        p, c, b = candidate
        if not _feasible(p, c, n):
            continue
        objective = float(np.sum((p - c * qs) ** 2))
        if best is None or objective < best[0]:
            best = (objective, t, p, c, b)

    # Top-n fallback, always feasible
    p = np.concatenate([np.ones(n), np.zeros(N - n)])
    c = qs[:n].sum() / np.sum(qs**2)
    objective = float(np.sum((p - c * qs) ** 2))
    if best is None or objective < best[0]:
        logger.debug("Top-n fallback selected")
        delta = _unsort(np.concatenate([np.zeros(n), np.zeros(N - n)]), order)
        return InclusionSolution(
            p=_unsort(p, order),
            c=float(c),
            t=n + 1,
            objective=objective,
            delta=delta,
            n=n,
            meta={"order": order},
        )

    objective, t, p, c, b = best
    delta = np.zeros(N)
    delta[: t - 1] = 2 * (c * qs[: t - 1] - b - 1)
    logger.debug(f"Inclusion branch t={t}, c={c}, objective={objective}")
    return InclusionSolution(
        p=_unsort(p, order),
        c=float(c),
        t=t,
        objective=objective,
        beta=float(2 * b),
        delta=_unsort(delta, order),
        margin=_margin(qs, p, c, b, t),
        n=n,
        meta={"order": order},
    )


def oracle_active_set(q, n):
    """Exhaustive active-set solution of the inclusion problem.

    Every subset S of at most n indices is clamped to one and the equality
    constrained least-squares problem in (p_F, c) over the remaining indices F is
    solved through its KKT system. When |S| = n the remaining probabilities are
    also tried at zero. The best feasible candidate is returned.

    Args:
        - q (1darray): N importance values, N <= 16.
        - n (int): Budget, 1 <= n < N.

    Returns:
        - solution (InclusionSolution): Global minimum over the enumerated sets.

    """
    q = as_array(q, ndim=1, name="q")
    if q.size > ORACLE_MAX_SIZE:
        raise ArgumentError(
            f"Oracle enumerates subsets, N must be <= {ORACLE_MAX_SIZE}, got {q.size}"
        )
    q, n = _validate(q, n)
    N = q.size
    q2 = np.sum(q**2)

    best = None
    for size in range(n + 1):
        subsets = np.array(list(itertools.combinations(range(N), size)), dtype=int)
        subsets = subsets.reshape(len(subsets), size)
        clamped = np.zeros((len(subsets), N), dtype=bool)
        np.put_along_axis(clamped, subsets, True, axis=1)
        free = np.argsort(clamped, axis=1, kind="stable")[:, : N - size]
        p, c = _kkt_batch(q, q2, clamped, free, n - size)
        if size == n:
            zero_tail = clamped.astype(float)
            p = np.concatenate([p, zero_tail])
            c = np.concatenate([c, (clamped * q).sum(axis=1) / q2])
            clamped = np.concatenate([clamped, clamped])
        ok = (
            (np.abs(p.sum(axis=1) - n) <= SUM_TOL)
            & np.all(p >= -BOX_TOL, axis=1)
            & np.all(p <= 1 + BOX_TOL, axis=1)
            & (c >= 0)
        )
        if not ok.any():
            continue
        objective = np.sum((p - c[:, None] * q) ** 2, axis=1)
        objective[~ok] = np.inf
        ibest = int(np.argmin(objective))
        if best is None or objective[ibest] < best[0]:
            best = (float(objective[ibest]), p[ibest], float(c[ibest]), size)

    objective, p, c, size = best
    return InclusionSolution(p=p, c=c, t=size + 1, objective=objective, n=n)


def _kkt_batch(q, q2, clamped, free, m):
    """Solve the equality constrained least squares for a batch of clamp sets."""
    batch, k = free.shape
    N = q.size
    qf = q[free]
    kkt = np.zeros((batch, k + 2, k + 2))
    rhs = np.zeros((batch, k + 2))
    idx = np.arange(k)
    kkt[:, idx, idx] = 2.0
    kkt[:, idx, k] = -2.0 * qf
    kkt[:, idx, k + 1] = 1.0
    kkt[:, k, idx] = -2.0 * qf
    kkt[:, k, k] = 2.0 * q2
    kkt[:, k + 1, idx] = 1.0
    rhs[:, k] = 2.0 * (clamped * q).sum(axis=1)
    rhs[:, k + 1] = m
    sol = np.linalg.solve(kkt, rhs[..., None])[..., 0]
    p = np.zeros((batch, N))
    p[clamped] = 1.0
    np.put_along_axis(p, free, sol[:, :k], axis=1)
    return p, sol[:, k]


def solver_jacobian(q, n, ste=False):
    """Jacobian dp_i/dq_j of the closed-form solution.

    Free probabilities are differentiated through the 2x2 system of the selected
    branch. Clamped probabilities have zero derivative, or with `ste=True` the
    derivative of their analytic surrogate c q_i - beta/2 (straight-through).

    Args:
        - q (1darray): Importance values.
        - n (int): Budget.
        - ste (bool): Use the straight-through convention for clamped rows.

    Returns:
        - jac (2darray): N x N, rows index p and columns index q.

    """
    q, n = _validate(q, n)
    solution = solve_inclusion(q, n)
    N = q.size
    order, qs = _sorted(q)
    t = solution.t
    jac = np.zeros((N, N))

    if t == n + 1:
        if ste:
            head_sum, q2 = qs[:n].sum(), np.sum(qs**2)
            c = head_sum / q2
            dc = (np.arange(N) < n) / q2 - head_sum * 2 * qs / q2**2
            jac[:n] = c * np.eye(N)[:n] + np.outer(qs[:n], dc)
        full = np.zeros((N, N))
        full[np.ix_(order, order)] = jac
        return full

    if solution.margin < DEGENERATE_TOL:
        ps = solution.p[order]
        free = ps[t - 1 :]
        if free.min() < DEGENERATE_TOL:
            i, constraint = t - 1 + int(np.argmin(free)), "p >= 0"
        elif (1 - free).min() < DEGENERATE_TOL:
            i, constraint = t - 1 + int(np.argmin(1 - free)), "p <= 1"
        else:
            i, constraint = int(np.argmin(solution.delta[order][: t - 1])), "p = 1 release"
        raise DegeneratePointError(
            f"Index {order[i]} is within {DEGENERATE_TOL} of constraint {constraint}",
            index=int(order[i]),
            constraint=constraint,
        )

    c, b = solution.c, solution.beta / 2
    head, tail = qs[: t - 1], qs[t - 1 :]
    in_tail = np.arange(N) >= t - 1
    matrix = np.array([[tail.sum(), -(N - t + 1)], [np.sum(head**2), tail.sum()]])
    # d(matrix)/dq_j (c, b) and d(rhs)/dq_j for every j
    dmat_cb = np.where(
        in_tail,
        np.array([[c], [b]]),
        np.vstack([np.zeros(N), 2 * qs * c]),
    )
    drhs = np.vstack([np.zeros(N), (~in_tail).astype(float)])
    dcb = np.linalg.solve(matrix, drhs - dmat_cb)
    dc, db = dcb
    rows = c * np.eye(N) + np.outer(qs, dc) - db[None, :]
    jac[t - 1 :] = rows[t - 1 :]
    if ste:
        jac[: t - 1] = rows[: t - 1]
    full = np.zeros((N, N))
    full[np.ix_(order, order)] = jac
    return full
