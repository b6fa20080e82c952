"""Linear relaxations of a BwK instance and their duals.

All LPs here share one shape: maximise ``objective @ x`` over distributions
``x`` on arms subject to ``rows @ x <= rhs``. :func:`solve` is a dense simplex
(the compiled kernel in :mod:`bwk.kernels`); :func:`solve_by_vertex_enumeration`
is an exhaustive oracle used to certify it.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import BwkInstance

TOL = 1e-9
SUPPORT_TOL = 1e-7
ETA_CAP = 1.0 - 1e-9


class LpError(Exception):
    pass


class LpInfeasibleError(LpError):
    pass


class LpContractError(LpError):
    """An LP solution was used with a problem it does not solve."""


class LpConsistencyError(LpError):
    """Direct and closed-form Lagrangian gaps disagree."""


class CapacityError(LpError):
    pass


class EtaClampWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class LpProblem:
    objective: np.ndarray  # (K,)
    rows: np.ndarray  # (d, K)
    rhs: np.ndarray  # (d,)
    time_row: int | None = None

    def __post_init__(self):
        obj = np.array(self.objective, dtype=float)
        rows = np.array(self.rows, dtype=float).reshape(-1, obj.shape[0])
        rhs = np.array(self.rhs, dtype=float)
        if rows.shape[0] != rhs.shape[0]:
            raise ValueError("rows and rhs disagree in length")
        if not (np.all(np.isfinite(obj)) and np.all(np.isfinite(rows)) and np.all(np.isfinite(rhs))):
            raise ValueError("LP coefficients must be finite")
        if np.any(rhs < 0):
            raise ValueError("right-hand sides must be nonnegative")
        for a in (obj, rows, rhs):
            a.setflags(write=False)
        object.__setattr__(self, "objective", obj)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "rhs", rhs)

    @property
    def n_arms(self) -> int:
        return self.objective.shape[0]

    def same_as(self, other: "LpProblem") -> bool:
        return (self.objective.shape == other.objective.shape and self.rows.shape == other.rows.shape
                and np.array_equal(self.objective, other.objective)
                and np.array_equal(self.rows, other.rows) and np.array_equal(self.rhs, other.rhs))


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: str
    x: np.ndarray
    value: float
    duals: np.ndarray  # one per row of the problem
    simplex_dual: float
    support: frozenset
    degenerate: bool = False
    alt_optima: bool = False
    problem: LpProblem | None = None
    optimal_vertices: list = field(default_factory=list)
    optimal_duals: list = field(default_factory=list)

    def dual_objective(self) -> float:
        return float(self.problem.rhs @ self.duals + self.simplex_dual)

    def slack(self) -> np.ndarray:
        return self.problem.rhs - self.problem.rows @ self.x

    def complementary_slackness(self) -> np.ndarray:
        return self.duals * self.slack()

    def is_consistent_with(self, problem: LpProblem, tol: float = TOL) -> bool:
        if self.problem is not None and not self.problem.same_as(problem):
            return False
        x = self.x
        if x.shape != problem.objective.shape or np.any(x < -tol) or abs(x.sum() - 1.0) > tol:
            return False
        if np.any(problem.rows @ x > problem.rhs + tol):
            return False
        return abs(problem.objective @ x - self.value) <= tol


def _support(x: np.ndarray) -> frozenset:
    return frozenset(int(a) for a in np.flatnonzero(x > SUPPORT_TOL))


# ---------------------------------------------------------------------------
# construction


def build_primal(instance: BwkInstance) -> LpProblem:
    rate = instance.time_rate
    return LpProblem(instance.rewards.copy(), instance.consumption.T.copy(),
                     np.full(instance.d, rate), instance.time_index)


def build_rescaled(instance: BwkInstance, eta: float) -> LpProblem:
    """Primal LP with every non-time budget rate shrunk to ``(B/T)(1 - eta)``."""
    if not (0.0 <= eta < 1.0):
        raise ValueError(f"eta must lie in [0, 1), got {eta}")
    rate = instance.time_rate
    rhs = np.full(instance.d, rate * (1.0 - eta))
    rhs[instance.time_index] = rate
    return LpProblem(instance.rewards.copy(), instance.consumption.T.copy(), rhs, instance.time_index)


def eta_raw(K: int, d: int, B: float, T: int, log_arg: float | None = None) -> float:
    """Unclamped rescaling ``3 (sqrt(K/B L) + (K/B) L^2)`` with ``L = ln(log_arg)``.

    ``log_arg`` defaults to ``K d T``.
    """
    L = math.log(K * d * T if log_arg is None else log_arg)
    return 3.0 * (math.sqrt(K / B * L) + (K / B) * L * L)


def clamp_eta(eta: float) -> float:
    if eta >= ETA_CAP:
        warnings.warn(f"eta={eta:.4g} clamped to {ETA_CAP}", EtaClampWarning, stacklevel=3)
        return ETA_CAP
    return max(0.0, eta)


def compute_eta(instance: BwkInstance, log_arg: float | None = None) -> float:
    """Default rescaling parameter of the optimistic LP, clamped to ``[0, 1 - 1e-9]``."""
    return clamp_eta(eta_raw(instance.K, instance.d, instance.B, instance.T, log_arg))


def build_optimistic(shape, ucb_rewards, lcb_consumptions, eta: float, *,
                     null_index: int | None = None, time_index: int | None = None) -> LpProblem:
    """Optimistic LP from confidence bounds.

    ``shape`` is ``(K, d, B, T)``; ``lcb_consumptions`` is (d, K). The null
    column is forced to zero reward and zero non-time consumption and the time
    row to ``B/T`` with right-hand side ``B/T``.
    """
    K, d, B, T = shape
    null_index = K - 1 if null_index is None else null_index
    time_index = d - 1 if time_index is None else time_index
    ucb = np.array(ucb_rewards, dtype=float)
    lcb = np.array(lcb_consumptions, dtype=float).reshape(d, K)
    if ucb.shape != (K,):
        raise ValueError("ucb_rewards must have one entry per arm")
    if not (0.0 <= eta < 1.0):
        raise ValueError(f"eta must lie in [0, 1), got {eta}")
    for v in (ucb, lcb):
        if np.any(~np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("confidence bounds must lie in [0, 1]")
    rate = B / T
    ucb[null_index] = 0.0
    lcb[:, null_index] = 0.0
    lcb[time_index, :] = rate
    rhs = np.full(d, rate * (1.0 - eta))
    rhs[time_index] = rate
    return LpProblem(ucb, lcb, rhs, time_index)


# ---------------------------------------------------------------------------
# solving


def solve(problem: LpProblem) -> LpSolution:
    """Optimal primal/dual pair of ``problem`` via the simplex kernel.

    Rows that are constant across arms (the time row) are implied by the
    simplex constraint and are dropped before pivoting; their dual is zero,
    and the simplex-row multiplier carries their share.
    """
    rows, rhs = problem.rows, problem.rhs
    keep = []
    for i in range(rows.shape[0]):
        row = rows[i]
        if np.ptp(row) == 0.0:
            if row[0] > rhs[i] + TOL:
                raise LpInfeasibleError(f"row {i} exceeds its budget for every arm")
            continue
        keep.append(i)
    A = np.ascontiguousarray(rows[keep]) if keep else np.zeros((0, problem.n_arms))
    b = np.ascontiguousarray(rhs[keep])
    status, x, value, y, mu, degenerate, alt, _ = kernels.simplex_solve(
        np.ascontiguousarray(problem.objective), A, b)
    if status == kernels.LP_INFEASIBLE:
        raise LpInfeasibleError("LP is infeasible")
    if status != kernels.LP_OPTIMAL:
        raise LpError("simplex iteration limit reached")
    duals = np.zeros(rows.shape[0])
    duals[keep] = y
    x = np.array(x)
    return LpSolution("optimal", x, float(value), duals, float(mu), _support(x),
                      bool(degenerate), bool(alt), problem)


def solve_by_vertex_enumeration(problem: LpProblem, *, max_arms: int = 12, max_rows: int = 4) -> LpSolution:
    """Enumerate every basis of the standard-form LP and keep the best vertex.

    Independent of :func:`solve`: no pivoting, plain dense linear solves over
    all ``(rows+1)``-subsets of the structural and slack columns. Also lists
    every optimal vertex and the dual of every optimal basis.
    """
    K = problem.n_arms
    m = problem.rows.shape[0]
    if K > max_arms or m > max_rows:
        raise CapacityError(f"vertex enumeration limited to K<={max_arms}, d<={max_rows}")
    M = np.zeros((m + 1, K + m))
    M[:m, :K] = problem.rows
    M[:m, K:] = np.eye(m)
    M[m, :K] = 1.0
    rhs = np.append(problem.rhs, 1.0)
    cost = np.concatenate([problem.objective, np.zeros(m)])

    best = -np.inf
    found = []  # (value, x, y, mu)
    for cols in itertools.combinations(range(K + m), m + 1):
        Bm = M[:, cols]
        if abs(np.linalg.det(Bm)) < 1e-12:
            continue
        z = np.linalg.solve(Bm, rhs)
        if np.any(z < -1e-10):
            continue
        full = np.zeros(K + m)
        full[list(cols)] = np.maximum(z, 0.0)
        x = full[:K]
        val = float(cost @ full)
        dual = np.linalg.solve(Bm.T, cost[list(cols)])
        reduced = dual @ M - cost
        dual_ok = bool(np.all(reduced >= -1e-9))
        found.append((val, x, dual[:m], float(dual[m]), dual_ok))
        best = max(best, val)
    if not found:
        raise LpInfeasibleError("no basic feasible solution")

    vertices, duals = [], []
    pick = None
    for val, x, y, mu, dual_ok in found:
        if val < best - TOL:
            continue
        if not any(np.allclose(x, v, atol=TOL, rtol=0) for v in vertices):
            vertices.append(x)
        if dual_ok:
            if not any(np.allclose(y, u[0], atol=TOL, rtol=0) and abs(mu - u[1]) <= TOL for u in duals):
                duals.append((y, mu))
            if pick is None:
                pick = (val, x, y, mu)
    if pick is None:  # pragma: no cover - an optimal basis is always dual feasible
        val, x, y, mu, _ = max(found, key=lambda f: f[0])
        pick = (val, x, y, mu)
    val, x, y, mu = pick
    return LpSolution("optimal", x.copy(), float(val), y.copy(), mu, _support(x),
                      len(duals) > 1, len(vertices) > 1, problem, vertices, duals)


# ---------------------------------------------------------------------------
# Lagrangian quantities


def lagrange_multipliers(instance: BwkInstance, lp: LpSolution) -> np.ndarray:
    """Multipliers ``lambda`` of the Lagrangian for the instance's primal LP.

    ``lambda_j = (B/T) y_j`` for row duals ``y``; the simplex-row multiplier is
    folded into the time coordinate, which leaves the Lagrangian unchanged
    (time consumption is exactly ``B/T``) and makes ``sum(lambda) == OPT_LP``.
    """
    lam = instance.time_rate * np.asarray(lp.duals, dtype=float)
    lam[instance.time_index] += lp.simplex_dual
    return lam


def lagrangian(instance: BwkInstance, x, lam) -> float:
    """``r(x) + sum_j lam_j (1 - (T/B) c_j(x))``; ``x`` a distribution or arm index."""
    if np.isscalar(x):
        e = np.zeros(instance.K)
        e[int(x)] = 1.0
        x = e
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("multipliers must be nonnegative")
    usage = instance.consumption.T @ x
    return float(instance.rewards @ x + lam @ (1.0 - usage / instance.time_rate))


def _check_lp_for(instance: BwkInstance, lp: LpSolution) -> None:
    if lp.status != "optimal":
        raise LpContractError("LP solution is not optimal")
    if lp.problem is not None and not lp.problem.same_as(build_primal(instance)):
        raise LpContractError("LP solution was not computed from this instance's primal LP")


def lagrangian_gap(instance: BwkInstance, lp: LpSolution, arm: int) -> float:
    """``OPT_LP - L(arm, lambda*)``, cross-checked against ``(T/B) lambda* . c(arm) - r(arm)``."""
    _check_lp_for(instance, lp)
    if not (0 <= arm < instance.K):
        raise IndexError(f"arm {arm} out of range")
    lam = lagrange_multipliers(instance, lp)
    direct = lp.value - lagrangian(instance, arm, lam)
    closed = float(lam @ instance.consumption[arm]) / instance.time_rate - instance.rewards[arm]
    if abs(direct - closed) > TOL:
        raise LpConsistencyError(f"gap mismatch for arm {arm}: direct {direct!r} vs closed {closed!r}"
                                 + (" (degenerate dual)" if lp.degenerate else ""))
    return direct


def lagrangian_gaps(instance: BwkInstance, lp: LpSolution) -> np.ndarray:
    return np.array([lagrangian_gap(instance, lp, a) for a in range(instance.K)])


def best_arm(instance: BwkInstance, lp: LpSolution) -> int:
    """Non-null arm carrying the most LP weight (lowest index on ties)."""
    arms = instance.non_null_arms
    return max(arms, key=lambda a: (lp.x[a], -a))


def min_lagrangian_gap(instance: BwkInstance, lp: LpSolution, best: int | None = None) -> float:
    """Smallest Lagrangian gap over arms other than the best arm and null."""
    best = best_arm(instance, lp) if best is None else best
    gaps = lagrangian_gaps(instance, lp)
    others = [gaps[a] for a in instance.non_null_arms if a != best]
    return float(min(others)) if others else math.inf


def gap_lower_bound(instance: BwkInstance, lp: LpSolution, arm: int, opt_fd_proxy: float) -> float:
    """Multiplier-free lower bound on the Lagrangian gap of ``arm`` (two-resource case).

    With ``a*`` the best arm: ``opt/T - r(a)`` when ``c(a*) < B/T`` and
    ``opt * c(a) / B - r(a)`` when ``c(a*) > B/T``, where ``opt`` is
    ``opt_fd_proxy``.
    """
    if instance.d != 2:
        raise ValueError("gap_lower_bound needs d = 2")
    best = best_arm(instance, lp)
    j = instance.resources[0]
    c_best = instance.consumption[best, j]
    rate = instance.time_rate
    if abs(c_best - rate) <= TOL:
        raise ValueError("c(a*) equals B/T: the case split is undefined")
    if c_best < rate:
        bound = opt_fd_proxy / instance.T - instance.rewards[arm]
    else:
        bound = opt_fd_proxy * instance.consumption[arm, j] / instance.B - instance.rewards[arm]
    if opt_fd_proxy <= instance.T * lp.value + TOL:
        g = lagrangian_gap(instance, lp, arm)
        if bound > g + TOL:
            raise LpConsistencyError(f"lower bound {bound} exceeds gap {g} for arm {arm}")
    return float(bound)


@dataclass(frozen=True)
class LpGap:
    value: float
    super_optimal: bool

    def __float__(self) -> float:
        return self.value


def lp_value_of(instance: BwkInstance, x) -> float:
    """``V(x) = (B/T) r(x) / max_j c_j(x)`` (feasibility not required)."""
    x = np.asarray(x, dtype=float)
    return instance.time_rate * float(instance.rewards @ x) / float((instance.consumption.T @ x).max())


def lp_gap(instance: BwkInstance, x, opt_lp: float | None = None) -> LpGap:
    if opt_lp is None:
        opt_lp = solve(build_primal(instance)).value
    g = opt_lp - lp_value_of(instance, x)
    return LpGap(float(g), g < -TOL)


# ---------------------------------------------------------------------------
# sensitivity


@dataclass
class SensitivityResult:
    support_preserved: bool
    perturbed_support: frozenset
    consistent_with_theorem: bool
    deltas: np.ndarray
    gaps: np.ndarray
    best_arm: int


def sensitivity_trial(instance: BwkInstance, lp: LpSolution, deltas, rng: np.random.Generator, *,
                      eta: float = 0.0, best: int | None = None, check: bool = True) -> SensitivityResult:
    """Re-solve the rescaled LP after an optimistic random perturbation.

    Each non-null arm's reward rises by ``U(0, delta)`` and each non-time
    consumption falls by ``U(0, delta)`` (clipped to [0, 1]). The support is
    preserved when the only non-null arm left is the best arm. The theorem
    check passes when every other non-null arm in the new support had
    ``delta(a) > G_LAG(a)``.
    """
    from .model import check_best_arm_optimal

    if instance.d != 2:
        raise ValueError("sensitivity trials need d = 2")
    if best is None:
        if check:
            cls = check_best_arm_optimal(instance, lp)
            if not cls:
                raise ValueError(f"instance is not best-arm-optimal (violated {cls.violated})")
            best = cls.best_arm
        else:
            best = best_arm(instance, lp)
    deltas = np.asarray(deltas, dtype=float)
    if deltas.shape != (instance.K,) or np.any(deltas < 0):
        raise ValueError("deltas must be K nonnegative numbers")
    gaps = lagrangian_gaps(instance, lp)
    problem = build_rescaled(instance, eta)
    obj = problem.objective.copy()
    rows = problem.rows.copy()
    for a in range(instance.K):
        if a == instance.null_index:
            continue
        obj[a] = min(1.0, obj[a] + deltas[a] * rng.random())
        for j in instance.resources:
            rows[j, a] = max(0.0, rows[j, a] - deltas[a] * rng.random())
    sol = solve(LpProblem(obj, rows, problem.rhs, problem.time_row))
    others = [a for a in sol.support if a not in (best, instance.null_index)]
    preserved = not others and best in sol.support
    consistent = all(deltas[a] > gaps[a] for a in others)
    return SensitivityResult(preserved, sol.support, consistent, deltas, gaps, best)
