"""Empirical statistics, confidence radii and bounds, and confidence sums."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import BwkInstance


def c_rad(K: int, d: int, T: int) -> float:
    if min(K, d, T) < 1:
        raise ValueError("K, d and T must be at least 1")
    return 3.0 * math.log(K * d * T)


def f_rad(mu_hat: float, n: int, c: float) -> float:
    """``min(1, sqrt(c mu / max(1,n)) + c / max(1,n))``."""
    return float(kernels.f_rad(float(mu_hat), int(n), float(c)))


@dataclass
class ConfidenceState:
    K: int
    d: int
    B: float
    T: int
    null_index: int
    time_index: int
    counts: np.ndarray = field(init=False)
    reward_sums: np.ndarray = field(init=False)
    cons_sums: np.ndarray = field(init=False)
    t: int = field(init=False, default=0)
    c: float = field(init=False)

    def __post_init__(self):
        self.counts = np.zeros(self.K, dtype=np.int64)
        self.reward_sums = np.zeros(self.K)
        self.cons_sums = np.zeros((self.K, self.d))
        self.c = c_rad(self.K, self.d, self.T)

    @classmethod
    def for_instance(cls, instance: BwkInstance) -> "ConfidenceState":
        return cls(instance.K, instance.d, instance.B, instance.T,
                   instance.null_index, instance.time_index)

    @property
    def time_rate(self) -> float:
        return self.B / self.T

    def update(self, arm: int, reward: float, consumption) -> None:
        self.counts[arm] += 1
        self.reward_sums[arm] += reward
        self.cons_sums[arm] += consumption
        self.t += 1

    def means(self):
        n = np.maximum(self.counts, 1)
        return self.reward_sums / n, self.cons_sums / n[:, None]

    def snapshot(self) -> "ConfidenceState":
        s = ConfidenceState(self.K, self.d, self.B, self.T, self.null_index, self.time_index)
        s.counts = self.counts.copy()
        s.reward_sums = self.reward_sums.copy()
        s.cons_sums = self.cons_sums.copy()
        s.t = self.t
        return s


def radius(state: ConfidenceState, arm: int) -> float:
    if arm == state.null_index:
        return 0.0
    return f_rad(1.0, state.counts[arm], state.c)


def radii(state: ConfidenceState) -> np.ndarray:
    return kernels.uniform_radii(state.counts, state.c, state.null_index)


def all_bounds(state: ConfidenceState):
    """Per-arm reward UCBs (K,) and consumption LCBs (K, d)."""
    return kernels.optimistic_bounds(state.counts, state.reward_sums, state.cons_sums, state.c,
                                     state.null_index, state.time_index, state.time_rate)


def bounds(state: ConfidenceState, arm: int) -> dict:
    ucb, lcb = all_bounds(state)
    return {"reward_ucb": float(ucb[arm]), "consumption_lcb": lcb[arm].copy()}


def clean_event_holds(state: ConfidenceState, instance: BwkInstance) -> bool:
    ucb, lcb = all_bounds(state)
    return bool(kernels.clean_event_flag(ucb, lcb, radii(state), instance.rewards,
                                         instance.consumption, instance.null_index,
                                         instance.time_index))


def _round_mask(trace, rounds) -> np.ndarray:
    n = trace.n_rounds
    if rounds is None:
        return np.ones(n, dtype=bool)
    idx = np.asarray(sorted(rounds), dtype=np.int64)
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise ValueError("rounds outside the trace")
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    return mask


def action_radii(trace) -> np.ndarray:
    """``Rad_t(a_t)`` per recorded round."""
    return trace.radii[np.arange(trace.n_rounds), trace.arms]


def distribution_radii(trace) -> np.ndarray:
    """``Rad_t(X_t) = sum_a X_t(a) Rad_t(a)`` per recorded round."""
    return np.einsum("tk,tk->t", trace.xs, trace.radii)


def action_confidence_sum(trace, rounds=None) -> float:
    """Sum of ``Rad_t(a_t)`` over ``rounds`` (0-based indices; ``None`` means all)."""
    return float(action_radii(trace)[_round_mask(trace, rounds)].sum())


def distribution_confidence_sum(trace, rounds=None) -> float:
    return float(distribution_radii(trace)[_round_mask(trace, rounds)].sum())


def action_sum_bound(K: int, n_rounds: int, c: float, const: float = 3.0) -> float:
    """``const (sqrt(K |S| C) + K ln|S| C)``: the deterministic action-sum bound."""
    if n_rounds <= 0:
        return 0.0
    return const * (math.sqrt(K * n_rounds * c) + K * math.log(n_rounds) * c)


def count_large_radius_rounds(trace, theta: float, arm: int | None = None) -> int:
    """Rounds with ``Rad_t(X_t) >= theta``, or with ``a_t == arm`` and ``Rad_t(arm) >= theta``."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    if arm is None:
        return int(np.count_nonzero(distribution_radii(trace) >= theta))
    chosen = trace.arms == arm
    return int(np.count_nonzero(chosen & (trace.radii[:, arm] >= theta)))


def per_arm_count_bound(theta: float, c: float) -> int:
    """Pulls of one arm with radius ``>= theta`` can never exceed this."""
    return math.ceil(4.0 * c / theta ** 2) + 1


def f_rad_vec(mu, n, c):
    """Elementwise :func:`f_rad`, same operation order as the scalar kernel."""
    m = np.maximum(n, 1).astype(float)
    return np.minimum(np.sqrt(c * np.maximum(mu, 0.0) / m) + c / m, 1.0)


def event_series(trace):
    """Per-round ``(strict, bracketing)`` flags recomputed from the trace.

    ``strict`` is the event checked by :func:`clean_event_holds` (bounds within
    ``Rad_t`` of the truth, optimistic side). ``bracketing`` is the weaker
    two-sided event ``r in [r^-, r^+]`` and ``c_j in [c_j^-, c_j^+]`` for the
    per-quantity bounds. Both use statistics from rounds before ``t``.
    """
    inst = trace.instance
    n, K = trace.n_rounds, inst.K
    real = [a for a in range(K) if a != inst.null_index]
    res = list(inst.resources)
    c = c_rad(inst.K, inst.d, inst.T)
    onehot = np.zeros((n, K))
    onehot[np.arange(n), trace.arms] = 1.0
    # statistics strictly before each round
    counts = np.vstack([np.zeros(K), np.cumsum(onehot, axis=0)[:-1]])
    rsum = np.vstack([np.zeros(K), np.cumsum(onehot * trace.rewards[:, None], axis=0)[:-1]])
    strict = np.ones(n, dtype=bool)
    bracket = np.ones(n, dtype=bool)
    tol = 1e-12
    rad = f_rad_vec(1.0, counts[:, real], c)

    def check(mean, true, width, sign):
        hi = np.clip(mean + width, 0.0, 1.0)
        lo = np.clip(mean - width, 0.0, 1.0)
        opt = hi if sign > 0 else lo
        gap = (opt - true) * sign
        s = np.all((gap >= -tol) & (gap <= rad + tol), axis=1)
        b = np.all((lo <= true + tol) & (true <= hi + tol), axis=1)
        return s, b

    nn = np.maximum(counts[:, real], 1)
    r_hat = rsum[:, real] / nn
    s, b = check(r_hat, inst.rewards[real], f_rad_vec(r_hat, counts[:, real], c), +1)
    strict &= s
    bracket &= b
    for j in res:
        csum = np.vstack([np.zeros(K), np.cumsum(onehot * trace.consumption[:, j][:, None], axis=0)[:-1]])
        c_hat = csum[:, real] / nn
        s, b = check(c_hat, inst.consumption[real, j], f_rad_vec(c_hat, counts[:, real], c), -1)
        strict &= s
        bracket &= b
    return strict, bracket
