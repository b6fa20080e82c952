"""Policies: UcbBwK, PrunedUcbBwK, fixed baselines, and the radius-provider reduction.

A policy is driven by the simulator through two calls per round:
``choose(rng)`` returns a :class:`Decision` (the distribution emitted, the
arm drawn from it, oracle calls spent, optimistic LP value), and
``update(arm, outcome)`` feeds the observed :class:`OutcomeVector` back.

Random draws are taken from the simulator's generator in a fixed order (one
uniform for the arm, two for a pruned round with null mass) so that the
Python path and the fused kernel in :mod:`bwk.kernels` produce identical
traces.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import kernels
from .confidence import ConfidenceState, c_rad, f_rad_vec
from .lp import CapacityError, LpError, build_primal, clamp_eta, eta_raw, solve
from .model import BwkInstance, OutcomeVector

ORACLE_ALPHA = 10.0
MAX_FAMILY = 4096


@dataclass
class Decision:
    x: np.ndarray
    arm: int
    calls: int = 1
    lp_value: float = float("nan")


class Policy:
    name = "policy"

    def choose(self, rng: np.random.Generator) -> Decision:
        x = self.distribution()
        return Decision(x, int(kernels.sample_index(x, rng.random())))

    def distribution(self) -> np.ndarray:
        raise NotImplementedError

    def update(self, arm: int, outcome: OutcomeVector) -> None:
        pass

    def radii(self):
        """Per-arm radii to record in the trace; ``None`` defers to the simulator."""
        return None

    def fused_params(self):
        """Arguments for the compiled loop, or ``None`` if this policy has no fused path."""
        return None


def _check_distribution(x, K: int) -> np.ndarray:
    x = np.array(x, dtype=float)
    if x.shape != (K,) or np.any(x < 0) or abs(x.sum() - 1.0) > 1e-12:
        raise ValueError("x must be a distribution over the K arms")
    return x


class FixedDistributionPolicy(Policy):
    name = "fixed_distribution"

    def __init__(self, instance: BwkInstance, x):
        self.x = _check_distribution(x, instance.K)
        self.x.setflags(write=False)

    def distribution(self):
        return self.x

    def fused_params(self):
        return {"eta": None, "pruned": False, "oracle_cap": 0, "fixed_x": np.ascontiguousarray(self.x)}


def fixed_distribution_policy(instance: BwkInstance, x) -> Policy:
    return FixedDistributionPolicy(instance, x)


def fixed_arm_policy(instance: BwkInstance, arm: int) -> Policy:
    if not (0 <= arm < instance.K):
        raise IndexError(f"arm {arm} out of range")
    x = np.zeros(instance.K)
    x[arm] = 1.0
    p = FixedDistributionPolicy(instance, x)
    p.name = "fixed_arm"
    return p


def lp_optimal_policy(instance: BwkInstance) -> Policy:
    """Plays the primal LP optimum ``X*`` every round (the benchmark's fixed distribution)."""
    x = np.clip(solve(build_primal(instance)).x, 0.0, None)
    p = FixedDistributionPolicy(instance, x / x.sum())
    p.name = "lp_optimal"
    return p


# ---------------------------------------------------------------------------
# radius providers


class FormalRadiusProvider:
    """Per-arm radii plus empirical means; bounds are ``mean +/- radius`` clipped to [0, 1]."""

    beta = float("nan")

    def __init__(self, instance: BwkInstance):
        self.K, self.d = instance.K, instance.d
        self.null_index, self.time_index = instance.null_index, instance.time_index
        self.time_rate = instance.time_rate

    def update(self, arm: int, outcome: OutcomeVector) -> None:
        raise NotImplementedError

    def observe_null(self, n: int) -> None:
        """``n`` extra null draws (no information)."""

    def radii(self) -> np.ndarray:
        raise NotImplementedError

    def means(self):
        raise NotImplementedError

    def bounds(self):
        rad = self.radii()
        r_hat, c_hat = self.means()
        ucb = np.minimum(1.0, r_hat + rad)
        lcb = np.maximum(0.0, c_hat - rad[:, None])
        return self._fix(ucb, lcb)

    def _fix(self, ucb, lcb):
        ucb[self.null_index] = 0.0
        lcb[self.null_index] = 0.0
        lcb[:, self.time_index] = self.time_rate
        return ucb, lcb


class DefaultRadiusProvider(FormalRadiusProvider):
    """Per-arm statistics; bounds use the per-quantity radius ``f_rad(mean, N)``.

    Its ``radii`` are the uniform ``f_rad(1, N)`` with ``beta = K C_rad``.
    """

    def __init__(self, instance: BwkInstance):
        super().__init__(instance)
        self.state = ConfidenceState.for_instance(instance)
        self.beta = instance.K * self.state.c

    def update(self, arm, outcome):
        self.state.update(arm, outcome.reward, outcome.consumption)

    def observe_null(self, n):
        self.state.counts[self.null_index] += n

    def radii(self):
        return kernels.uniform_radii(self.state.counts, self.state.c, self.null_index)

    def means(self):
        return self.state.means()

    def bounds(self):
        s = self.state
        return kernels.optimistic_bounds(s.counts, s.reward_sums, s.cons_sums, s.c,
                                         self.null_index, self.time_index, self.time_rate)


class ZeroRadiusProvider(FormalRadiusProvider):
    """Knows the true means: zero radii, bounds equal the means."""

    beta = 0.0

    def __init__(self, instance: BwkInstance):
        super().__init__(instance)
        self._r = instance.rewards.copy()
        self._c = instance.consumption.copy()

    def update(self, arm, outcome):
        pass

    def radii(self):
        return np.zeros(self.K)

    def means(self):
        return self._r.copy(), self._c.copy()


class SemiBanditRadiusProvider(FormalRadiusProvider):
    """Per-atom statistics for arms that are subsets of a ground set.

    Each atom's outcomes lie in ``[0, 1/n]``; the radius of a set is the sum of
    its atoms' ``f_rad(1, N_atom) / n``, capped at 1. Bounds sum the atoms'
    empirical-mean radii, which reduces to the default per-arm bounds for a
    family of singletons with ``n = 1``. Needs per-atom feedback
    (``OutcomeVector.atom_rewards``).
    """

    def __init__(self, instance: BwkInstance, family, n_atoms: int, n: int):
        super().__init__(instance)
        if len(family) > MAX_FAMILY:
            raise CapacityError(f"family has {len(family)} sets; the limit is {MAX_FAMILY}")
        self.family = [tuple(int(a) for a in s) for s in family]
        if len(self.family) != instance.K:
            raise ValueError("family must list one atom set per arm (empty set for null)")
        if any(len(s) > n for s in self.family):
            raise ValueError(f"sets may hold at most n={n} atoms")
        self.n = n
        self.n_atoms = n_atoms
        self.c = c_rad(instance.K, instance.d, instance.T)
        self.beta = n * self.c
        self.counts = np.zeros(n_atoms, dtype=np.int64)
        self.r_sums = np.zeros(n_atoms)
        self.c_sums = np.zeros((n_atoms, instance.d))
        self._members = np.zeros((instance.K, n_atoms))
        for a, s in enumerate(self.family):
            self._members[a, list(s)] = 1.0

    def update(self, arm, outcome):
        atoms = self.family[arm]
        if not atoms:
            return
        if outcome.atom_rewards is None:
            raise ValueError("semi-bandit provider needs per-atom feedback")
        for p, at in enumerate(atoms):
            self.counts[at] += 1
            self.r_sums[at] += outcome.atom_rewards[p]
            self.c_sums[at] += outcome.atom_consumption[p]

    def atom_radii(self) -> np.ndarray:
        n = np.maximum(self.counts, 1).astype(float)
        return np.minimum(1.0, np.sqrt(self.c / n) + self.c / n) / self.n

    def radii(self):
        return np.minimum(1.0, self._members @ self.atom_radii())

    def means(self):
        n = np.maximum(self.counts, 1)
        return self._members @ (self.r_sums / n), self._members @ (self.c_sums / n[:, None])

    def bounds(self):
        # per-atom empirical radii f_rad(n * mean, N) / n, summed over the set;
        # each is at most the atom's share of radii(), so the formal contract holds
        n = self.n
        nn = np.maximum(self.counts, 1).astype(float)
        r_hat = self.r_sums / nn
        c_hat = self.c_sums / nn[:, None]
        up = r_hat + f_rad_vec(n * r_hat, nn, self.c) / n
        down = c_hat - f_rad_vec(n * c_hat, nn[:, None], self.c) / n
        ucb = np.clip(self._members @ up, 0.0, 1.0)
        lcb = np.clip(self._members @ down, 0.0, 1.0)
        return self._fix(ucb, lcb)


# ---------------------------------------------------------------------------
# UCB policies


def _null_mass_warning(eta: float) -> None:
    if eta > 0.5:
        warnings.warn(f"eta={eta:.3g} exceeds 1/2; the log-regret guarantee does not apply",
                      RuntimeWarning, stacklevel=3)


class UcbBwK(Policy):
    """Solves the optimistic LP each round and plays its solution."""

    name = "ucb_bwk"

    def __init__(self, instance: BwkInstance, eta: float | None = None, provider=None):
        self.instance = instance
        self.provider = DefaultRadiusProvider(instance) if provider is None else provider
        if eta is None:
            eta = clamp_eta(eta_raw(instance.K, instance.d, instance.B, instance.T))
        if not (0.0 <= eta < 1.0):
            raise ValueError(f"eta must lie in [0, 1), got {eta}")
        self.eta = float(eta)
        self.eta_violated = self.eta > 0.5
        if self.eta_violated:
            _null_mass_warning(self.eta)
        self._rows = [j for j in range(instance.d) if j != instance.time_index]
        self._rhs = np.full(len(self._rows), instance.time_rate * (1.0 - self.eta))
        self.last_value = float("nan")

    def solve_optimistic(self):
        ucb, lcb = self.provider.bounds()
        A = np.ascontiguousarray(lcb[:, self._rows].T)
        status, x, val, *_ = kernels.simplex_solve(ucb, A, self._rhs)
        if status != kernels.LP_OPTIMAL:
            raise LpError("optimistic LP failed; the null column should keep it feasible")
        self.last_value = float(val)
        return x, float(val)

    def distribution(self):
        return self.solve_optimistic()[0]

    def choose(self, rng):
        x, val = self.solve_optimistic()
        return Decision(x, int(kernels.sample_index(x, rng.random())), 1, val)

    def update(self, arm, outcome):
        self.provider.update(arm, outcome)

    def radii(self):
        return self.provider.radii()

    def fused_params(self):
        if type(self.provider) is not DefaultRadiusProvider:
            return None
        return {"eta": self.eta, "pruned": False, "oracle_cap": 0}


def oracle_cap(T: int, alpha: float = ORACLE_ALPHA) -> int:
    return int(math.ceil(alpha * T * T * math.log(max(T, 2))))


class PrunedUcbBwK(Policy):
    """Calls an inner UcbBwK until it draws a non-null arm.

    The inner LP does not change across null draws, so the number of extra
    null calls is geometric; it is drawn with one uniform and the non-null arm
    is then drawn from the conditional distribution. Once the oracle budget
    ``cap`` is exhausted the policy plays null for good.
    """

    name = "pruned_ucb_bwk"

    def __init__(self, instance: BwkInstance, eta: float | None = None, provider=None,
                 cap: int | None = None, alpha: float = ORACLE_ALPHA):
        self.inner = UcbBwK(instance, eta, provider)
        self.instance = instance
        self.cap = oracle_cap(instance.T, alpha) if cap is None else int(cap)
        self.total_calls = 0
        self.capped = False

    @property
    def eta(self):
        return self.inner.eta

    def _null_decision(self, calls):
        x = np.zeros(self.instance.K)
        x[self.instance.null_index] = 1.0
        return Decision(x, self.instance.null_index, calls, 0.0)

    def choose(self, rng):
        null = self.instance.null_index
        if self.capped:
            return self._null_decision(0)
        xlp, val = self.inner.solve_optimistic()
        p_null = xlp[null]
        p_real = 1.0 - p_null
        if p_real <= 1e-15:
            calls = self.cap - self.total_calls
            self.total_calls = self.cap
            self.capped = True
            warnings.warn("oracle-call cap reached", RuntimeWarning, stacklevel=2)
            return Decision(self._null_decision(calls).x, null, calls, val)
        extra = math.floor(math.log1p(-rng.random()) / math.log(p_null)) if p_null > 0.0 else 0
        if self.total_calls + extra + 1 > self.cap:
            calls = self.cap - self.total_calls
            self.total_calls = self.cap
            self.capped = True
            warnings.warn("oracle-call cap reached", RuntimeWarning, stacklevel=2)
            return Decision(self._null_decision(calls).x, null, calls, val)
        cond = xlp.copy()
        cond[null] = 0.0
        cond = cond / p_real
        arm = int(kernels.sample_index(cond, rng.random()))
        self.inner.provider.observe_null(int(extra))
        self.total_calls += int(extra) + 1
        return Decision(cond, arm, int(extra) + 1, val)

    def update(self, arm, outcome):
        self.inner.update(arm, outcome)

    def radii(self):
        return self.inner.radii()

    def fused_params(self):
        if type(self.inner.provider) is not DefaultRadiusProvider:
            return None
        return {"eta": self.inner.eta, "pruned": True, "oracle_cap": self.cap}


def reduced_eta(beta: float, B: float, T: int) -> float:
    """Rescaling ``(2/B) sqrt(beta T)`` for a provider with parameter ``beta``."""
    return clamp_eta(2.0 / B * math.sqrt(beta * T))


def reduced_ucb_bwk(instance: BwkInstance, provider: FormalRadiusProvider,
                    eta: float | None = None) -> UcbBwK:
    """UcbBwK whose optimistic bounds come from ``provider``."""
    if eta is None:
        eta = reduced_eta(provider.beta, instance.B, instance.T)
    p = UcbBwK(instance, eta, provider)
    p.name = "reduced_ucb_bwk"
    return p


def all_subsets(n_atoms: int, size: int) -> list[tuple]:
    return list(combinations(range(n_atoms), size))


# ---------------------------------------------------------------------------


POLICY_NAMES = ("ucb_bwk", "pruned_ucb_bwk", "fixed_distribution", "fixed_arm", "fixed_null",
                "lp_optimal")


def make_policy(name: str, params: dict | None, instance: BwkInstance) -> Policy:
    """Build a policy from its config name and parameter map."""
    params = dict(params or {})
    eta = params.pop("eta", None)
    if name == "ucb_bwk":
        pol = UcbBwK(instance, eta)
    elif name == "pruned_ucb_bwk":
        pol = PrunedUcbBwK(instance, eta, cap=params.pop("oracle_cap", None),
                           alpha=params.pop("alpha", ORACLE_ALPHA))
    elif name == "fixed_distribution":
        pol = fixed_distribution_policy(instance, params.pop("x"))
    elif name == "fixed_arm":
        pol = fixed_arm_policy(instance, int(params.pop("arm")))
    elif name == "fixed_null":
        pol = fixed_arm_policy(instance, instance.null_index)
    elif name == "lp_optimal":
        pol = lp_optimal_policy(instance)
    else:
        raise ValueError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")
    if params:
        raise ValueError(f"unused parameters for {name}: {sorted(params)}")
    return pol
