"""Instance generators: lower-bound families, perturbations, random and semi-bandit instances."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .lp import CapacityError, LpSolution, build_primal, solve
from .model import (AtomSum, BernoulliReward, BwkInstance, Deterministic, IndependentBernoulli,
                    InstanceError, Null, ScaledBernoulli, check_best_arm_optimal,
                    check_lb_assumption, make_instance)

MAX_FAMILY = 4096
INDEPENDENCE_TOL = 1e-12


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class InstancePair:
    base: BwkInstance
    twin: BwkInstance
    perturbation_size: float
    relation: str  # "mean-twin" or "eps-perturbation"
    params: dict | None = None

    def max_mean_difference(self) -> float:
        dr = np.abs(self.base.rewards - self.twin.rewards).max()
        dc = np.abs(self.base.consumption - self.twin.consumption).max()
        return float(max(dr, dc))


def make_concrete_family(c_lb: float, eps: float, T: int, *, consumption: str = "bernoulli") -> BwkInstance:
    """Two real arms: ``r = ((1-c)/2, 1-c-eps)``, ``c = (c-eps, 2c)``, ``B = cT``."""
    if not (0.0 < c_lb < 1.0 / 3.0):
        raise ValueError("c_lb must lie in (0, 1/3)")
    if T < 1:
        raise ValueError("T must be positive")
    if not (eps >= c_lb / math.sqrt(T) and eps < c_lb):
        raise ValueError(f"eps must lie in [c_lb/sqrt(T), c_lb) = [{c_lb / math.sqrt(T):.4g}, {c_lb})")
    kind = {"bernoulli": "bernoulli", "deterministic": "deterministic"}.get(consumption)
    if kind is None:
        raise ValueError("consumption must be 'bernoulli' or 'deterministic'")
    rewards = [(1.0 - c_lb) / 2.0, 1.0 - c_lb - eps]
    cons = [[c_lb - eps], [2.0 * c_lb]]
    if kind == "deterministic":
        # rewards stay Bernoulli; only consumption is fixed
        inst = make_instance(rewards, cons, c_lb * T, T)
        arms = tuple(BernoulliReward(r, tuple(c) + (0.0,)) for r, c in zip(rewards, cons)) + (Null(),)
        return BwkInstance(inst.K, inst.d, inst.B, inst.T, arms, inst.null_index, inst.time_index,
                           name=f"concrete(c_lb={c_lb},eps={eps},T={T},det)")
    return make_instance(rewards, cons, c_lb * T, T, name=f"concrete(c_lb={c_lb},eps={eps},T={T})")


def make_general_lb_pair(base: BwkInstance, c_lb: float, *, require_assumption: bool = True) -> InstancePair:
    """Mean-twin ``I`` of ``base`` and its perturbation ``I'``.

    Rewards and A1's consumption become deterministic; A2's consumption is
    ``c(A2) W / (1 - c_lb)`` with one ``W ~ Bernoulli(p)`` shared by all
    non-time resources, ``p = 1 - c_lb`` in ``I`` and ``1 - c_lb - eps`` in
    ``I'``, ``eps = 2 c_lb^2 / sqrt(T)``.
    """
    if base.K != 3:
        raise InstanceError("base must have two real arms plus null")
    if require_assumption:
        rep = check_lb_assumption(base, c_lb)
        if not rep:
            raise ValueError(f"base fails the lower-bound assumption, parts {rep.failed_parts}")
    eps = 2.0 * c_lb ** 2 / math.sqrt(base.T)
    a1, a2 = base.non_null_arms
    r, c = base.rewards, base.consumption

    def vec(a):
        v = [float(c[a, j]) for j in range(base.d)]
        v[base.time_index] = 0.0
        return tuple(v)

    def build(p, tag):
        arms = list(base.arms)
        arms[a1] = Deterministic(float(r[a1]), vec(a1))
        arms[a2] = ScaledBernoulli(float(r[a2]), vec(a2), p, 1.0 - c_lb)
        return BwkInstance(base.K, base.d, base.B, base.T, tuple(arms), base.null_index,
                           base.time_index, name=f"{base.name or 'base'}:{tag}")

    return InstancePair(build(1.0 - c_lb, "I"), build(1.0 - c_lb - eps, "I'"), eps, "mean-twin",
                        {"c_lb": c_lb, "eps": eps})


def make_deterministic_pair(T: int, eps: float) -> InstancePair:
    """``B = T/2``; A1 consumes 1/2 for a Bernoulli(1/4) reward, A2 consumes 1 for Bernoulli(1/2 +- eps/2)."""
    # the lower end is closed so that eps = T^-1/2 exactly is usable
    if not (T ** -0.5 * (1.0 - 1e-12) <= eps < 0.25):
        raise ValueError("eps must lie in [T^-1/2, 1/4)")

    def build(r2, tag):
        arms = (BernoulliReward(0.25, (0.5, 0.0)), BernoulliReward(r2, (1.0, 0.0)), Null())
        return BwkInstance(3, 2, T / 2.0, T, arms, 2, 1, name=f"deterministic(T={T},eps={eps}):{tag}")

    return InstancePair(build(0.5 + eps / 2.0, "I"), build(0.5 - eps / 2.0, "I'"), eps,
                        "eps-perturbation", {"T": T, "eps": eps})


def _with_means(model, r, cvec):
    if isinstance(model, IndependentBernoulli):
        return IndependentBernoulli(r, cvec)
    if isinstance(model, Deterministic):
        return Deterministic(r, cvec)
    if isinstance(model, BernoulliReward):
        return BernoulliReward(r, cvec)
    raise InstanceError(f"cannot move the means of {type(model).__name__}")


def make_d3_perturbed(base: BwkInstance, rng: np.random.Generator, max_tries: int = 100) -> BwkInstance:
    """Shift ``c_j(A_i)`` down by ``zeta1**j`` plus uniform noise on ``[-zeta2, zeta2]``.

    Redraws the noise until the consumption matrix (resources by arms) has
    smallest singular value above ``1e-12``. Perturbed means are clipped to
    [0, 1].
    """
    if base.K != 3 or base.d <= 2:
        raise InstanceError("base must have two real arms plus null and d > 2")
    if base.d > base.K:
        raise InstanceError(f"{base.d} resource vectors over {base.K} arms cannot be independent")
    real = base.non_null_arms
    res = base.resources
    means = [base.rewards[a] for a in real] + [base.consumption[a, j] for a in real for j in res]
    m = min(means)
    root = 1.0 / math.sqrt(base.T)
    zeta1 = min(root, m, 1.0 / math.factorial(base.d) ** 2)
    zeta2 = min(m, root)
    for _ in range(max_tries):
        cons = base.consumption.copy()
        for a in real:
            for p, j in enumerate(res, start=1):
                cons[a, j] = cons[a, j] - zeta1 ** p - rng.uniform(-zeta2, zeta2)
        cons = np.clip(cons, 0.0, 1.0)
        cons[:, base.time_index] = base.time_rate
        cons[base.null_index, res] = 0.0
        if np.linalg.svd(cons.T, compute_uv=False).min() > INDEPENDENCE_TOL and np.linalg.matrix_rank(cons.T) == base.d:
            arms = list(base.arms)
            for a in real:
                v = [float(cons[a, j]) for j in range(base.d)]
                v[base.time_index] = 0.0
                arms[a] = _with_means(arms[a], float(base.rewards[a]), tuple(v))
            return BwkInstance(base.K, base.d, base.B, base.T, tuple(arms), base.null_index,
                               base.time_index, name=f"{base.name or 'base'}:d-perturbed")
    raise GenerationError(f"no linearly independent perturbation in {max_tries} draws")


def random_instance(K: int, d: int, B: float, T: int, rng: np.random.Generator, *,
                    kind: str = "bernoulli") -> BwkInstance:
    """Uniform means for ``K - 1`` real arms and ``d - 1`` non-time resources."""
    if K < 2 or d < 2:
        raise ValueError("need K >= 2 and d >= 2")
    r = rng.random(K - 1)
    c = rng.random((K - 1, d - 1))
    return make_instance(r, c, B, T, kind=kind)


@dataclass(frozen=True)
class CertifiedInstance:
    instance: BwkInstance
    best_arm: int
    lp: LpSolution
    attempts: int


def try_best_arm_optimal(K: int, T: int, B: float, rng: np.random.Generator):
    inst = random_instance(K, 2, B, T, rng)
    sol = solve(build_primal(inst))
    check = check_best_arm_optimal(inst, sol)
    return (inst, sol, check.best_arm) if check else None


def random_best_arm_optimal(K: int, T: int, B: float, rng: np.random.Generator,
                            max_tries: int = 1000) -> CertifiedInstance:
    """Rejection-sample uniform two-resource instances until one is best-arm-optimal.

    ``K`` counts the null arm.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    for i in range(1, max_tries + 1):
        got = try_best_arm_optimal(K, T, B, rng)
        if got is not None:
            inst, sol, best = got
            return CertifiedInstance(inst, best, sol, i)
    raise GenerationError(f"no best-arm-optimal instance in {max_tries} draws")


@dataclass(frozen=True)
class SemiBanditInstance:
    instance: BwkInstance
    family: tuple  # atom sets per arm; the null arm's set is empty
    atom_reward: np.ndarray
    atom_consumption: np.ndarray  # (N, d), time column zero
    N: int
    n: int


def family_from_descriptor(N: int, n: int, descriptor) -> list[tuple]:
    """``"singletons"``, ``"all_subsets"`` (all ``n``-subsets), ``"disjoint_pairs"`` or an explicit list."""
    if descriptor == "singletons":
        fam = [(i,) for i in range(N)]
    elif descriptor == "all_subsets":
        count = math.comb(N, n)
        if count > MAX_FAMILY:
            raise CapacityError(f"{count} subsets exceed the family limit {MAX_FAMILY}")
        fam = list(combinations(range(N), n))
    elif descriptor == "disjoint_pairs":
        fam = [(i, i + 1) for i in range(0, N - 1, 2)]
    elif isinstance(descriptor, (list, tuple)):
        fam = [tuple(sorted(int(a) for a in s)) for s in descriptor]
    else:
        raise ValueError(f"unknown family descriptor {descriptor!r}")
    if len(fam) > MAX_FAMILY:
        raise CapacityError(f"family has {len(fam)} sets; the limit is {MAX_FAMILY}")
    for s in fam:
        if not s or len(s) > n or len(set(s)) != len(s) or min(s) < 0 or max(s) >= N:
            raise ValueError(f"invalid set {s} for N={N}, n={n}")
    return fam


def make_semibandit_instance(N: int, n: int, family, d: int, B: float, T: int,
                             rng: np.random.Generator, *, atom_reward=None,
                             atom_consumption=None) -> SemiBanditInstance:
    """Atoms with Bernoulli outcomes worth ``1/n``; arms are the sets in ``family`` plus null.

    Atom means are drawn uniformly from ``[0, 1/n]`` unless given (reward
    first, then the consumption matrix).
    """
    fam = family_from_descriptor(N, n, family)
    scale = 1.0 / n
    ar = rng.uniform(0.0, scale, N) if atom_reward is None else np.asarray(atom_reward, dtype=float)
    if atom_consumption is None:
        ac = np.zeros((N, d))
        ac[:, : d - 1] = rng.uniform(0.0, scale, (N, d - 1))
    else:
        ac = np.zeros((N, d))
        ac[:, : d - 1] = np.asarray(atom_consumption, dtype=float).reshape(N, d - 1)
    if ar.shape != (N,) or ar.min() < 0 or ar.max() > scale or ac.min() < 0 or ac.max() > scale:
        raise ValueError("atom means must lie in [0, 1/n]")
    arms = [AtomSum(s, tuple(float(ar[a]) for a in s), tuple(tuple(float(v) for v in ac[a]) for a in s), scale)
            for s in fam]
    arms.append(Null())
    inst = BwkInstance(len(arms), d, float(B), int(T), tuple(arms), len(arms) - 1, d - 1,
                       name=f"semibandit(N={N},n={n},F={len(fam)})")
    return SemiBanditInstance(inst, tuple(fam) + ((),), ar, ac, N, n)
