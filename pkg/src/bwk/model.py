"""Problem instances for bandits with knapsacks.

An instance has ``K`` arms (one of them the null arm) and ``d`` resources (one
of them time), a common budget ``B`` and a horizon ``T``. Every arm consumes
exactly ``B/T`` of the time resource per round.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import kernels

SCHEMA_VERSION = 1
TOL = 1e-9


class InstanceError(ValueError):
    """Invalid instance description."""


# ---------------------------------------------------------------------------
# outcome models


@dataclass(frozen=True)
class OutcomeVector:
    reward: float
    consumption: np.ndarray
    # per-atom detail for semi-bandit arms; None otherwise
    atom_rewards: np.ndarray | None = None
    atom_consumption: np.ndarray | None = None


@dataclass(frozen=True)
class IndependentBernoulli:
    """Reward and each non-time consumption are independent Bernoulli draws."""

    reward_mean: float
    consumption_means: tuple

    kind = "independent_bernoulli"


@dataclass(frozen=True)
class BernoulliReward:
    """Bernoulli reward; deterministic consumption."""

    reward_mean: float
    consumption: tuple

    kind = "bernoulli_reward"


@dataclass(frozen=True)
class Deterministic:
    reward: float
    consumption: tuple

    kind = "deterministic"


@dataclass(frozen=True)
class ScaledBernoulli:
    """Deterministic reward; consumption ``base * W / divisor`` with one shared ``W``.

    ``W ~ Bernoulli(scale_prob)`` is drawn once per round and scales every
    non-time resource together.
    """

    reward: float
    base_consumption: tuple
    scale_prob: float
    divisor: float

    kind = "scaled_bernoulli"


@dataclass(frozen=True)
class Null:
    kind = "null"


@dataclass(frozen=True)
class AtomSum:
    """Sum of independent atoms, each worth ``0`` or ``scale`` per quantity.

    Used for semi-bandit arms: atom ``i`` has reward mean ``atom_reward[i]`` and
    consumption means ``atom_consumption[i]``, all within ``[0, scale]``.
    """

    atoms: tuple
    atom_reward: tuple
    atom_consumption: tuple
    scale: float

    kind = "atom_sum"


OutcomeModel = Union[IndependentBernoulli, BernoulliReward, Deterministic, ScaledBernoulli, Null, AtomSum]


def _model_means(model, d: int, time_index: int, time_rate: float):
    if isinstance(model, Null):
        r, c = 0.0, [0.0] * d
    elif isinstance(model, Deterministic):
        r, c = model.reward, list(model.consumption)
    elif isinstance(model, IndependentBernoulli):
        r, c = model.reward_mean, list(model.consumption_means)
    elif isinstance(model, BernoulliReward):
        r, c = model.reward_mean, list(model.consumption)
    elif isinstance(model, ScaledBernoulli):
        r = model.reward
        c = [b * model.scale_prob / model.divisor for b in model.base_consumption]
    elif isinstance(model, AtomSum):
        r = sum(model.atom_reward)
        c = [sum(col) for col in zip(*model.atom_consumption)] if model.atom_consumption else [0.0] * d
    else:
        raise InstanceError(f"unknown outcome model {model!r}")
    c = [float(v) for v in c]
    if len(c) != d:
        raise InstanceError(f"consumption vector has length {len(c)}, expected {d}")
    c[time_index] = time_rate
    return float(r), c


# ---------------------------------------------------------------------------
# instance


@dataclass(frozen=True, eq=False)
class BwkInstance:
    K: int
    d: int
    B: float
    T: int
    arms: tuple
    null_index: int
    time_index: int
    name: str = ""
    _r: np.ndarray = field(init=False, repr=False)
    _c: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(self.arms))
        if len(self.arms) != self.K:
            raise InstanceError(f"expected {self.K} arms, got {len(self.arms)}")
        if not (0 <= self.null_index < self.K) or not (0 <= self.time_index < self.d):
            raise InstanceError("null_index/time_index out of range")
        if not isinstance(self.arms[self.null_index], Null):
            raise InstanceError("arm at null_index must be the null model")
        for v in (self.B, self.T):
            if not math.isfinite(v):
                raise InstanceError("B and T must be finite")
        if not (0 < self.B <= self.T):
            raise InstanceError("need 0 < B <= T")
        rate = self.B / self.T
        r = np.empty(self.K)
        c = np.empty((self.K, self.d))
        for a, model in enumerate(self.arms):
            _validate_model(model, self.d, self.time_index, rate)
            r[a], c[a] = _model_means(model, self.d, self.time_index, rate)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(c))):
            raise InstanceError("non-finite mean")
        if r.min() < 0 or r.max() > 1 or c.min() < 0 or c.max() > 1:
            raise InstanceError("means must lie in [0, 1]")
        r.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "_r", r)
        object.__setattr__(self, "_c", c)

    @property
    def time_rate(self) -> float:
        return self.B / self.T

    @property
    def rewards(self) -> np.ndarray:
        """Mean rewards, shape (K,)."""
        return self._r

    @property
    def consumption(self) -> np.ndarray:
        """Mean consumption, shape (K, d); the time column equals B/T."""
        return self._c

    @property
    def non_null_arms(self) -> list[int]:
        return [a for a in range(self.K) if a != self.null_index]

    @property
    def resources(self) -> list[int]:
        """Indices of the non-time resources."""
        return [j for j in range(self.d) if j != self.time_index]

    def kernel_arrays(self):
        """Flatten the outcome models into arrays for :mod:`bwk.kernels`."""
        K, d = self.K, self.d
        kind = np.zeros(K, dtype=np.int64)
        rparam = np.zeros(K)
        cparam = np.zeros((K, d))
        sprob = np.ones(K)
        divisor = np.ones(K)
        atoms = [m for m in self.arms if isinstance(m, AtomSum)]
        width = max((len(m.atoms) for m in atoms), default=1)
        atom_index = np.full((K, width), -1, dtype=np.int64)
        n_atoms = 1 + max((max(m.atoms) for m in atoms if m.atoms), default=0)
        atom_r = np.zeros(n_atoms)
        atom_c = np.zeros((n_atoms, d))
        for a, model in enumerate(self.arms):
            if isinstance(model, Null):
                kind[a] = kernels.KIND_NULL
            elif isinstance(model, Deterministic):
                kind[a] = kernels.KIND_DETERMINISTIC
                rparam[a] = model.reward
                cparam[a] = model.consumption
            elif isinstance(model, IndependentBernoulli):
                kind[a] = kernels.KIND_BERNOULLI
                rparam[a] = model.reward_mean
                cparam[a] = model.consumption_means
            elif isinstance(model, BernoulliReward):
                kind[a] = kernels.KIND_BERNOULLI_REWARD
                rparam[a] = model.reward_mean
                cparam[a] = model.consumption
            elif isinstance(model, ScaledBernoulli):
                kind[a] = kernels.KIND_SCALED
                rparam[a] = model.reward
                cparam[a] = model.base_consumption
                sprob[a] = model.scale_prob
                divisor[a] = model.divisor
            elif isinstance(model, AtomSum):
                kind[a] = kernels.KIND_ATOM_SUM
                rparam[a] = model.scale
                for p, at in enumerate(model.atoms):
                    atom_index[a, p] = at
                    atom_r[at] = model.atom_reward[p]
                    atom_c[at] = model.atom_consumption[p]
        return kind, rparam, cparam, sprob, divisor, atom_index, atom_r, atom_c

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "K": self.K,
            "d": self.d,
            "B": self.B,
            "T": self.T,
            "time_index": self.time_index,
            "null_index": self.null_index,
            "arms": [model_to_dict(m) for m in self.arms],
        }


def _validate_model(model, d: int, time_index: int, rate: float) -> None:
    def unit(v, what):
        if not (isinstance(v, (int, float)) and math.isfinite(v) and 0.0 <= v <= 1.0):
            raise InstanceError(f"{what} must be a finite number in [0, 1], got {v!r}")

    if isinstance(model, Null):
        return
    if isinstance(model, Deterministic):
        unit(model.reward, "reward")
        vec = model.consumption
    elif isinstance(model, IndependentBernoulli):
        unit(model.reward_mean, "reward_mean")
        vec = model.consumption_means
    elif isinstance(model, BernoulliReward):
        unit(model.reward_mean, "reward_mean")
        vec = model.consumption
    elif isinstance(model, ScaledBernoulli):
        unit(model.reward, "reward")
        if not (0.0 < model.scale_prob <= 1.0):
            raise InstanceError("scale_prob must lie in (0, 1]")
        if not (0.0 < model.divisor < 1.0) and model.divisor != 1.0:
            raise InstanceError("divisor must lie in (0, 1)")
        vec = model.base_consumption
        for j, b in enumerate(vec):
            if j == time_index:
                continue
            unit(b, "base_consumption")
            unit(b / model.divisor, "base_consumption / divisor")
            unit(b * model.scale_prob / model.divisor, "scaled mean consumption")
    elif isinstance(model, AtomSum):
        if not (0.0 < model.scale <= 1.0):
            raise InstanceError("atom scale must lie in (0, 1]")
        if len(model.atoms) * model.scale > 1.0 + 1e-12:
            raise InstanceError("atom sum can exceed 1")
        for v in model.atom_reward:
            if not (0.0 <= v <= model.scale):
                raise InstanceError("atom reward mean outside [0, scale]")
        for row in model.atom_consumption:
            if len(row) != d:
                raise InstanceError("atom consumption has wrong length")
            for j, v in enumerate(row):
                if j != time_index and not (0.0 <= v <= model.scale):
                    raise InstanceError("atom consumption mean outside [0, scale]")
        return
    else:
        raise InstanceError(f"unknown outcome model {model!r}")
    if len(vec) != d:
        raise InstanceError(f"consumption vector has length {len(vec)}, expected {d}")
    for j, v in enumerate(vec):
        if j != time_index:
            unit(v, "consumption")


def make_instance(rewards, consumption, B, T, *, kind="bernoulli", name="") -> BwkInstance:
    """Instance with the null arm last and time as the last resource.

    ``rewards`` has one entry per non-null arm and ``consumption`` one row per
    non-null arm listing the non-time resources.
    """
    rewards = [float(v) for v in rewards]
    consumption = [[float(v) for v in row] for row in consumption]
    d = 1 + (len(consumption[0]) if consumption else 0)
    arms = []
    for r, row in zip(rewards, consumption):
        vec = tuple(row) + (0.0,)
        if kind == "bernoulli":
            arms.append(IndependentBernoulli(r, vec))
        elif kind == "deterministic":
            arms.append(Deterministic(r, vec))
        else:
            raise InstanceError(f"unknown kind {kind!r}")
    arms.append(Null())
    return BwkInstance(K=len(arms), d=d, B=float(B), T=int(T), arms=tuple(arms),
                       null_index=len(arms) - 1, time_index=d - 1, name=name)


# ---------------------------------------------------------------------------
# means and sampling


def _check_arm(instance: BwkInstance, arm: int) -> None:
    if not (0 <= arm < instance.K):
        raise IndexError(f"arm {arm} out of range for K={instance.K}")


def mean_reward(instance: BwkInstance, arm: int) -> float:
    _check_arm(instance, arm)
    return float(instance.rewards[arm])


def mean_consumption(instance: BwkInstance, arm: int, resource: int) -> float:
    _check_arm(instance, arm)
    if not (0 <= resource < instance.d):
        raise IndexError(f"resource {resource} out of range for d={instance.d}")
    return float(instance.consumption[arm, resource])


def sample_outcome(instance: BwkInstance, arm: int, rng: np.random.Generator) -> OutcomeVector:
    """One draw from the outcome distribution of ``arm``."""
    _check_arm(instance, arm)
    model = instance.arms[arm]
    arrays = _cached_arrays(instance)
    cons = np.empty(instance.d)
    if isinstance(model, AtomSum):
        # walk atoms in the kernel's draw order, keeping per-atom detail
        reward = 0.0
        n = len(model.atoms)
        ar = np.zeros(n)
        ac = np.zeros((n, instance.d))
        for p in range(n):
            if rng.random() * model.scale < model.atom_reward[p]:
                ar[p] = model.scale
            for j in range(instance.d):
                if j != instance.time_index and rng.random() * model.scale < model.atom_consumption[p][j]:
                    ac[p, j] = model.scale
        cons[:] = ac.sum(axis=0)
        reward = float(ar.sum())
        cons[instance.time_index] = instance.time_rate
        return OutcomeVector(reward, cons, ar, ac)
    reward = kernels.sample_outcome_into(*arrays, arm, instance.time_index,
                                         instance.time_rate, rng, cons)
    return OutcomeVector(float(reward), cons)


def _cached_arrays(instance: BwkInstance):
    arrays = instance.__dict__.get("_arrays")
    if arrays is None:
        arrays = instance.kernel_arrays()
        object.__setattr__(instance, "_arrays", arrays)
    return arrays


# ---------------------------------------------------------------------------
# structural checks


@dataclass
class BestArmCheck:
    best_arm_optimal: bool
    best_arm: int | None
    violated: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.best_arm_optimal


def best_arm_weight_threshold(instance: BwkInstance) -> float:
    """Minimum LP weight on the best arm: ``3 sqrt(B) ln(K d T) / T``."""
    return 3.0 * math.sqrt(instance.B) * math.log(instance.K * instance.d * instance.T) / instance.T


def check_best_arm_optimal(instance: BwkInstance, lp=None, *, tol: float = TOL) -> BestArmCheck:
    """Classify ``instance`` as best-arm-optimal or list the failed conditions.

    Condition (i): the LP value equals the value of the best single arm
    rescaled by its largest consumption. (ii): the optimum is unique (checked by
    vertex enumeration) and supported on one non-null arm plus null.
    (iii): the best arm's weight exceeds :func:`best_arm_weight_threshold`.
    """
    from . import lp as lpmod

    if lp is None:
        lp = lpmod.solve(lpmod.build_primal(instance))
    if lp.status != "optimal":
        raise lpmod.LpContractError("LP solution is not optimal")
    problem = lpmod.build_primal(instance)
    if not lp.is_consistent_with(problem):
        raise lpmod.LpContractError("LP solution does not belong to this instance")

    violated = []
    rate = instance.time_rate
    support = [a for a in lp.support if a != instance.null_index]
    details: dict = {"opt_lp": lp.value, "support": sorted(lp.support)}

    # (i) best single arm value
    single = {a: rate * instance.rewards[a] / instance.consumption[a].max() for a in instance.non_null_arms}
    cand = [a for a, v in single.items() if abs(v - lp.value) <= tol]
    details["single_arm_values"] = {int(a): float(v) for a, v in single.items()}
    if not cand:
        violated.append("i")
    best = support[0] if len(support) == 1 else (cand[0] if cand else None)

    # (ii) unique optimum supported on {best, null}
    if len(support) != 1:
        violated.append("ii")
    else:
        oracle = lpmod.solve_by_vertex_enumeration(problem)
        details["optimal_vertices"] = len(oracle.optimal_vertices)
        if len(oracle.optimal_vertices) != 1:
            violated.append("ii")
        if cand and support[0] not in cand:
            violated.append("i")

    # (iii) weight on the best arm
    thr = best_arm_weight_threshold(instance)
    details["weight_threshold"] = thr
    if best is None or not (lp.x[best] > thr):
        violated.append("iii")

    violated = sorted(set(violated))
    ok = not violated
    return BestArmCheck(ok, int(best) if (ok and best is not None) else None, violated, details)


@dataclass
class LbAssumptionReport:
    passed: bool
    failed_parts: list
    values: dict

    def __bool__(self) -> bool:
        return self.passed


def check_lb_assumption(instance: BwkInstance, c_lb: float, *, dmin: float | None = None) -> LbAssumptionReport:
    """Evaluate the four-part lower-bound assumption on a 3-armed instance.

    Arms other than null are taken in index order as ``A1, A2``. Part 3 uses
    ``T * OPT_LP`` in place of the best fixed-distribution value (an upper
    bound). ``dmin`` defaults to :func:`bwk.lp.min_lagrangian_gap`.
    """
    from . import lp as lpmod

    if instance.K != 3:
        raise InstanceError("the lower-bound assumption concerns 3-armed instances")
    if not (0.0 < c_lb < 1.0 / 3.0):
        raise ValueError("c_lb must lie in (0, 1/3)")
    a1, a2 = instance.non_null_arms
    sol = lpmod.solve(lpmod.build_primal(instance))
    if dmin is None:
        dmin = lpmod.min_lagrangian_gap(instance, sol)
    r, c = instance.rewards, instance.consumption
    res = instance.resources
    failed = []
    means = [r[a1], r[a2]] + [c[a, j] for a in (a1, a2) for j in res]
    if not all(c_lb - TOL <= v <= 1 - c_lb + TOL for v in means):
        failed.append(1)
    if not (r[a2] - r[a1] >= c_lb - TOL and all(c[a2, j] - c[a1, j] >= c_lb + dmin - TOL for j in res)):
        failed.append(2)
    opt_proxy = instance.T * sol.value
    if not (instance.B <= c_lb * instance.T + TOL and c_lb * instance.T <= opt_proxy + TOL):
        failed.append(3)
    if not (dmin >= c_lb / math.sqrt(instance.T) - TOL):
        failed.append(4)
    return LbAssumptionReport(not failed, failed, {"dmin": float(dmin), "opt_lp": sol.value,
                                                   "opt_fd_proxy": opt_proxy})


# ---------------------------------------------------------------------------
# JSON


def model_to_dict(m) -> dict:
    if isinstance(m, Null):
        return {"kind": "null"}
    if isinstance(m, Deterministic):
        return {"kind": m.kind, "reward": m.reward, "consumption": list(m.consumption)}
    if isinstance(m, IndependentBernoulli):
        return {"kind": m.kind, "reward_mean": m.reward_mean, "consumption_means": list(m.consumption_means)}
    if isinstance(m, BernoulliReward):
        return {"kind": m.kind, "reward_mean": m.reward_mean, "consumption": list(m.consumption)}
    if isinstance(m, ScaledBernoulli):
        return {"kind": m.kind, "reward": m.reward, "base_consumption": list(m.base_consumption),
                "scale_prob": m.scale_prob, "divisor": m.divisor}
    if isinstance(m, AtomSum):
        return {"kind": m.kind, "atoms": list(m.atoms), "atom_reward": list(m.atom_reward),
                "atom_consumption": [list(r) for r in m.atom_consumption], "scale": m.scale}
    raise InstanceError(f"unknown outcome model {m!r}")


def _num(v, what):
    """Accept ints, floats, or exact rationals written as "p/q" strings."""
    if isinstance(v, bool):
        raise InstanceError(f"{what}: boolean is not a number")
    if isinstance(v, str):
        try:
            v = float(Fraction(v))
        except (ValueError, ZeroDivisionError) as exc:
            raise InstanceError(f"{what}: cannot parse {v!r}") from exc
    if not isinstance(v, (int, float)):
        raise InstanceError(f"{what}: expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise InstanceError(f"{what}: non-finite value")
    return v


def _vec(vs, what):
    if not isinstance(vs, list):
        raise InstanceError(f"{what}: expected a list")
    return tuple(_num(v, what) for v in vs)


def model_from_dict(obj: dict):
    if not isinstance(obj, dict) or "kind" not in obj:
        raise InstanceError("model descriptor needs a 'kind'")
    kind = obj["kind"]
    try:
        if kind == "null":
            return Null()
        if kind == "deterministic":
            return Deterministic(_num(obj["reward"], "reward"), _vec(obj["consumption"], "consumption"))
        if kind == "independent_bernoulli":
            return IndependentBernoulli(_num(obj["reward_mean"], "reward_mean"),
                                        _vec(obj["consumption_means"], "consumption_means"))
        if kind == "bernoulli_reward":
            return BernoulliReward(_num(obj["reward_mean"], "reward_mean"),
                                   _vec(obj["consumption"], "consumption"))
        if kind == "scaled_bernoulli":
            return ScaledBernoulli(_num(obj["reward"], "reward"), _vec(obj["base_consumption"], "base_consumption"),
                                   _num(obj["scale_prob"], "scale_prob"), _num(obj["divisor"], "divisor"))
        if kind == "atom_sum":
            return AtomSum(tuple(int(a) for a in obj["atoms"]), _vec(obj["atom_reward"], "atom_reward"),
                           tuple(_vec(r, "atom_consumption") for r in obj["atom_consumption"]),
                           _num(obj["scale"], "scale"))
    except KeyError as exc:
        raise InstanceError(f"model {kind!r} is missing field {exc}") from exc
    raise InstanceError(f"unknown model kind {kind!r}")


def instance_from_dict(obj: dict) -> BwkInstance:
    if not isinstance(obj, dict):
        raise InstanceError("instance must be a JSON object")
    try:
        K = int(obj["K"])
        d = int(obj["d"])
        B = _num(obj["B"], "B")
        T = obj["T"]
        if isinstance(T, bool) or not isinstance(T, int) or T <= 0:
            raise InstanceError("T must be a positive integer")
        arms = obj["arms"]
        if not isinstance(arms, list):
            raise InstanceError("arms must be a list")
        return BwkInstance(K=K, d=d, B=B, T=T, arms=tuple(model_from_dict(m) for m in arms),
                           null_index=int(obj["null_index"]), time_index=int(obj["time_index"]),
                           name=str(obj.get("name", "")))
    except KeyError as exc:
        raise InstanceError(f"instance is missing field {exc}") from exc


def _reject_constant(token):
    raise InstanceError(f"non-finite literal {token} is not allowed")


def load_instance(path: str | Path) -> BwkInstance:
    with open(path) as fh:
        obj = json.load(fh, parse_constant=_reject_constant)
    return instance_from_dict(obj)


def save_instance(instance: BwkInstance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(instance.to_dict(), indent=2) + "\n")
