"""Run a policy against an instance and record the trace.

Rounds stop at the end of the first round in which the cumulative consumption
of some resource reaches the budget (that round's reward counts), or after
``T`` rounds. The time resource reaches its budget exactly at round ``T``, so
the two coincide and are reported as ``"horizon"``.

UcbBwK and PrunedUcbBwK with default radii, and fixed distributions, run in
the fused kernel; every other policy goes through :func:`_run_python`. Both paths draw from the
generator in the same order and produce identical traces.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .confidence import ConfidenceState, c_rad, clean_event_holds
from .model import BwkInstance, OutcomeVector, sample_outcome

TRACE_SCHEMA_VERSION = 1
BUDGET_SLACK = 1e-12
_NO_FIXED = np.zeros(0)
_STOP_NAMES = {kernels.STOP_HORIZON: "horizon", kernels.STOP_BUDGET: "budget",
               kernels.STOP_ROUND_CAP: "round_cap"}


@dataclass
class RoundRecord:
    t: int
    x: np.ndarray
    arm: int
    outcome: OutcomeVector
    radii: np.ndarray | None
    remaining_budget: np.ndarray
    lp_value_optimistic: float
    oracle_calls: int
    clean: bool


@dataclass
class Trace:
    """Per-round arrays of one run; row ``i`` is round ``t = i + 1``."""

    instance: BwkInstance
    seed: object
    policy: str
    xs: np.ndarray
    arms: np.ndarray
    rewards: np.ndarray
    consumption: np.ndarray
    remaining: np.ndarray
    lp_values: np.ndarray
    calls: np.ndarray
    clean: np.ndarray
    radii: np.ndarray | None
    stop_reason: str
    stop_resource: int = -1
    relaxed: bool = False
    oracle_capped: bool = False
    total_calls: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_rounds(self) -> int:
        return int(self.arms.shape[0])

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    @property
    def budget_overdrawn(self) -> bool:
        return bool(self.n_rounds and np.any(self.remaining[-1] < -1e-9))

    def pull_counts(self) -> np.ndarray:
        return np.bincount(self.arms, minlength=self.instance.K)

    def clean_throughout(self) -> bool:
        return bool(np.all(self.clean))

    def record(self, i: int) -> RoundRecord:
        return RoundRecord(i + 1, self.xs[i], int(self.arms[i]),
                           OutcomeVector(float(self.rewards[i]), self.consumption[i]),
                           None if self.radii is None else self.radii[i],
                           self.remaining[i], float(self.lp_values[i]), int(self.calls[i]),
                           bool(self.clean[i]))

    @property
    def rounds(self) -> list[RoundRecord]:
        return [self.record(i) for i in range(self.n_rounds)]


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _seed_label(seed):
    return None if isinstance(seed, np.random.Generator) else seed


def run(instance: BwkInstance, policy, seed, *, record_radii: bool = True,
        use_kernel: bool = True) -> Trace:
    """Simulate ``policy`` with budget stopping for at most ``T`` rounds."""
    return _dispatch(instance, policy, seed, instance.T, False, record_radii, use_kernel)


def run_relaxed(instance: BwkInstance, policy, rounds: int, seed, *, record_radii: bool = True,
                use_kernel: bool = True) -> Trace:
    """Simulate exactly ``rounds`` rounds, ignoring budgets (remaining budget may go negative)."""
    if int(rounds) < 1:
        raise ValueError("rounds must be at least 1")
    return _dispatch(instance, policy, seed, int(rounds), True, record_radii, use_kernel)


def _dispatch(instance, policy, seed, n_rounds, relaxed, record_radii, use_kernel):
    params = policy.fused_params() if use_kernel else None
    if params is not None:
        return _run_fused(instance, policy, seed, n_rounds, relaxed, record_radii, params)
    return _run_python(instance, policy, seed, n_rounds, relaxed, record_radii)


def _run_fused(instance, policy, seed, n_rounds, relaxed, record_radii, params):
    rng = _rng(seed)
    out = kernels.simulate_ucb(
        *instance.kernel_arrays(), instance.rewards, instance.consumption,
        instance.null_index, instance.time_index, float(instance.B), int(instance.T),
        c_rad(instance.K, instance.d, instance.T), float(params.get("eta") or 0.0), bool(params["pruned"]),
        bool(relaxed), int(n_rounds), int(params["oracle_cap"]), bool(record_radii), rng,
        params.get("fixed_x", _NO_FIXED))
    (t, stop, stop_res, xs, arms, rewards, cons, remaining, lp_values, calls, clean, radii,
     total_calls, capped) = out
    return Trace(instance, _seed_label(seed), policy.name, xs, arms, rewards, cons, remaining,
                 lp_values, calls, clean, radii if record_radii else None, _STOP_NAMES[int(stop)],
                 int(stop_res), relaxed, bool(capped), int(total_calls),
                 {"eta": params.get("eta"), "path": "kernel"})


def _run_python(instance, policy, seed, n_rounds, relaxed, record_radii):
    rng = _rng(seed)
    K, d = instance.K, instance.d
    state = ConfidenceState.for_instance(instance)
    xs = np.zeros((n_rounds, K))
    arms = np.full(n_rounds, -1, dtype=np.int64)
    rewards = np.zeros(n_rounds)
    cons = np.zeros((n_rounds, d))
    remaining = np.zeros((n_rounds, d))
    lp_values = np.zeros(n_rounds)
    calls = np.zeros(n_rounds, dtype=np.int64)
    clean = np.zeros(n_rounds, dtype=bool)
    radii_out = np.zeros((n_rounds, K)) if record_radii else None
    used = np.zeros(d)
    budget = instance.B
    stop = "round_cap" if relaxed else "horizon"
    stop_res = -1
    total_calls = 0
    t = 0
    while t < n_rounds:
        if record_radii:
            rad = policy.radii()
            radii_out[t] = kernels.uniform_radii(state.counts, state.c, instance.null_index) \
                if rad is None else rad
        clean[t] = clean_event_holds(state, instance)
        dec = policy.choose(rng)
        outcome = sample_outcome(instance, dec.arm, rng)
        policy.update(dec.arm, outcome)
        state.update(dec.arm, outcome.reward, outcome.consumption)
        used += outcome.consumption
        xs[t] = dec.x
        arms[t] = dec.arm
        rewards[t] = outcome.reward
        cons[t] = outcome.consumption
        remaining[t] = budget - used
        lp_values[t] = 0.0 if math.isnan(dec.lp_value) else dec.lp_value
        calls[t] = dec.calls
        total_calls += dec.calls
        t += 1
        if not relaxed:
            over = [j for j in range(d) if used[j] >= budget * (1.0 - BUDGET_SLACK)]
            if over:
                hit = next((j for j in over if j != instance.time_index), over[0])
                if hit == instance.time_index and t == instance.T:
                    stop = "horizon"
                else:
                    stop, stop_res = "budget", hit
                break
    sl = slice(0, t)
    return Trace(instance, _seed_label(seed), policy.name, xs[sl], arms[sl], rewards[sl], cons[sl],
                 remaining[sl], lp_values[sl], calls[sl], clean[sl],
                 radii_out[sl] if record_radii else None, stop, stop_res, relaxed,
                 bool(getattr(policy, "capped", False)), total_calls,
                 {"eta": getattr(policy, "eta", None), "path": "python"})


# ---------------------------------------------------------------------------
# Wald identities


@dataclass
class WaldResult:
    arm: int
    reward_residual: float
    reward_stderr: float
    consumption_residual: np.ndarray
    consumption_stderr: np.ndarray
    n_traces: int

    def within(self, k: float = 3.0) -> bool:
        ok = abs(self.reward_residual) <= k * self.reward_stderr + 1e-12
        return bool(ok and np.all(np.abs(self.consumption_residual)
                                  <= k * self.consumption_stderr + 1e-12))


def wald_diagnostic(traces, arm: int, min_traces: int = 30) -> WaldResult:
    """Estimate ``E[REW(a)] - r(a) E[T(a)]`` and its consumption analogue (non-time resources)."""
    if len(traces) < min_traces:
        raise ValueError(f"need at least {min_traces} traces, got {len(traces)}")
    inst = traces[0].instance
    res = inst.resources
    r_res = np.empty(len(traces))
    c_res = np.empty((len(traces), len(res)))
    for i, tr in enumerate(traces):
        if tr.instance is not inst:
            raise ValueError("traces must share one instance")
        m = tr.arms == arm
        n = m.sum()
        r_res[i] = tr.rewards[m].sum() - inst.rewards[arm] * n
        c_res[i] = tr.consumption[m][:, res].sum(axis=0) - inst.consumption[arm, res] * n
    k = len(traces)
    return WaldResult(arm, float(r_res.mean()), float(r_res.std(ddof=1) / math.sqrt(k)),
                      c_res.mean(axis=0), c_res.std(axis=0, ddof=1) / math.sqrt(k), k)


# ---------------------------------------------------------------------------
# newline-delimited JSON


def _f(v):
    return [float(a) for a in v]


def trace_lines(trace: Trace):
    """Header object, then one JSON object per round."""
    yield json.dumps({"type": "header", "schema_version": TRACE_SCHEMA_VERSION,
                      "instance": trace.instance.to_dict(), "seed": trace.seed,
                      "policy": trace.policy, "stop_reason": trace.stop_reason,
                      "stop_resource": trace.stop_resource, "relaxed": trace.relaxed,
                      "oracle_capped": trace.oracle_capped, "total_calls": trace.total_calls,
                      "n_rounds": trace.n_rounds}, sort_keys=True)
    for i in range(trace.n_rounds):
        rec = {"type": "round", "t": i + 1, "x": _f(trace.xs[i]), "arm": int(trace.arms[i]),
               "reward": float(trace.rewards[i]), "consumption": _f(trace.consumption[i]),
               "remaining_budget": _f(trace.remaining[i]),
               "lp_value_optimistic": float(trace.lp_values[i]),
               "oracle_calls": int(trace.calls[i]), "clean": bool(trace.clean[i])}
        if trace.radii is not None:
            rec["radii"] = _f(trace.radii[i])
        yield json.dumps(rec, sort_keys=True)


def write_trace(trace: Trace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in trace_lines(trace):
            fh.write(line + "\n")


def read_trace(source) -> Trace:
    from .model import instance_from_dict

    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read() if isinstance(source, io.IOBase) else str(source)
    lines = [json.loads(l) for l in text.splitlines() if l.strip()]
    if not lines or lines[0].get("type") != "header":
        raise ValueError("trace file must start with a header record")
    head, rows = lines[0], lines[1:]
    if head.get("schema_version") != TRACE_SCHEMA_VERSION:
        raise ValueError(f"unsupported trace schema {head.get('schema_version')}")
    inst = instance_from_dict(head["instance"])
    K, d = inst.K, inst.d

    def arr(key, shape, dtype=float):
        return np.array([r[key] for r in rows], dtype=dtype).reshape(shape)

    n = len(rows)
    radii = arr("radii", (n, K)) if rows and "radii" in rows[0] else None
    return Trace(inst, head["seed"], head["policy"], arr("x", (n, K)), arr("arm", (n,), np.int64),
                 arr("reward", (n,)), arr("consumption", (n, d)), arr("remaining_budget", (n, d)),
                 arr("lp_value_optimistic", (n,)), arr("oracle_calls", (n,), np.int64),
                 arr("clean", (n,), bool), radii, head["stop_reason"], head["stop_resource"],
                 head["relaxed"], head["oracle_capped"], head["total_calls"])
