"""Benchmarks, regret, simple-regret counts, and aggregation over replications.

Statistics are computed per trace first and then aggregated; standard errors
use the sample standard deviation over replications.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .algorithms import lp_optimal_policy
from .confidence import action_confidence_sum, action_sum_bound, c_rad, distribution_confidence_sum
from .lp import build_primal, solve
from .model import BwkInstance
from .simulator import Trace, run

MIN_MC_REPS = 30


def replication_rng(base_seed: int, index: int) -> np.random.Generator:
    """Independent stream for replication ``index`` (a spawn key of ``base_seed``)."""
    return np.random.default_rng(np.random.SeedSequence(int(base_seed), spawn_key=(int(index),)))


def run_replications(instance: BwkInstance, make_policy, reps: int, base_seed: int, *,
                     runner=None, threads: int = 1, **kwargs) -> list[Trace]:
    """Run ``make_policy()`` ``reps`` times; results are in replication order."""
    runner = run if runner is None else runner

    def one(i):
        tr = runner(instance, make_policy(), replication_rng(base_seed, i), **kwargs)
        tr.seed = [int(base_seed), int(i)]
        return tr

    if threads > 1 and reps > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, range(reps)))
    return [one(i) for i in range(reps)]


def mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


@dataclass(frozen=True)
class Benchmark:
    value: float
    stderr: float
    mode: str


def benchmark_value(instance: BwkInstance, mode: str = "lp_proxy", reps: int = 200,
                    seed: int = 0) -> Benchmark:
    """``T * OPT_LP``, or the Monte Carlo mean reward of always sampling ``X*``."""
    opt = solve(build_primal(instance)).value
    if mode == "lp_proxy":
        return Benchmark(instance.T * opt, 0.0, mode)
    if mode == "monte_carlo_fd":
        if reps < MIN_MC_REPS:
            raise ValueError(f"monte_carlo_fd needs at least {MIN_MC_REPS} replications")
        traces = run_replications(instance, lambda: lp_optimal_policy(instance), reps, seed,
                                  record_radii=False)
        m, se = mean_se([t.total_reward for t in traces])
        return Benchmark(m, se, mode)
    raise ValueError(f"unknown benchmark mode {mode!r}")


def simple_regret(trace: Trace, opt_lp: float) -> np.ndarray:
    """Per-round ``OPT_LP - r(X_t)``."""
    return opt_lp - trace.xs @ trace.instance.rewards


def simple_regret_counts(trace: Trace, eps_grid, opt_lp: float | None = None) -> dict:
    if opt_lp is None:
        opt_lp = solve(build_primal(trace.instance)).value
    eps_grid = [float(e) for e in eps_grid]
    if any(e <= 0 for e in eps_grid):
        raise ValueError("eps values must be positive")
    sr = simple_regret(trace, opt_lp)
    return {e: int(np.count_nonzero(sr >= e)) for e in eps_grid}


def regrets(traces, benchmark: float) -> np.ndarray:
    return np.array([benchmark - t.total_reward for t in traces])


@dataclass
class RunSummary:
    instance: str
    policy: str
    reps: int
    opt_lp: float
    benchmark: float
    benchmark_mode: str
    benchmark_stderr: float
    total_reward_mean: float
    total_reward_stderr: float
    regret_mean: float
    regret_stderr: float
    rounds_mean: float
    stop_reasons: dict
    pull_counts_mean: list
    clean_event_frequency: float
    action_conf_sum_max: float
    distribution_conf_sum_max: float
    action_conf_sum_bound: float
    n_eps: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(traces, *, eps_grid=(), benchmark: Benchmark | None = None) -> RunSummary:
    if not traces:
        raise ValueError("no traces to summarize")
    inst = traces[0].instance
    opt = solve(build_primal(inst)).value
    bench = benchmark or Benchmark(inst.T * opt, 0.0, "lp_proxy")
    rew = [t.total_reward for t in traces]
    reg = regrets(traces, bench.value)
    stops: dict = {}
    for t in traces:
        key = t.stop_reason if t.stop_resource < 0 else f"{t.stop_reason}:{t.stop_resource}"
        stops[key] = stops.get(key, 0) + 1
    n_eps = {}
    for e in eps_grid:
        counts = [simple_regret_counts(t, [e], opt)[float(e)] for t in traces]
        n_eps[f"{float(e):g}"] = {"mean": float(np.mean(counts)), "median": float(np.median(counts)),
                                  "max": int(max(counts))}
    have_radii = all(t.radii is not None for t in traces)
    act = max(action_confidence_sum(t) for t in traces) if have_radii else float("nan")
    dist = max(distribution_confidence_sum(t) for t in traces) if have_radii else float("nan")
    flags = ["simple regret measured against OPT_LP"] if eps_grid else []
    etas = {t.meta.get("eta") for t in traces}
    if any(e is not None and e > 0.5 for e in etas):
        flags.append("eta exceeds 1/2")
    if any(t.oracle_capped for t in traces):
        flags.append("oracle cap reached")
    m_rew, se_rew = mean_se(rew)
    m_reg, se_reg = mean_se(reg)
    return RunSummary(
        instance=inst.name, policy=traces[0].policy, reps=len(traces), opt_lp=float(opt),
        benchmark=float(bench.value), benchmark_mode=bench.mode, benchmark_stderr=float(bench.stderr),
        total_reward_mean=m_rew, total_reward_stderr=se_rew, regret_mean=m_reg, regret_stderr=se_reg,
        rounds_mean=float(np.mean([t.n_rounds for t in traces])),
        stop_reasons=dict(sorted(stops.items())),
        pull_counts_mean=[float(v) for v in np.mean([t.pull_counts() for t in traces], axis=0)],
        clean_event_frequency=float(np.mean([t.clean_throughout() for t in traces])),
        action_conf_sum_max=float(act), distribution_conf_sum_max=float(dist),
        action_conf_sum_bound=action_sum_bound(inst.K, inst.T, c_rad(inst.K, inst.d, inst.T)),
        n_eps=n_eps, flags=flags)


@dataclass
class ScalingReport:
    rows: list  # dicts with T, reps, regret_mean, regret_stderr, benchmark
    slope_log: float
    slope_sqrt: float

    def ratio(self, t_hi: int, t_lo: int) -> float:
        by_t = {r["T"]: r["regret_mean"] for r in self.rows}
        return by_t[t_hi] / by_t[t_lo]


def _slope(x, y) -> float:
    if len(x) < 2:
        return float("nan")
    return float(np.polyfit(np.asarray(x, float), np.asarray(y, float), 1)[0])


def regret_scaling_report(make_instance_for_T, make_policy, horizons, reps: int, base_seed: int = 0,
                          *, benchmark_mode: str = "lp_proxy", threads: int = 1) -> ScalingReport:
    """Regret table over ``horizons``; ``make_policy(instance)`` builds a fresh policy."""
    horizons = [int(T) for T in horizons]
    if sorted(horizons) != horizons or len(set(horizons)) != len(horizons):
        raise ValueError("horizons must be strictly increasing")
    rows = []
    for k, T in enumerate(horizons):
        inst = make_instance_for_T(T)
        bench = benchmark_value(inst, benchmark_mode, reps=max(reps, MIN_MC_REPS), seed=base_seed)
        traces = run_replications(inst, lambda: make_policy(inst), reps, base_seed + k,
                                  record_radii=False, threads=threads)
        m, se = mean_se(regrets(traces, bench.value))
        rows.append({"T": T, "reps": reps, "benchmark": bench.value, "regret_mean": m,
                     "regret_stderr": se})
    regs = [r["regret_mean"] for r in rows]
    return ScalingReport(rows, _slope(np.log(horizons), regs), _slope(np.sqrt(horizons), regs))


def lb_pair_report(pair, make_policy, reps: int, base_seed: int = 0, *, threads: int = 1) -> dict:
    """Mean regret (against ``T * OPT_LP``) of the policy on both instances of ``pair``."""
    out = {}
    for tag, inst, off in (("I", pair.base, 0), ("I'", pair.twin, 1)):
        bench = benchmark_value(inst)
        traces = run_replications(inst, lambda: make_policy(inst), reps, base_seed + off,
                                  record_radii=False, threads=threads)
        m, se = mean_se(regrets(traces, bench.value))
        out[f"regret_{tag}"] = m
        out[f"stderr_{tag}"] = se
    out["max_regret"] = max(out["regret_I"], out["regret_I'"])
    return out
