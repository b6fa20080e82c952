"""Command-line experiment runner.

Every command reads a JSON config (``--config``); flags override the matching
config keys. Outputs go to ``--out`` (else ``$BWK_OUT_DIR``, else
``./bwk_out``) and are byte-deterministic for a given config: JSON is written
with sorted keys, CSV with fixed columns, and replications are gathered in
order whatever ``--threads`` is.

Exit codes: 0 success, 1 runtime failure, 2 configuration failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import algorithms as alg
from . import instances as gen
from . import metrics
from .confidence import action_radii, c_rad
from .lp import CapacityError, lagrangian_gaps, sensitivity_trial
from .model import InstanceError, instance_from_dict, load_instance, make_instance, save_instance
from .simulator import write_trace

SCHEMA_VERSION = 1
OUT_ENV = "BWK_OUT_DIR"
TRACE_DETAILS = ("none", "summary", "full")

SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "command", "config", "summary"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"type": "string"},
        "config": {"type": "object"},
        "summary": {
            "type": "object",
            "required": ["instance", "policy", "reps", "opt_lp", "benchmark", "benchmark_mode",
                         "total_reward_mean", "total_reward_stderr", "regret_mean", "regret_stderr",
                         "rounds_mean", "stop_reasons", "pull_counts_mean", "clean_event_frequency",
                         "n_eps", "flags"],
            "properties": {
                "reps": {"type": "integer", "minimum": 1},
                "opt_lp": {"type": "number"},
                "benchmark": {"type": "number"},
                "benchmark_mode": {"enum": ["lp_proxy", "monte_carlo_fd"]},
                "total_reward_mean": {"type": "number"},
                "regret_mean": {"type": "number"},
                "pull_counts_mean": {"type": "array", "items": {"type": "number"}},
                "clean_event_frequency": {"type": "number", "minimum": 0, "maximum": 1},
                "stop_reasons": {"type": "object", "additionalProperties": {"type": "integer"}},
                "n_eps": {"type": "object"},
                "flags": {"type": "array", "items": {"type": "string"}},
            },
        },
        "replications": {"type": "array"},
    },
}


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config plumbing


def _reject_constant(token):
    raise ConfigError(f"non-finite literal {token} in config")


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh, parse_constant=_reject_constant)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, NaN/inf to None, tuple keys to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, frozenset):
        return sorted(_clean(v) for v in obj)
    return obj


def dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _int(cfg, key, default=None, minimum=None):
    v = cfg.get(key, default)
    if v is None:
        raise ConfigError(f"missing '{key}'")
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"'{key}' must be an integer")
    if minimum is not None and v < minimum:
        raise ConfigError(f"'{key}' must be at least {minimum}")
    return v


def _budget(p, T):
    if "B" in p:
        return float(p["B"])
    if "B_over_T" in p:
        return float(p["B_over_T"]) * T
    raise ConfigError("generator needs 'B' or 'B_over_T'")


def _pick(pair, which):
    if which in ("I", None):
        return pair.base
    if which in ("I'", "Iprime"):
        return pair.twin
    raise ConfigError("'which' must be \"I\" or \"I'\"")


def build_pair(spec: dict):
    if not isinstance(spec, dict) or "generator" not in spec:
        raise ConfigError("pair spec needs a 'generator'")
    p = dict(spec.get("params", {}))
    name = spec["generator"]
    if name == "deterministic_pair":
        return gen.make_deterministic_pair(int(p["T"]), float(p["eps"]))
    if name == "general_lb_pair":
        base = gen.make_concrete_family(float(p["c_lb"]), float(p["eps"]), int(p["T"]))
        return gen.make_general_lb_pair(base, float(p["c_lb"]),
                                        require_assumption=bool(p.get("require_assumption", True)))
    raise ConfigError(f"unknown pair generator {name!r}")


def build_instance(spec: dict, default_seed: int, T_override: int | None = None):
    """Instance from ``{"file": path}`` or ``{"generator": name, "params": {...}}``."""
    if not isinstance(spec, dict):
        raise ConfigError("'instance' must be an object")
    if "file" in spec:
        if T_override is not None:
            raise ConfigError("a file instance cannot be swept over horizons")
        path = Path(spec["file"])
        if not path.is_file():
            raise ConfigError(f"instance file not found: {path}")
        return load_instance(path)
    if "inline" in spec:
        return instance_from_dict(spec["inline"])
    name = spec.get("generator")
    p = dict(spec.get("params", {}))
    if T_override is not None:
        p["T"] = T_override
    seed = int(p.get("seed", default_seed))
    rng = np.random.default_rng(seed)
    try:
        if name == "concrete_family":
            return gen.make_concrete_family(float(p["c_lb"]), float(p["eps"]), int(p["T"]),
                                            consumption=p.get("consumption", "bernoulli"))
        if name in ("deterministic_pair", "general_lb_pair"):
            return _pick(build_pair({"generator": name, "params": p}), p.get("which", "I"))
        if name == "random":
            T = int(p["T"])
            return gen.random_instance(int(p["K"]), int(p.get("d", 2)), _budget(p, T), T, rng)
        if name == "random_best_arm_optimal":
            T = int(p["T"])
            return gen.random_best_arm_optimal(int(p["K"]), T, _budget(p, T), rng).instance
        if name == "d3_perturbed":
            T = int(p["T"])
            base = make_instance(p["rewards"], p["consumption"], _budget(p, T), T)
            return gen.make_d3_perturbed(base, rng)
        if name == "semibandit":
            T = int(p["T"])
            return gen.make_semibandit_instance(int(p["N"]), int(p["n"]), p["family"], int(p.get("d", 2)),
                                                _budget(p, T), T, rng).instance
    except KeyError as exc:
        raise ConfigError(f"generator {name!r} is missing parameter {exc}") from exc
    raise ConfigError(f"unknown instance generator {name!r}")


def policy_factory(spec, instance):
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("'policy' needs a 'name'")
    name, params = spec["name"], dict(spec.get("params", {}))
    alg.make_policy(name, params, instance)  # validate once, eagerly
    return lambda inst=instance: alg.make_policy(name, params, inst)


# ---------------------------------------------------------------------------
# commands


def _replication_rows(traces, bench_value, eps_grid, opt_lp):
    rows = []
    for i, t in enumerate(traces):
        row = {"rep": i, "total_reward": t.total_reward, "regret": bench_value - t.total_reward,
               "rounds": t.n_rounds, "stop_reason": t.stop_reason, "stop_resource": t.stop_resource,
               "clean_throughout": t.clean_throughout()}
        if eps_grid:
            row["n_eps"] = {f"{e:g}": v for e, v in metrics.simple_regret_counts(t, eps_grid, opt_lp).items()}
        rows.append(row)
    return rows


def _run_set(instance, factory, reps, seed, threads, detail, eps_grid, bench):
    traces = metrics.run_replications(instance, factory, reps, seed, threads=threads,
                                      record_radii=True)
    summary = metrics.summarize(traces, eps_grid=eps_grid, benchmark=bench)
    return traces, summary


def cmd_run(cfg, out: Path, threads: int):
    seed, reps = cfg["seed"], cfg["reps"]
    instance = build_instance(cfg.get("instance") or _missing("instance"), seed)
    factory = policy_factory(cfg.get("policy") or _missing("policy"), instance)
    eps_grid = [float(e) for e in cfg.get("eps_grid", [])]
    mode = cfg.get("benchmark", "lp_proxy")
    if mode not in ("lp_proxy", "monte_carlo_fd"):
        raise ConfigError(f"unknown benchmark {mode!r}")
    bench_reps = _int(cfg, "benchmark_reps", 200, metrics.MIN_MC_REPS)

    def execute():
        bench = metrics.benchmark_value(instance, mode, reps=bench_reps, seed=seed)
        traces, summary = _run_set(instance, factory, reps, seed, threads, cfg["trace_detail"],
                                   eps_grid, bench)
        doc = {"schema_version": SCHEMA_VERSION, "command": "run", "config": cfg,
               "summary": summary.to_dict()}
        if cfg["trace_detail"] in ("summary", "full"):
            doc["replications"] = _replication_rows(traces, bench.value, eps_grid, summary.opt_lp)
        dump_json(doc, out / "summary.json")
        if cfg["trace_detail"] == "full":
            tdir = out / "traces"
            tdir.mkdir(exist_ok=True)
            for i, t in enumerate(traces):
                write_trace(t, tdir / f"rep_{i:04d}.ndjson")

    return execute


def _missing(key):
    raise ConfigError(f"missing '{key}'")


SWEEP_COLUMNS = ["T", "reps", "benchmark", "regret_mean", "regret_stderr", "total_reward_mean"]


def cmd_sweep(cfg, out: Path, threads: int):
    seed, reps = cfg["seed"], cfg["reps"]
    spec = cfg.get("instance") or _missing("instance")
    horizons = cfg.get("horizons") or _missing("horizons")
    if not all(isinstance(T, int) and T > 0 for T in horizons) or sorted(set(horizons)) != horizons:
        raise ConfigError("'horizons' must be strictly increasing positive integers")
    first = build_instance(spec, seed, horizons[0])
    pspec = cfg.get("policy") or _missing("policy")
    policy_factory(pspec, first)
    eps_grid = [float(e) for e in cfg.get("eps_grid", [])]
    mode = cfg.get("benchmark", "lp_proxy")

    def execute():
        rows = []
        for k, T in enumerate(horizons):
            inst = first if k == 0 else build_instance(spec, seed, T)
            bench = metrics.benchmark_value(inst, mode, reps=max(reps, metrics.MIN_MC_REPS), seed=seed)
            fac = policy_factory(pspec, inst)
            traces, summ = _run_set(inst, fac, reps, seed + k, threads, "none", eps_grid, bench)
            row = {"T": T, "reps": reps, "benchmark": bench.value, "regret_mean": summ.regret_mean,
                   "regret_stderr": summ.regret_stderr, "total_reward_mean": summ.total_reward_mean}
            for e in eps_grid:
                row[f"n_eps@{e:g}"] = summ.n_eps[f"{e:g}"]["mean"]
            rows.append(row)
        cols = SWEEP_COLUMNS + [f"n_eps@{e:g}" for e in eps_grid]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: repr(float(r[c])) if isinstance(r[c], float) else r[c] for c in cols})
        (out / "sweep.csv").write_text(buf.getvalue(), encoding="utf-8")
        regs = [r["regret_mean"] for r in rows]
        fit = {"slope_vs_log_T": metrics._slope(np.log(horizons), regs),
               "slope_vs_sqrt_T": metrics._slope(np.sqrt(horizons), regs)}
        dump_json({"schema_version": SCHEMA_VERSION, "command": "sweep", "config": cfg,
                   "rows": rows, "fit": fit}, out / "sweep.json")

    return execute


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k in ("T", "reps") else float(v)) for k, v in r.items()} for r in rows]


def cmd_lowerbound(cfg, out: Path, threads: int):
    seed, reps = cfg["seed"], cfg["reps"]
    pspec_pair = cfg.get("pair") or _missing("pair")
    pair = build_pair(pspec_pair)
    pspec = cfg.get("policy") or _missing("policy")
    policy_factory(pspec, pair.base)
    policy_factory(pspec, pair.twin)

    def execute():
        rep = metrics.lb_pair_report(pair, lambda inst: policy_factory(pspec, inst)(), reps, seed,
                                     threads=threads)
        T = pair.base.T
        doc = {"schema_version": SCHEMA_VERSION, "command": "lowerbound", "config": cfg,
               "pair": {"generator": pspec_pair["generator"], "params": pspec_pair.get("params", {}),
                        "relation": pair.relation, "perturbation_size": pair.perturbation_size,
                        "max_mean_difference": pair.max_mean_difference()},
               "report": rep, "sqrt_T": math.sqrt(T),
               "max_regret_over_sqrt_T": rep["max_regret"] / math.sqrt(T)}
        dump_json(doc, out / "lowerbound.json")

    return execute


def cmd_sensitivity(cfg, out: Path, threads: int):
    seed = cfg["seed"]
    trials = _int(cfg, "trials", 100, 1)
    frac = float(cfg.get("delta_fraction", 0.9))
    eta = float(cfg.get("eta", 0.0))
    if frac < 0:
        raise ConfigError("'delta_fraction' must be nonnegative")
    fixed = cfg.get("instance")
    K = _int(cfg, "K", 3, 2)
    T = _int(cfg, "T", 1000, 1)
    B = float(cfg.get("B", T / 4))
    fixed_inst = build_instance(fixed, seed) if fixed else None

    def execute():
        from .lp import build_primal, solve
        from .model import check_best_arm_optimal

        rows = []
        for i in range(trials):
            rng = metrics.replication_rng(seed, i)
            if fixed_inst is None:
                cert = gen.random_best_arm_optimal(K, T, B, rng)
                inst, sol, best = cert.instance, cert.lp, cert.best_arm
            else:
                inst = fixed_inst
                sol = solve(build_primal(inst))
                chk = check_best_arm_optimal(inst, sol)
                if not chk:
                    raise ConfigError(f"instance is not best-arm-optimal (violated {chk.violated})")
                best = chk.best_arm
            gaps = lagrangian_gaps(inst, sol)
            deltas = np.where(np.arange(inst.K) == inst.null_index, 0.0, frac * np.maximum(gaps, 0.0))
            res = sensitivity_trial(inst, sol, deltas, rng, eta=eta, best=best)
            rows.append({"trial": i, "best_arm": best, "rewards": inst.rewards,
                         "consumption": inst.consumption, "B": inst.B, "T": inst.T,
                         "gaps": gaps, "deltas": deltas, "support_preserved": res.support_preserved,
                         "perturbed_support": res.perturbed_support,
                         "consistent_with_theorem": res.consistent_with_theorem})
        doc = {"schema_version": SCHEMA_VERSION, "command": "sensitivity", "config": cfg,
               "trials": len(rows), "preserved": sum(r["support_preserved"] for r in rows),
               "results": rows}
        dump_json(doc, out / "sensitivity.json")

    return execute


def conf_sum_check(trace, n: int, c: float, const: float = 3.0) -> dict:
    """Prefix check ``sum Rad_t(A_t) <= const (sqrt(s n C) + n ln(s) C)`` for every prefix ``s``."""
    sums = np.cumsum(action_radii(trace))
    s = np.arange(1, sums.size + 1)
    bound = const * (np.sqrt(s * n * c) + n * np.log(s) * c)
    ratio = sums / bound
    return {"max_ratio": float(ratio.max()) if ratio.size else 0.0,
            "passed": bool(np.all(sums <= bound + 1e-9))}


def cmd_semibandit(cfg, out: Path, threads: int):
    seed, reps = cfg["seed"], cfg["reps"]
    try:
        N, n = _int(cfg, "N", minimum=1), _int(cfg, "n", minimum=1)
        d, T = _int(cfg, "d", 2, 2), _int(cfg, "T", minimum=1)
        B = _budget(cfg, T)
        family = cfg.get("family", "all_subsets")
        sb = gen.make_semibandit_instance(N, n, family, d, B, T, np.random.default_rng(seed),
                                          atom_reward=cfg.get("atom_reward"),
                                          atom_consumption=cfg.get("atom_consumption"))
    except CapacityError as exc:
        raise ConfigError(str(exc)) from exc
    inst = sb.instance
    eta_cfg = cfg.get("eta")
    beta = n * c_rad(inst.K, inst.d, inst.T)
    eta = alg.reduced_eta(beta, inst.B, inst.T) if eta_cfg is None else float(eta_cfg)
    compare = bool(cfg.get("compare_naive", True))

    def reduced():
        prov = alg.SemiBanditRadiusProvider(inst, sb.family, sb.N, sb.n)
        return alg.reduced_ucb_bwk(inst, prov, eta)

    def execute():
        traces = metrics.run_replications(inst, reduced, reps, seed, threads=threads)
        summ = metrics.summarize(traces)
        c = c_rad(inst.K, inst.d, inst.T)
        checks = [conf_sum_check(t, n, c) for t in traces]
        doc = {"schema_version": SCHEMA_VERSION, "command": "semibandit", "config": cfg,
               "eta": eta, "beta": beta, "family_size": len(sb.family) - 1,
               "reduced": summ.to_dict(),
               "conf_sum_check": {"max_ratio": max(ch["max_ratio"] for ch in checks),
                                  "all_passed": all(ch["passed"] for ch in checks),
                                  "bound": "3*(sqrt(s*n*C_rad) + n*ln(s)*C_rad)"}}
        if compare:
            naive = metrics.run_replications(inst, lambda: alg.UcbBwK(inst, eta), reps, seed,
                                             threads=threads)
            doc["naive"] = metrics.summarize(naive).to_dict()
            bench = metrics.benchmark_value(inst).value
            wins = sum((bench - a.total_reward) <= (bench - b.total_reward) for a, b in zip(traces, naive))
            doc["paired"] = {"reduced_not_worse": int(wins), "pairs": reps}
        dump_json(doc, out / "semibandit.json")

    return execute


def cmd_generate(cfg, out: Path, threads: int):
    seed = cfg["seed"]
    if "pair" in cfg:
        pair = build_pair(cfg["pair"])

        def execute():
            save_instance(pair.base, out / "instance_I.json")
            save_instance(pair.twin, out / "instance_Iprime.json")

        return execute
    inst = build_instance(cfg.get("instance") or _missing("instance"), seed)

    def execute():
        save_instance(inst, out / "instance.json")

    return execute


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "lowerbound": cmd_lowerbound,
            "sensitivity": cmd_sensitivity, "semibandit": cmd_semibandit, "generate": cmd_generate}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bwk", description="Bandits-with-knapsacks experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
        p.add_argument("--reps", type=int, help="replications")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./bwk_out)")
        p.add_argument("--threads", type=int, default=None, help="worker threads")
        p.add_argument("--trace-detail", choices=TRACE_DETAILS, default=None)
    return ap


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.reps is not None:
            cfg["reps"] = args.reps
        if args.trace_detail is not None:
            cfg["trace_detail"] = args.trace_detail
        cfg.setdefault("seed", 0)
        cfg.setdefault("reps", 1)
        cfg.setdefault("trace_detail", "none")
        if not (isinstance(cfg["seed"], int) and 0 <= cfg["seed"] < 2 ** 64):
            raise ConfigError("'seed' must be an unsigned 64-bit integer")
        _int(cfg, "reps", minimum=1)
        if cfg["trace_detail"] not in TRACE_DETAILS:
            raise ConfigError(f"'trace_detail' must be one of {TRACE_DETAILS}")
        threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
        if threads < 1:
            raise ConfigError("--threads must be positive")
        out = Path(args.out or cfg.get("out") or os.environ.get(OUT_ENV) or "bwk_out")
        cfg.pop("out", None)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            execute = COMMANDS[args.command](cfg, out, threads)
    except (ConfigError, InstanceError, CapacityError, KeyError, TypeError, ValueError) as exc:
        print(f"bwk: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            execute()
    except ConfigError as exc:
        print(f"bwk: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 1
        print(f"bwk: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
