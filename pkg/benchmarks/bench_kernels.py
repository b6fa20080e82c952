"""Compiled kernels vs the pure-Python fallback.

Times the simplex solve and a full PrunedUcbBwK run in the current process,
then re-runs itself with BWK_DISABLE_NUMBA=1 and checks that both modes
produce the same trace.

    python benchmarks/bench_kernels.py [--rounds 2000] [--solves 2000]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from bwk import _accel, kernels
from bwk.algorithms import PrunedUcbBwK
from bwk.instances import make_concrete_family, random_instance
from bwk.simulator import run


def measure(n_solves, T):
    rng = np.random.default_rng(0)
    inst = random_instance(6, 3, 300.0, 1000, rng)
    c = inst.rewards.copy()
    A = np.ascontiguousarray(inst.consumption[:, :2].T)
    b = np.full(2, inst.time_rate)
    kernels.simplex_solve(c, A, b)  # compile outside the timer
    t0 = time.perf_counter()
    for _ in range(n_solves):
        kernels.simplex_solve(c, A, b)
    lp_us = (time.perf_counter() - t0) / n_solves * 1e6

    fam = make_concrete_family(0.2, 0.01, T)
    run(fam, PrunedUcbBwK(fam, eta=0.0), 0, record_radii=False)
    t0 = time.perf_counter()
    tr = run(fam, PrunedUcbBwK(fam, eta=0.0), 1, record_radii=False)
    sim_s = time.perf_counter() - t0
    return {"numba": _accel.NUMBA_ENABLED, "simplex_us": lp_us, "run_s": sim_s,
            "rounds": tr.n_rounds, "reward": tr.total_reward, "arms_hash": int(np.sum(tr.arms * np.arange(tr.n_rounds)))}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rounds", type=int, default=2000)
    ap.add_argument("--solves", type=int, default=2000)
    ap.add_argument("--child", action="store_true")
    args = ap.parse_args()
    res = measure(args.solves, args.rounds)
    if args.child:
        print(json.dumps(res))
        return
    env = dict(os.environ, BWK_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, __file__, "--child", "--rounds", str(args.rounds),
                          "--solves", str(max(1, args.solves // 10))],
                         env=env, capture_output=True, text=True, check=True)
    slow = json.loads(out.stdout.strip().splitlines()[-1])
    print(f"{'mode':<10}{'simplex (us)':>14}{'run (s)':>10}{'rounds':>8}")
    for r in (res, slow):
        print(f"{'numba' if r['numba'] else 'python':<10}{r['simplex_us']:>14.1f}{r['run_s']:>10.3f}{r['rounds']:>8}")
    print(f"speedup: simplex {slow['simplex_us'] / res['simplex_us']:.0f}x, run {slow['run_s'] / res['run_s']:.0f}x")
    same = all(res[k] == slow[k] for k in ("rounds", "reward", "arms_hash"))
    print("traces identical:", same)
    if not same:
        sys.exit(1)


if __name__ == "__main__":
    main()
