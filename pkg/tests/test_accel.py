import json
import os
import subprocess
import sys

import numpy as np

from bwk import _accel

SCRIPT = r"""
import json, numpy as np
from bwk import _accel, kernels
from bwk.algorithms import PrunedUcbBwK, UcbBwK, lp_optimal_policy
from bwk.instances import make_concrete_family, random_instance
from bwk.simulator import run
fam = make_concrete_family(0.2, 0.01, 600)
out = {"numba": _accel.NUMBA_ENABLED}
for name, pol in (("pruned", PrunedUcbBwK(fam, eta=0.0)), ("ucb", UcbBwK(fam, eta=0.3)),
                  ("fixed", lp_optimal_policy(fam))):
    tr = run(fam, pol, 11)
    out[name] = [tr.arms.tolist(), tr.rewards.tolist(), tr.xs.round(15).tolist(), tr.stop_reason]
inst = random_instance(5, 3, 200.0, 1000, np.random.default_rng(2))
st, x, v, *_ = kernels.simplex_solve(inst.rewards.copy(), np.ascontiguousarray(inst.consumption[:, :2].T),
                                     np.full(2, inst.time_rate))
out["lp"] = [int(st), x.tolist(), float(v)]
print(json.dumps(out))
"""


def _child(disable):
    env = dict(os.environ)
    env.pop("BWK_DISABLE_NUMBA", None)
    if disable:
        env["BWK_DISABLE_NUMBA"] = "1"
    r = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(r.stdout.strip().splitlines()[-1])


def test_fallback_matches_compiled():
    fast, slow = _child(False), _child(True)
    assert slow["numba"] is False
    assert fast["numba"] is _accel.NUMBA_ENABLED
    for k in ("pruned", "ucb", "fixed", "lp"):
        assert fast[k] == slow[k], k


def test_flag_reported():
    assert isinstance(_accel.NUMBA_ENABLED, bool)
