import io
import math

import numpy as np
import pytest

from bwk import lp
from bwk.algorithms import PrunedUcbBwK, UcbBwK, fixed_arm_policy, lp_optimal_policy
from bwk.confidence import c_rad, per_arm_count_bound
from bwk.metrics import mean_se, run_replications
from bwk.model import make_instance
from bwk.simulator import read_trace, run, run_relaxed, trace_lines, wald_diagnostic, write_trace


class TestRun:
    def test_fixed_null_full_horizon(self, concrete):
        tr = run(concrete, fixed_arm_policy(concrete, concrete.null_index), 0)
        assert tr.n_rounds == concrete.T and tr.total_reward == 0 and tr.stop_reason == "horizon"
        assert tr.remaining[-1, concrete.time_index] == pytest.approx(0.0, abs=1e-6)

    @pytest.mark.parametrize("T", [999, 1000])
    def test_double_rate_stops_at_half(self, T):
        B = 100.0
        inst = make_instance([0.5], [[2 * B / T]], B, T, kind="deterministic")
        tr = run(inst, fixed_arm_policy(inst, 0), 0)
        assert tr.n_rounds == math.ceil(T / 2)
        assert tr.stop_reason == "budget" and tr.stop_resource == 0

    def test_stop_semantics(self, concrete):
        tr = run(concrete, PrunedUcbBwK(concrete, eta=0.0), 3)
        used = np.cumsum(tr.consumption, axis=0)
        B = concrete.B
        if tr.stop_reason == "budget":
            j = tr.stop_resource
            assert used[-1, j] >= B * (1 - 1e-12)
            assert np.all(used[-2] < B * (1 - 1e-12))
        assert tr.total_reward == pytest.approx(tr.rewards.sum())

    def test_remaining_nonincreasing(self, concrete):
        tr = run(concrete, UcbBwK(concrete, eta=0.0), 1)
        assert np.all(np.diff(tr.remaining, axis=0) <= 1e-12)

    def test_lp_optimum_benchmark(self, concrete):
        opt = lp.solve(lp.build_primal(concrete)).value
        traces = run_replications(concrete, lambda: lp_optimal_policy(concrete), 200, 0,
                                  record_radii=False)
        m, se = mean_se([t.total_reward for t in traces])
        assert m <= concrete.T * opt + 3 * se
        # X* spends exactly the budget in expectation; the stopping loss is a few rounds
        assert m >= 0.98 * concrete.T * opt

    def test_reproducible_generator_and_int(self, concrete):
        a = run(concrete, UcbBwK(concrete, eta=0.0), 17)
        b = run(concrete, UcbBwK(concrete, eta=0.0), np.random.default_rng(17))
        assert np.array_equal(a.arms, b.arms)

    def test_record_accessors(self, concrete):
        tr = run(concrete, UcbBwK(concrete, eta=0.0), 0)
        r = tr.record(4)
        assert r.t == 5 and r.arm == tr.arms[4] and r.radii is not None
        assert len(tr.rounds) == tr.n_rounds


POLICIES = {
    "lp_optimal": lambda i: lp_optimal_policy(i),
    "fixed_arm": lambda i: fixed_arm_policy(i, 1),
    "fixed_null": lambda i: fixed_arm_policy(i, i.null_index),
    "ucb_bwk": lambda i: UcbBwK(i, eta=0.0),
    "ucb_bwk_eta": lambda i: UcbBwK(i, eta=0.4),
    "pruned": lambda i: PrunedUcbBwK(i, eta=0.0),
    "pruned_eta": lambda i: PrunedUcbBwK(i, eta=0.4),
}
FIELDS = ("xs", "arms", "rewards", "consumption", "remaining", "lp_values", "calls", "clean", "radii")


@pytest.mark.parametrize("name", sorted(POLICIES))
@pytest.mark.parametrize("relaxed", [False, True])
def test_kernel_matches_python_loop(name, relaxed):
    from bwk.instances import make_concrete_family
    fam = make_concrete_family(0.2, 0.01, 1500)
    mk = POLICIES[name]
    if relaxed:
        a = run_relaxed(fam, mk(fam), 1800, 5)
        b = run_relaxed(fam, mk(fam), 1800, 5, use_kernel=False)
    else:
        a, b = run(fam, mk(fam), 5), run(fam, mk(fam), 5, use_kernel=False)
    assert a.meta["path"] == "kernel" and b.meta["path"] == "python"
    for f in FIELDS:
        assert np.array_equal(getattr(a, f), getattr(b, f)), f
    assert (a.stop_reason, a.stop_resource, a.total_calls) == (b.stop_reason, b.stop_resource, b.total_calls)


class TestRelaxed:
    def test_zero_rounds_rejected(self, concrete):
        with pytest.raises(ValueError):
            run_relaxed(concrete, fixed_arm_policy(concrete, 0), 0, 0)

    def test_two_horizons(self):
        inst = make_instance([0.5], [[0.9]], 100, 500)
        tr = run_relaxed(inst, fixed_arm_policy(inst, 0), 1000, 0)
        assert tr.n_rounds == 1000 and tr.budget_overdrawn and tr.stop_reason == "round_cap"

    def test_suboptimal_pull_counts(self):
        inst = make_instance([0.6, 0.5, 0.3], [[0.3], [0.5], [0.2]], 500, 2000)
        s = lp.solve(lp.build_primal(inst))
        g = lp.lagrangian_gaps(inst, s)
        C = c_rad(inst.K, inst.d, inst.T)
        counts = np.array([run_relaxed(inst, UcbBwK(inst, eta=0.0), inst.T, sd, record_radii=False).pull_counts()
                           for sd in range(200)])
        for a in (1, 2):
            # 16 C_rad / G^2 up to rounding: pulls with radius above G/4 cannot exceed this
            assert np.percentile(counts[:, a], 95) <= per_arm_count_bound(g[a] / 4, C)


class TestWald:
    def test_deterministic_zero(self):
        inst = make_instance([0.5, 0.2], [[0.3], [0.1]], 500, 1000, kind="deterministic")
        traces = run_replications(inst, lambda: fixed_arm_policy(inst, 0), 30, 0, record_radii=False)
        w = wald_diagnostic(traces, 0)
        assert w.reward_residual == pytest.approx(0.0, abs=1e-9)
        assert np.allclose(w.consumption_residual, 0.0, atol=1e-9)

    def test_fixed_bernoulli(self):
        inst = make_instance([0.5], [[0.6]], 300, 1000)
        traces = run_replications(inst, lambda: fixed_arm_policy(inst, 0), 500, 1, record_radii=False)
        assert wald_diagnostic(traces, 0).within(3)

    def test_too_few(self, concrete):
        traces = run_replications(concrete, lambda: fixed_arm_policy(concrete, 0), 5, 0)
        with pytest.raises(ValueError):
            wald_diagnostic(traces, 0)


class TestNdjson:
    def test_round_trip(self, tmp_path, concrete):
        tr = run(concrete, PrunedUcbBwK(concrete, eta=0.0), 2)
        p = tmp_path / "t.ndjson"
        write_trace(tr, p)
        back = read_trace(p)
        for f in ("xs", "arms", "rewards", "consumption", "remaining", "lp_values", "calls", "clean", "radii"):
            assert np.array_equal(getattr(back, f), getattr(tr, f)), f
        assert back.stop_reason == tr.stop_reason and back.total_calls == tr.total_calls
        assert read_trace(io.StringIO(p.read_text())).n_rounds == tr.n_rounds

    def test_header_first(self, concrete):
        tr = run(concrete, fixed_arm_policy(concrete, 0), 0)
        lines = list(trace_lines(tr))
        assert '"type": "header"' in lines[0] and len(lines) == tr.n_rounds + 1
        with pytest.raises(ValueError):
            read_trace(io.StringIO("\n".join(lines[1:])))
