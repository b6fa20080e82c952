import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bwk import confidence as cf
from bwk.algorithms import UcbBwK
from bwk.model import make_instance
from bwk.simulator import run


def state_for(K=2, d=2, B=500.0, T=1000):
    return cf.ConfidenceState(K + 1, d, B, T, K, d - 1)


class TestCRad:
    def test_trivial(self):
        assert cf.c_rad(1, 1, 1) == 0.0

    def test_value(self):
        # 3 ln 4000 = 24.882149; the quoted 24.8830 is off in the fourth decimal
        assert cf.c_rad(2, 2, 1000) == pytest.approx(3 * (2 * math.log(2) + 3 * math.log(10)), rel=1e-14)
        assert cf.c_rad(2, 2, 1000) == pytest.approx(24.882149, abs=1e-6)
        assert cf.c_rad(2, 2, 1000) == pytest.approx(24.8830, abs=1e-3)

    def test_monotone(self):
        assert cf.c_rad(3, 2, 100) <= cf.c_rad(4, 2, 100) <= cf.c_rad(4, 3, 100) <= cf.c_rad(4, 3, 101)


class TestFRad:
    def test_zero_pulls(self):
        assert cf.f_rad(0.3, 0, 1.5) == 1.0

    def test_zero_mean(self):
        assert cf.f_rad(0.0, 100, 2.0) == pytest.approx(0.02)

    def test_value(self):
        # sqrt(24.883 * 0.25 / 1e4) = 0.0249414..., plus 0.0024883
        assert cf.f_rad(0.25, 10 ** 4, 24.883) == pytest.approx(0.0274297, abs=1e-7)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 1), st.integers(0, 10 ** 6), st.floats(0, 100))
    def test_range_and_monotone(self, mu, n, c):
        v = cf.f_rad(mu, n, c)
        assert 0.0 <= v <= 1.0
        assert cf.f_rad(mu, n + 1, c) <= v + 1e-15


class TestRadiusAndBounds:
    def test_null_and_unpulled(self):
        s = state_for()
        assert cf.radius(s, s.null_index) == 0.0
        assert cf.radius(s, 0) == 1.0

    def test_radius_value(self):
        s = state_for()
        s.c = 24.883
        s.counts[0] = 2500
        assert cf.radius(s, 0) == pytest.approx(0.10972, abs=5e-6)
        assert cf.radii(s)[0] == cf.radius(s, 0)

    def test_unpulled_bounds(self):
        s = state_for()
        b = cf.bounds(s, 0)
        assert b["reward_ucb"] == 1.0 and b["consumption_lcb"][0] == 0.0

    def test_null_bounds(self):
        s = state_for()
        b = cf.bounds(s, s.null_index)
        assert b["reward_ucb"] == 0.0
        assert b["consumption_lcb"][0] == 0.0 and b["consumption_lcb"][1] == pytest.approx(0.5)

    def test_ucb_value(self):
        s = state_for()
        s.c = 24.883
        s.counts[0] = 10 ** 4
        s.reward_sums[0] = 5000.0
        assert cf.bounds(s, 0)["reward_ucb"] == pytest.approx(0.537761, abs=5e-7)

    def test_bracketing(self, rng):
        s = state_for(K=3, d=3)
        for _ in range(500):
            a = int(rng.integers(0, 3))
            s.update(a, float(rng.random()), np.append(rng.random(2), 0.5))
        ucb, lcb = cf.all_bounds(s)
        r_hat, c_hat = s.means()
        real = [0, 1, 2]
        assert np.all(ucb[real] >= r_hat[real]) and np.all(ucb <= 1) and np.all(ucb >= 0)
        assert np.all(lcb[real, :2] <= c_hat[real, :2]) and np.all(lcb >= 0)

    def test_radius_nonincreasing(self):
        s = state_for()
        prev = 2.0
        for n in range(0, 5000, 37):
            s.counts[0] = n
            r = cf.radius(s, 0)
            assert r <= prev
            prev = r


class TestCleanEvent:
    def test_zero_pulls(self):
        inst = make_instance([0.3, 0.7], [[0.2], [0.6]], 500, 1000)
        assert cf.clean_event_holds(cf.ConfidenceState.for_instance(inst), inst)

    def test_violation(self):
        inst = make_instance([0.3, 0.7], [[0.2], [0.6]], 500, 1000)
        s = cf.ConfidenceState.for_instance(inst)
        s.c = 0.01
        s.counts[0] = 10 ** 6
        s.reward_sums[0] = 0.8 * 10 ** 6
        s.cons_sums[0] = [0.2 * 10 ** 6, 0.5 * 10 ** 6]
        assert not cf.clean_event_holds(s, inst)

    def test_holds_implies_bracketing(self, rng):
        inst = make_instance([0.3, 0.7], [[0.2], [0.6]], 500, 1000)
        tr = run(inst, UcbBwK(inst, eta=0.0), 3)
        assert tr.clean.dtype == bool


def fake_trace(xs, arms, rad):
    class T:
        pass
    t = T()
    t.xs, t.arms, t.radii = np.asarray(xs, float), np.asarray(arms), np.asarray(rad, float)
    t.n_rounds = len(arms)
    return t


class TestConfidenceSums:
    def test_hand_trace(self):
        xs = [[1, 0, 0], [0.5, 0.5, 0], [0, 0, 1]]
        rad = [[1.0, 1.0, 0], [0.5, 1.0, 0], [0.4, 0.9, 0]]
        tr = fake_trace(xs, [0, 1, 2], rad)
        assert cf.action_confidence_sum(tr) == pytest.approx(2.0)
        assert cf.distribution_confidence_sum(tr) == pytest.approx(1.75)
        assert cf.action_confidence_sum(tr, []) == 0.0
        assert cf.action_confidence_sum(tr, [2]) == 0.0
        assert cf.count_large_radius_rounds(tr, 0.8) == 1
        assert cf.count_large_radius_rounds(tr, 1.5) == 0
        assert cf.count_large_radius_rounds(tr, 0.9, arm=1) == 1
        with pytest.raises(ValueError):
            cf.action_confidence_sum(tr, [3])

    def test_real_trace_bounds(self):
        inst = make_instance([0.3, 0.7], [[0.2], [0.6]], 500, 2000)
        c = cf.c_rad(inst.K, inst.d, inst.T)
        for seed in range(5):
            tr = run(inst, UcbBwK(inst, eta=0.0), seed)
            assert cf.action_confidence_sum(tr) <= cf.action_sum_bound(inst.K, inst.T, c)
            null_rounds = np.flatnonzero(tr.arms == inst.null_index)
            assert cf.action_confidence_sum(tr, null_rounds) == 0.0
            for theta in (0.2, 0.5, 0.9):
                for a in inst.non_null_arms:
                    assert cf.count_large_radius_rounds(tr, theta, a) <= cf.per_arm_count_bound(theta, c)

    def test_per_arm_bound_is_tight_enough(self):
        # after ceil(4C/theta^2)+1 pulls the radius is below theta
        for c in (1.0, 10.0, 24.883):
            for theta in (0.1, 0.5, 1.0):
                n = cf.per_arm_count_bound(theta, c)
                assert cf.f_rad(1.0, n, c) < theta


@pytest.mark.parametrize("use_kernel", [True, False])
def test_event_series_matches_recorded_flags(use_kernel):
    inst = make_instance([0.5, 0.6], [[0.3], [0.5]], 150, 300)
    for seed in range(5):
        tr = run(inst, UcbBwK(inst, eta=0.0), seed, use_kernel=use_kernel)
        strict, bracket = cf.event_series(tr)
        assert np.array_equal(strict, tr.clean)
        assert bracket.shape == strict.shape and bracket[0]
