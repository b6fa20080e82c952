import math

import numpy as np
import pytest

from bwk import lp
from bwk.instances import (GenerationError, family_from_descriptor, make_concrete_family,
                           make_d3_perturbed, make_deterministic_pair, make_general_lb_pair,
                           make_semibandit_instance, random_best_arm_optimal, try_best_arm_optimal)
from bwk.lp import CapacityError
from bwk.model import check_best_arm_optimal, make_instance, sample_outcome


class TestConcrete:
    def test_means(self, concrete):
        assert concrete.B == 2000
        assert np.allclose(concrete.rewards[:2], [0.4, 0.79], atol=1e-15)
        assert np.allclose(concrete.consumption[:2, 0], [0.19, 0.40], atol=1e-15)

    def test_ranges(self):
        with pytest.raises(ValueError):
            make_concrete_family(0.4, 0.01, 10_000)
        with pytest.raises(ValueError):
            make_concrete_family(0.2, 0.001, 10_000)

    def test_deterministic_variant(self, rng):
        inst = make_concrete_family(0.2, 0.01, 10_000, consumption="deterministic")
        assert sample_outcome(inst, 0, rng).consumption[0] == 0.19
        assert np.array_equal(inst.rewards, make_concrete_family(0.2, 0.01, 10_000).rewards)


class TestGeneralPair:
    def test_mean_twin_and_perturbation(self):
        base = make_concrete_family(0.2, 0.01, 10_000)
        pair = make_general_lb_pair(base, 0.2, require_assumption=False)
        eps = 2 * 0.2 ** 2 / math.sqrt(10_000)
        assert pair.perturbation_size == pytest.approx(eps)
        assert np.allclose(pair.base.rewards, base.rewards, atol=1e-12)
        assert np.allclose(pair.base.consumption, base.consumption, atol=1e-12)
        c2 = base.consumption[1, 0]
        assert pair.twin.consumption[1, 0] == pytest.approx(c2 * (0.8 - eps) / 0.8, abs=1e-15)
        assert c2 - pair.twin.consumption[1, 0] <= eps * c2 / 0.8 + 1e-15
        assert pair.max_mean_difference() <= eps

    def test_requires_assumption(self, concrete):
        with pytest.raises(ValueError):
            make_general_lb_pair(concrete, 0.2)

    def test_deterministic_rewards(self, rng):
        pair = make_general_lb_pair(make_concrete_family(0.2, 0.01, 10_000), 0.2, require_assumption=False)
        assert {sample_outcome(pair.twin, 1, rng).reward for _ in range(20)} == {0.79}


class TestDeterministicPair:
    def test_construction(self):
        pair = make_deterministic_pair(10_000, 0.01)
        assert pair.base.B == 5000
        diff_r = pair.base.rewards - pair.twin.rewards
        assert diff_r[1] == pytest.approx(0.01) and diff_r[0] == 0 and diff_r[2] == 0
        assert np.array_equal(pair.base.consumption, pair.twin.consumption)

    def test_supports_differ(self):
        pair = make_deterministic_pair(10_000, 0.01)
        s1 = lp.solve_by_vertex_enumeration(lp.build_primal(pair.base))
        s2 = lp.solve_by_vertex_enumeration(lp.build_primal(pair.twin))
        # I leans on A2 (with null), I' on A1
        assert s1.support == frozenset({1, 2}) and s2.support == frozenset({0})

    def test_range(self):
        with pytest.raises(ValueError):
            make_deterministic_pair(10_000, 0.005)
        with pytest.raises(ValueError):
            make_deterministic_pair(10_000, 0.3)
        make_deterministic_pair(10_000, 0.01)  # the lower end is inclusive


class TestD3:
    def base(self):
        # three arms: the d = 3 resource vectors over arms can be independent
        return make_instance([0.5, 0.6], [[0.3, 0.4], [0.4, 0.2]], 1000, 4000)

    def test_properties(self, rng):
        base = self.base()
        out = make_d3_perturbed(base, rng)
        root = 1 / math.sqrt(base.T)
        assert np.abs(out.consumption - base.consumption).max() <= 2 * root + 1e-12
        assert np.array_equal(out.rewards, base.rewards)
        assert np.all(out.consumption[:, out.time_index] == base.time_rate)
        assert np.linalg.matrix_rank(out.consumption.T) == out.d
        assert np.linalg.svd(out.consumption.T, compute_uv=False).min() > 1e-12

    def test_needs_d_above_two(self, concrete, rng):
        from bwk.model import InstanceError
        with pytest.raises(InstanceError):
            make_d3_perturbed(concrete, rng)
        with pytest.raises(InstanceError):
            make_d3_perturbed(make_instance([0.5, 0.6], [[0.3, 0.4, 0.5], [0.4, 0.2, 0.3]], 1000, 4000), rng)


class TestRandomBestArmOptimal:
    def test_certified(self, rng):
        for _ in range(20):
            ci = random_best_arm_optimal(4, 1000, 250, rng)
            assert check_best_arm_optimal(ci.instance, ci.lp)
            assert lp.min_lagrangian_gap(ci.instance, ci.lp, ci.best_arm) > 0

    def test_acceptance_rate(self):
        rng = np.random.default_rng(0)
        hits = sum(try_best_arm_optimal(4, 1000, 250, rng) is not None for _ in range(10_000))
        assert hits / 10_000 > 0.05

    def test_exhaustion(self, rng):
        with pytest.raises(GenerationError):
            random_best_arm_optimal(4, 10, 1, rng, max_tries=3)


class TestSemiBandit:
    def test_singletons_like_ordinary(self, rng):
        sb = make_semibandit_instance(3, 1, "singletons", 2, 400, 2000, rng)
        inst = sb.instance
        assert inst.K == 4
        assert np.allclose(inst.rewards[:3], sb.atom_reward)
        assert np.allclose(inst.consumption[:3, 0], sb.atom_consumption[:, 0])

    def test_linearity_and_range(self, rng):
        sb = make_semibandit_instance(6, 2, "all_subsets", 2, 400, 2000, rng)
        inst = sb.instance
        assert inst.K == 16
        for a, s in enumerate(sb.family[:-1]):
            assert inst.rewards[a] == pytest.approx(sb.atom_reward[list(s)].sum())
        for _ in range(200):
            o = sample_outcome(inst, int(rng.integers(0, 15)), rng)
            assert 0 <= o.reward <= 1 and 0 <= o.consumption[0] <= 1

    def test_capacity(self):
        with pytest.raises(CapacityError):
            family_from_descriptor(20, 10, "all_subsets")

    def test_descriptor_errors(self):
        with pytest.raises(ValueError):
            family_from_descriptor(4, 2, [(0, 1, 2)])
        with pytest.raises(ValueError):
            family_from_descriptor(4, 2, "bogus")
