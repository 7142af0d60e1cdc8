import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bridger import theory
from bridger.theory import (
    ImprovementChain,
    boltzmann,
    check_theorem_cost,
    check_theorem_discrete,
    continuous_limit_check,
    cross_entropy,
    entropy,
    expected_cost,
    kl,
    log_partition,
    make_chain,
    random_dist,
    random_grid,
    run_theory_check,
    uniform_grid,
)

seeds = st.integers(0, 2**32 - 1)


def far_source(c):
    """Source leaning toward high-cost atoms, far from ``boltzmann(c)``."""
    return 0.5 * boltzmann(-c) + 0.5 * np.full(c.size, 1.0 / c.size)


class TestDivergences:
    def test_uniform_cross_entropy(self):
        assert cross_entropy(np.full(4, 0.25), np.full(4, 0.25)) == pytest.approx(math.log(4), abs=1e-15)
        assert cross_entropy(np.full(4, 0.25), np.full(4, 0.25)) == pytest.approx(1.386294, abs=1e-6)

    def test_matches_term_by_term_sum(self, rng):
        p, q = random_dist(5, rng), random_dist(5, rng)
        total = 0.0
        for i in range(5):
            total -= p[i] * math.log(q[i])
        assert cross_entropy(p, q) == pytest.approx(total, abs=1e-12)
        assert kl(p, q) == pytest.approx(total + sum(p[i] * math.log(p[i]) for i in range(5)), abs=1e-12)

    @given(seeds)
    def test_self_divergence_is_zero(self, seed):
        p = random_dist(int(seed % 9) + 1, np.random.default_rng(seed))
        assert kl(p, p) == 0.0

    def test_kl_nonnegative_on_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(10**4):
            S = int(rng.integers(1, 21))
            p, q = random_dist(S, rng), random_dist(S, rng)
            assert kl(p, q) >= -1e-12
            assert cross_entropy(p, q) >= entropy(p) - 1e-12

    def test_zero_support_allowed_only_where_p_vanishes(self):
        assert cross_entropy([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))
        assert cross_entropy([0.5, 0.5, 0.0], [0.5, 0.5, 0.0]) == pytest.approx(math.log(2))
        with pytest.raises(ValueError, match="zero mass"):
            cross_entropy([0.5, 0.5], [1.0, 0.0])

    @pytest.mark.parametrize("p", [[0.5, 0.6], [-0.1, 1.1], [np.nan, 1.0]])
    def test_invalid_distributions(self, p):
        with pytest.raises(ValueError):
            cross_entropy(p, [0.5, 0.5])


class TestBoltzmann:
    def test_constant_cost_is_uniform(self):
        np.testing.assert_allclose(boltzmann(np.full(5, 7.0)), np.full(5, 0.2), atol=1e-15)

    def test_two_atom_closed_form(self):
        np.testing.assert_allclose(boltzmann([0.0, math.log(3)]), [0.75, 0.25], atol=1e-15)

    def test_large_costs_do_not_overflow(self):
        p = boltzmann([-1000.0, -1000.0 + math.log(3)])
        np.testing.assert_allclose(p, [0.75, 0.25], atol=1e-15)
        assert log_partition([-1000.0, -1000.0]) == pytest.approx(1000 + math.log(2))

    def test_non_finite_cost(self):
        with pytest.raises(ValueError):
            boltzmann([0.0, np.inf])

    def test_cost_identity(self):
        # E_p[c] = -ln Z + H(p, boltzmann(c)); both sides evaluated independently
        rng = np.random.default_rng(0)
        for _ in range(10**4):
            S = int(rng.integers(1, 21))
            c = rng.normal(0, 3, S)
            p = random_dist(S, rng)
            lhs = sum(p[i] * c[i] for i in range(S))
            Z = sum(math.exp(-ci) for ci in c)
            q = [math.exp(-ci) / Z for ci in c]
            rhs = -math.log(Z) - sum(p[i] * math.log(q[i]) for i in range(S) if p[i] > 0)
            assert abs(lhs - rhs) <= 1e-10
            assert abs(expected_cost(p, c) - (-log_partition(c) + cross_entropy(p, boltzmann(c)))) <= 1e-10


class TestMakeChain:
    def test_equal_bounds_give_exact_decrements(self, rng):
        c = rng.normal(0, 2, 6)
        chain = make_chain(far_source(c), boltzmann(c), 8, 0.05, 0.05, rng)
        np.testing.assert_allclose(chain.decrements(), 0.05 / 8, atol=1e-9)

    def test_single_step(self, rng):
        c = rng.normal(0, 2, 4)
        p0, target = far_source(c), boltzmann(c)
        chain = make_chain(p0, target, 1, 0.02, 0.08, rng)
        drop = cross_entropy(p0, target) - cross_entropy(chain.dists[1], target)
        assert 0.02 - 1e-12 <= drop <= 0.08 + 1e-12

    def test_random_chains_recomputed_independently(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            c, chain, _ = theory._random_instance(rng, 10, 20)
            dt = np.diff(chain.grid)
            for k in range(1, chain.K + 1):
                p_prev, p_k = chain.dists[k - 1], chain.dists[k]
                assert abs(p_k.sum() - 1) <= 1e-12 and np.all(p_k >= 0)
                h_prev = -sum(a * math.log(b) for a, b in zip(p_prev, chain.target) if a > 0)
                h_k = -sum(a * math.log(b) for a, b in zip(p_k, chain.target) if a > 0)
                assert chain.eps_min * dt[k - 1] - 1e-12 <= h_prev - h_k <= chain.eps_max * dt[k - 1] + 1e-12

    def test_extremal_modes(self, rng):
        c = rng.normal(0, 2, 5)
        grid = random_grid(6, rng)
        low = make_chain(far_source(c), boltzmann(c), 6, 0.01, 0.04, grid=grid, mode="min")
        high = make_chain(far_source(c), boltzmann(c), 6, 0.01, 0.04, grid=grid, mode="max")
        np.testing.assert_allclose(low.decrements(), 0.01 * np.diff(grid), atol=1e-12)
        np.testing.assert_allclose(high.decrements(), 0.04 * np.diff(grid), atol=1e-12)

    def test_kl_chain(self, rng):
        c = rng.normal(0, 2, 5)
        chain = make_chain(far_source(c), boltzmann(c), 4, 0.01, 0.02, rng, divergence="kl")
        assert chain.is_admissible()

    def test_infeasible_floor_reports_achievable_steps(self):
        target = np.array([0.7, 0.3])
        p0 = np.array([0.6, 0.4])
        gap = cross_entropy(p0, target) - cross_entropy(target, target)
        with pytest.raises(ValueError, match="steps are achievable"):
            make_chain(p0, target, 4, 2 * gap, 2 * gap)

    @pytest.mark.parametrize("kwargs", [{"eps_min": 0.0, "eps_max": 0.1}, {"eps_min": 0.2, "eps_max": 0.1}])
    def test_invalid_eps(self, kwargs):
        with pytest.raises(ValueError):
            make_chain([0.9, 0.1], [0.5, 0.5], 2, **kwargs)

    def test_invalid_grid(self):
        with pytest.raises(ValueError, match="grid"):
            make_chain([0.9, 0.1], [0.5, 0.5], 2, 0.01, 0.02, grid=[0.0, 0.7, 0.6])


class TestBounds:
    def chains(self, rng, K=5, **kw):
        c = rng.normal(0, 2, 6)
        target = boltzmann(c)
        a = make_chain(far_source(c), target, K, 0.02, 0.06, rng, **kw)
        b = make_chain(0.5 * far_source(c) + 0.5 * random_dist(6, rng), target, K, 0.02, 0.06, rng, **kw)
        return c, a, b

    def test_identical_chains(self, rng):
        c, a, _ = self.chains(rng)
        res = check_theorem_discrete(a, a)
        assert res.lhs == 0.0 and res.rhs == pytest.approx(0.04) and res.holds
        cost = check_theorem_cost(a, a, c)
        assert cost.slack == pytest.approx(0.04, abs=1e-15) and not cost.lemma_violations

    def test_constant_cost_collapses(self):
        # a uniform target fixes H(p, target) = ln S, so no chain can improve;
        # the bound still evaluates with every expected cost equal
        c = np.full(4, 1.5)
        target = boltzmann(c)
        grid = uniform_grid(3)
        a = ImprovementChain([np.array([0.7, 0.1, 0.1, 0.1])] * 4, target, grid, 0.01, 0.03)
        b = ImprovementChain([np.array([0.1, 0.1, 0.1, 0.7])] * 4, target, grid, 0.01, 0.03)
        res = check_theorem_cost(a, b, c)
        assert not res.admissible
        assert res.lhs == pytest.approx(0.0, abs=1e-15)
        assert res.rhs == pytest.approx(0.02, abs=1e-15)

    def test_equal_bounds_on_random_pairs(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            S, K = int(rng.integers(2, 11)), int(rng.integers(1, 21))
            c = rng.normal(0, 2, S)
            target = boltzmann(c)
            p, q = far_source(c), 0.5 * far_source(c) + 0.5 * random_dist(S, rng)
            room = min(cross_entropy(p, target), cross_entropy(q, target)) - entropy(target)
            if room < 1e-3:
                continue
            eps = room * rng.uniform(0.1, 0.9)
            res = check_theorem_discrete(make_chain(p, target, K, eps, eps, rng),
                                         make_chain(q, target, K, eps, eps, rng))
            assert res.admissible and res.slack >= -1e-9

    def test_extremal_pairs_are_tight(self, rng):
        # pi at minimum decrements, rho at maximum: the bound holds with equality
        c = rng.normal(0, 2, 6)
        target, grid = boltzmann(c), random_grid(7, rng)
        a = make_chain(far_source(c), target, 7, 0.02, 0.06, grid=grid, mode="min")
        b = make_chain(0.5 * far_source(c) + 0.5 * random_dist(6, rng), target, 7, 0.02, 0.06, grid=grid, mode="max")
        res = check_theorem_discrete(a, b)
        assert res.slack == pytest.approx(0.0, abs=1e-9)
        assert res.slack >= -1e-9

    def test_counterexample_flags_assumption(self):
        target = np.array([0.9, 0.1])
        pi = [np.array([0.1, 0.9]), np.array([0.85, 0.15])]  # drops far more than eps_max
        rho = [np.array([0.5, 0.5]), np.array([0.5, 0.5])]  # does not improve at all
        grid = np.array([0.0, 1.0])
        chain_pi = ImprovementChain(pi, target, grid, 0.01, 0.02)
        chain_rho = ImprovementChain(rho, target, grid, 0.01, 0.02)
        res = check_theorem_discrete(chain_rho, chain_pi)
        assert not res.holds and res.slack < -0.1
        assert not res.admissible and not res.theorem_failure
        assert set(res.assumption_violations) == {"pi", "rho"}

    def test_mismatched_grids(self, rng):
        c, a, _ = self.chains(rng, K=4)
        _, b, _ = self.chains(rng, K=5)
        with pytest.raises(ValueError, match="grid"):
            check_theorem_discrete(a, b)

    def test_cost_target_mismatch(self, rng):
        c, a, b = self.chains(rng)
        with pytest.raises(ValueError, match="boltzmann"):
            check_theorem_cost(a, b, c + np.arange(c.size))

    def test_continuous_limit(self):
        c = np.array([0.0, 1.0, 2.0, 3.0])
        target = boltzmann(c)
        slacks = continuous_limit_check(far_source(c), np.full(4, 0.25), target, 0.05, 0.1)
        assert set(slacks) == {10, 100, 1000}
        assert all(s >= -1e-9 for s in slacks.values())


class TestRunTheoryCheck:
    def test_small_run_has_no_violations(self):
        report = run_theory_check(instances=200, support_max=10, steps_max=20, seed=3)
        assert report["violations"] == []
        assert report["min_slack"] >= -1e-9
        assert report["instances"] == 200

    def test_deterministic(self):
        assert run_theory_check(40, 6, 8, seed=1) == run_theory_check(40, 6, 8, seed=1)
