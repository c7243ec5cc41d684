import math

import numpy as np
import pytest

from pairgp.dataset import BoxSpec, build_dataset
from pairgp.engine import (
    Population,
    generation_stage,
    metropolis_accept,
    mutation_stage,
    sort_population,
    step,
    tournament_select,
)
from pairgp.expr import DepthLimits, parse_infix, random_tree

LIMITS = DepthLimits(3, 4)


def random_population(n, dataset, rng):
    from pairgp.fitness import population_fitness
    trees = [random_tree(LIMITS, 20, rng) for _ in range(n)]
    return sort_population(trees, population_fitness(trees, dataset))


@pytest.fixture(scope="module")
def data():
    return build_dataset(BoxSpec(), 10, seed=0)


class TestSortPopulation:
    def test_descending_with_parsimony_ties(self):
        trees = [parse_infix(s) for s in ["R + 1", "R", "(R + 1)*(R - 2)"]]
        pop = sort_population(trees, [-1.0, -1.0, 0.0])
        assert pop.fitness == [0.0, -1.0, -1.0]
        assert pop.trees[1].size == 1  # smaller tree wins the tie

    def test_stable_on_full_ties(self):
        trees = [parse_infix(s) for s in ["R + 1", "R + 2", "R + 3"]]
        pop = sort_population(trees, [-1.0, -1.0, -1.0])
        assert [t.children[1].value for t in pop.trees] == [1, 2, 3]


class TestTournament:
    def test_single_member(self):
        pop = Population([parse_infix("R")], [0.0])
        rng = np.random.default_rng(0)
        assert all(tournament_select(pop, rng) == 0 for _ in range(100))

    def test_closed_form_hit_rate(self):
        # one finite tree among -inf fillers: P(select it) = 1 - (1 - 1/N)^4
        n = 4
        trees = [parse_infix("R")] * n
        pop = Population(trees, [0.0] + [-math.inf] * (n - 1))
        rng = np.random.default_rng(1)
        trials = 100_000
        hits = sum(tournament_select(pop, rng) == 0 for _ in range(trials))
        p = 1.0 - (1.0 - 1.0 / n) ** 4
        sigma = math.sqrt(p * (1 - p) / trials)
        assert abs(hits / trials - p) < 3 * sigma

    def test_uniform_when_all_tie(self):
        n = 8
        trees = [parse_infix("R")] * n
        pop = Population(trees, [-1.0] * n)
        rng = np.random.default_rng(2)
        counts = [0] * n
        trials = 100_000
        for _ in range(trials):
            counts[tournament_select(pop, rng)] += 1
        expected = trials / n
        chi2 = sum((c - expected) ** 2 / expected for c in counts)
        assert chi2 < (n - 1) + 3 * math.sqrt(2 * (n - 1))


class TestGenerationStage:
    def test_single_slot_pass_through(self, data):
        rng = np.random.default_rng(3)
        pop = random_population(8, data, rng)

        class FixedCoin:
            def __init__(self, rng):
                self.rng = rng

            def random(self, *args, **kwargs):
                return np.zeros(args[0]) if args else 0.0  # always pass-through

            def integers(self, *args, **kwargs):
                return self.rng.integers(*args, **kwargs)

        new, n_pass, n_cross = generation_stage(pop, LIMITS, FixedCoin(rng))
        assert new == pop.trees  # cursor order = fitness order
        assert n_pass == 8 and n_cross == 0

    def test_pass_through_fraction_binomial(self, data):
        rng = np.random.default_rng(4)
        pop = random_population(100, data, rng)
        total_pass = 0
        total = 0
        for _ in range(100):
            _, n_pass, n_cross = generation_stage(pop, LIMITS, rng)
            total_pass += n_pass
            total += n_pass + n_cross
        p = total_pass / total
        sigma = math.sqrt(0.25 / total)
        assert abs(p - 0.5) < 3 * sigma

    def test_population_size_preserved(self, data):
        rng = np.random.default_rng(5)
        pop = random_population(50, data, rng)
        new, n_pass, n_cross = generation_stage(pop, LIMITS, rng)
        assert len(new) == 50 and n_pass + n_cross == 50

    def test_depth_closure(self, data):
        rng = np.random.default_rng(6)
        pop = random_population(100, data, rng)
        for _ in range(20):
            new, _, _ = generation_stage(pop, LIMITS, rng)
            assert all(LIMITS.k_min <= t.depth <= LIMITS.k_max for t in new)


class TestMutationStage:
    def test_probability_zero_is_identity(self, data):
        rng = np.random.default_rng(7)
        trees = [random_tree(LIMITS, 20, rng) for _ in range(50)]
        out, n_mut = mutation_stage(trees, LIMITS, rng, p_mutate=0.0)
        assert out == trees and n_mut == 0
        assert all(a is b for a, b in zip(out, trees))

    def test_probability_one_mutates_every_slot(self):
        rng = np.random.default_rng(8)
        trees = [random_tree(LIMITS, 20, rng) for _ in range(50)]
        out, n_mut = mutation_stage(trees, LIMITS, rng, p_mutate=1.0)
        assert n_mut == 50
        assert all(LIMITS.k_min <= t.depth <= LIMITS.k_max for t in out)

    def test_default_fraction_binomial(self):
        rng = np.random.default_rng(9)
        trees = [random_tree(LIMITS, 20, rng) for _ in range(10_000)]
        _, n_mut = mutation_stage(trees, LIMITS, rng)
        sigma = math.sqrt(10_000 * 0.25)
        assert abs(n_mut - 5000) < 3 * sigma


class TestMetropolis:
    def test_improvement_always_accepted(self):
        rng = np.random.default_rng(10)
        for _ in range(1000):
            assert metropolis_accept(-1.0, -2.0, 0.5, rng)

    def test_half_probability_point(self):
        # f_new - f_old = -T ln 2  ->  acceptance probability exactly 1/2
        rng = np.random.default_rng(11)
        temp = 0.7
        delta = -temp * math.log(2.0)
        trials = 100_000
        hits = sum(metropolis_accept(-5.0 + delta, -5.0, temp, rng)
                   for _ in range(trials))
        sigma = math.sqrt(trials * 0.25)
        assert abs(hits - trials / 2) < 3 * sigma

    def test_minus_inf_challenger_never_accepted(self):
        rng = np.random.default_rng(12)
        assert not any(metropolis_accept(-math.inf, -1.0, 10.0, rng)
                       for _ in range(1000))
        assert not any(metropolis_accept(-math.inf, -math.inf, 10.0, rng)
                       for _ in range(1000))

    def test_minus_inf_incumbent_always_replaced_by_finite(self):
        rng = np.random.default_rng(13)
        assert all(metropolis_accept(-1e300, -math.inf, 0.1, rng)
                   for _ in range(1000))

    def test_temperature_validation(self):
        rng = np.random.default_rng(14)
        with pytest.raises(ValueError):
            metropolis_accept(0.0, 0.0, 0.0, rng)


class TestStep:
    def test_greedy_limit_never_regresses(self, data):
        rng = np.random.default_rng(15)
        pop = random_population(50, data, rng)
        for _ in range(10):
            new_pop, stats = step(pop, 1e-12, LIMITS, data, rng)
            assert new_pop.fitness[0] >= pop.fitness[0]
            assert stats.best_after >= stats.best_before
            pop = new_pop

    def test_planted_best_survives_greedy_step(self, data):
        rng = np.random.default_rng(16)
        pop = random_population(30, data, rng)
        lj = parse_infix("4/(R^12) - 4/(R^6)")
        from pairgp.fitness import tree_fitness
        trees = [lj] + pop.trees[1:]
        fits = [tree_fitness(lj, data)] + pop.fitness[1:]
        pop = sort_population(trees, fits)
        new_pop, _ = step(pop, 1e-12, LIMITS, data, rng)
        assert new_pop.fitness[0] >= pop.fitness[0]

    def test_population_size_invariant(self, data):
        rng = np.random.default_rng(17)
        pop = random_population(40, data, rng)
        new_pop, stats = step(pop, 1.0, LIMITS, data, rng)
        assert len(new_pop) == 40
        assert stats.pass_throughs + stats.crossovers == 40
        assert stats.acceptances <= 40

    def test_identical_trees_keep_identical_fitness(self, data):
        from pairgp.fitness import tree_fitness
        rng = np.random.default_rng(18)
        t = parse_infix("(R + 1)*(R^(-12))")
        f = tree_fitness(t, data)
        pop = sort_population([t, t], [f, f])
        new_pop, _ = step(pop, 1e-12, LIMITS, data, rng)
        assert new_pop.fitness[0] >= f

    def test_deterministic(self, data):
        def run_once():
            rng = np.random.default_rng(19)
            pop = random_population(30, data, rng)
            for _ in range(5):
                pop, _ = step(pop, 0.5, LIMITS, data, rng)
            return pop.trees, pop.fitness
        trees_a, fits_a = run_once()
        trees_b, fits_b = run_once()
        assert trees_a == trees_b and fits_a == fits_b

    def test_fitness_cache_does_not_change_results(self, data):
        def run_once(cache):
            rng = np.random.default_rng(20)
            pop = random_population(30, data, rng)
            for _ in range(5):
                pop, _ = step(pop, 0.5, LIMITS, data, rng, fitness_cache=cache)
            return pop.fitness
        assert run_once(None) == run_once({})


class TestCreationCategoryMix:
    def test_quarter_each(self, data):
        # record the two coin arrays an actual generation consumes and
        # classify each slot: {pass, crossover} x {mutated, untouched}
        rng = np.random.default_rng(21)
        pop = random_population(100, data, rng)

        class CoinRecorder:
            def __init__(self, rng):
                self.rng = rng
                self.coin_arrays = []

            def random(self, *args, **kwargs):
                v = self.rng.random(*args, **kwargs)
                if args and np.ndim(v) == 1:
                    self.coin_arrays.append(v < 0.5)
                return v

            def integers(self, *args, **kwargs):
                return self.rng.integers(*args, **kwargs)

        counts = {(False, False): 0, (False, True): 0,
                  (True, False): 0, (True, True): 0}
        n_slots = 0
        for _ in range(100):
            rec = CoinRecorder(rng)
            new, _, _ = generation_stage(pop, LIMITS, rec)
            mutation_stage(new, LIMITS, rec)
            gen_coins, mut_coins = rec.coin_arrays
            for g, m in zip(gen_coins, mut_coins):
                counts[(bool(g), bool(m))] += 1
                n_slots += 1
        assert n_slots >= 10_000
        sigma = math.sqrt(n_slots * 0.25 * 0.75)
        for combo, c in counts.items():
            assert abs(c - n_slots / 4) < 3 * sigma, (combo, c, n_slots)
