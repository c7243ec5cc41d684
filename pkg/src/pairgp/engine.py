"""One generation of a single replica: generation, mutation, testing stages.

The population is kept sorted by descending fitness; ties prefer fewer
nodes, then keep stable order.  All randomness flows through the replica's
own generator, so a (population, temperature, dataset, stream) tuple fully
determines the next generation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import expr
from .fitness import population_fitness, program_key


@dataclass
class Population:
    trees: list
    fitness: list

    def __post_init__(self):
        if not self.trees or len(self.trees) != len(self.fitness):
            raise ValueError("trees and fitness must be non-empty parallel lists")

    def __len__(self):
        return len(self.trees)


@dataclass
class GenerationStats:
    pass_throughs: int = 0
    crossovers: int = 0
    mutations: int = 0
    acceptances: int = 0
    best_before: float = -math.inf
    best_after: float = -math.inf


def sort_population(trees, fitness):
    """Population sorted by fitness descending; ties: fewer nodes, then stable."""
    order = sorted(range(len(trees)), key=lambda i: (-fitness[i], trees[i].size))
    return Population([trees[i] for i in order], [fitness[i] for i in order])


def _better(f_a, size_a, f_b, size_b):
    # strict ordering used inside tournaments: fitness first, then parsimony
    return f_a > f_b or (f_a == f_b and size_a < size_b)


def tournament_select(pop, rng):
    """Index of the fittest of 4 uniform draws; full ties keep the first draw."""
    draws = rng.integers(0, len(pop), size=4)
    best = int(draws[0])
    for d in draws[1:]:
        d = int(d)
        if _better(pop.fitness[d], pop.trees[d].size,
                   pop.fitness[best], pop.trees[best].size):
            best = d
    return best


def generation_stage(pop, limits, rng):
    """N new trees: per slot, a fair coin picks pass-through or crossover.

    Pass-through copies the fittest not-yet-copied old tree (cursor order);
    if the cursor exhausts the old population the slot falls back to
    crossover of two tournament-selected parents.
    """
    n = len(pop)
    coins = rng.random(n) < 0.5
    new_trees = []
    cursor = 0
    n_pass = 0
    for i in range(n):
        if coins[i] and cursor < n:
            new_trees.append(pop.trees[cursor])
            cursor += 1
            n_pass += 1
        else:
            a = pop.trees[tournament_select(pop, rng)]
            b = pop.trees[tournament_select(pop, rng)]
            new_trees.append(expr.crossover(a, b, limits, rng))
    return new_trees, n_pass, n - n_pass


def mutation_stage(new_trees, limits, rng, p_mutate=0.5, p_max=expr.DEFAULT_P_MAX):
    """Independently mutate each tree with probability p_mutate."""
    n = len(new_trees)
    if n == 0:
        return [], 0
    coins = rng.random(n) < p_mutate
    out = []
    n_mut = 0
    for tree, coin in zip(new_trees, coins):
        if coin:
            out.append(expr.mutate(tree, limits, rng, p_max=p_max))
            n_mut += 1
        else:
            out.append(tree)
    return out, n_mut


def metropolis_accept(f_new, f_old, temperature, rng):
    """Accept with probability min{1, exp[(f_new - f_old)/T]}.

    A -inf challenger never replaces anything (including another -inf).
    One uniform draw is consumed per call regardless of outcome.
    """
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    u = rng.random()
    if f_new == -math.inf:
        return False
    if f_old == -math.inf or f_new >= f_old:
        return True
    return u < math.exp((f_new - f_old) / temperature)


def step(pop, temperature, limits, dataset, rng,
         p_mutate=0.5, p_max=expr.DEFAULT_P_MAX, fitness_cache=None):
    """Advance one generation; returns (next population, stats).

    Old trees reuse their cached fitness.  fitness_cache, when given, is a
    dict keyed by compiled-program bytes memoizing fitness across
    generations (fitness is a pure function of the program and dataset).
    """
    stats = GenerationStats(best_before=pop.fitness[0])
    new_trees, stats.pass_throughs, stats.crossovers = generation_stage(pop, limits, rng)
    new_trees, stats.mutations = mutation_stage(
        new_trees, limits, rng, p_mutate=p_mutate, p_max=p_max)

    id_cache = {id(t): f for t, f in zip(pop.trees, pop.fitness)}
    new_fit = [None] * len(new_trees)
    eval_keys = {}  # program key -> slot list
    for i, tree in enumerate(new_trees):
        f = id_cache.get(id(tree))
        if f is None:
            key = program_key(tree)
            if fitness_cache is not None:
                f = fitness_cache.get(key)
            if f is None:
                eval_keys.setdefault(key, []).append(i)
                continue
        new_fit[i] = f
    if eval_keys:
        uniq = [new_trees[slots[0]] for slots in eval_keys.values()]
        values = population_fitness(uniq, dataset)
        for (key, slots), f in zip(eval_keys.items(), values):
            for i in slots:
                new_fit[i] = f
            if fitness_cache is not None:
                fitness_cache[key] = f

    next_trees = []
    next_fit = []
    for i in range(len(pop)):
        if metropolis_accept(new_fit[i], pop.fitness[i], temperature, rng):
            next_trees.append(new_trees[i])
            next_fit.append(new_fit[i])
            stats.acceptances += 1
        else:
            next_trees.append(pop.trees[i])
            next_fit.append(pop.fitness[i])
    next_pop = sort_population(next_trees, next_fit)
    stats.best_after = next_pop.fitness[0]
    return next_pop, stats
