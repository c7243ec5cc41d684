"""Replica ladder: temperature schedules, swaps, adaptation, and the run loop.

Each replica owns a random stream derived from the master seed; a separate
controller stream drives the swap stage.  The best tree ever seen is
tracked outside the populations, because position-wise Metropolis at high
temperature can discard the global best.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict

import numba
import numpy as np

from . import engine
from .expr import DepthLimits, DEFAULT_P_MAX, random_tree, to_infix
from .fitness import population_fitness

SCHEMES = ("linear", "logarithmic")
SWAP_POLICIES = ("random", "best")

#: memoized fitness entries kept before the cache is dropped and restarted
FITNESS_CACHE_CAP = 200_000


@dataclass
class LadderSpec:
    t_min: float = 0.1
    t_max: float = 10.0
    n_replicas: int = 32
    scheme: str = "logarithmic"
    adaptive: bool = False
    adapt_low: float = 0.2
    adapt_high: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.t_min:
            raise ValueError("t_min must be positive")
        if self.n_replicas < 1:
            raise ValueError("n_replicas must be >= 1")
        if self.n_replicas > 1 and not self.t_min < self.t_max:
            raise ValueError("require t_min < t_max")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not 0.0 <= self.adapt_low <= self.adapt_high <= 1.0:
            raise ValueError("require 0 <= adapt_low <= adapt_high <= 1")


@dataclass
class RunConfig:
    ladder: LadderSpec = field(default_factory=LadderSpec)
    population_size: int = 1000
    limits: DepthLimits = field(default_factory=DepthLimits)
    p_max: int = DEFAULT_P_MAX
    seed: int = 0
    max_generations: int = 300
    convergence_mse: float = 1e-9
    swap_attempts: int = 1
    swap_policy: str = "random"
    workers: int = 1
    dataset_path: str | None = None

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if self.p_max < 0:
            raise ValueError("p_max must be >= 0")
        if self.max_generations < 0:
            raise ValueError("max_generations must be >= 0")
        if self.convergence_mse < 0.0:
            raise ValueError("convergence_mse must be >= 0")
        if self.swap_attempts < 1:
            raise ValueError("swap_attempts must be >= 1")
        if self.swap_policy not in SWAP_POLICIES:
            raise ValueError(f"swap_policy must be one of {SWAP_POLICIES}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class Replica:
    population: engine.Population
    temperature: float
    rng: np.random.Generator
    index: int
    swap_attempts: int = 0
    swap_accepts: int = 0


@dataclass
class SwapStats:
    attempts: np.ndarray  # per adjacent pair
    accepts: np.ndarray

    @property
    def total_attempts(self):
        return int(self.attempts.sum())

    @property
    def total_accepts(self):
        return int(self.accepts.sum())

    @property
    def acceptance_rate(self):
        total = self.total_attempts
        return self.total_accepts / total if total else 0.0


@dataclass
class HistoryRow:
    generation: int
    best_fitness_overall: float
    best_mse_so_far: float
    replica_index_of_best: int
    temperature_of_best: float
    swap_acceptance_rate: float
    pass_through_count: int
    crossover_count: int
    mutation_count: int
    best_tree_infix: str


HISTORY_FIELDS = [f for f in HistoryRow.__dataclass_fields__]


@dataclass
class RunResult:
    best_tree: object
    best_tree_infix: str
    best_fitness: float
    generation_found: int
    history: list
    swap_attempts_total: int
    swap_accepts_total: int
    converged: bool


def ladder(spec):
    """Replica temperatures, ascending; endpoints exactly t_min and t_max."""
    n = spec.n_replicas
    if n == 1:
        return [spec.t_min]
    if spec.scheme == "linear":
        ts = np.linspace(spec.t_min, spec.t_max, n)
    else:
        ts = np.exp(np.linspace(math.log(spec.t_min), math.log(spec.t_max), n))
        ts[0] = spec.t_min
        ts[-1] = spec.t_max
    return [float(t) for t in ts]


def swap_stage(replicas, rng, attempts=1, policy="random"):
    """Attempt tree exchanges between each adjacent temperature pair.

    Exchange of trees (a, b) between replicas (i, i+1) is accepted with
    probability min{1, exp[(1/T_i - 1/T_{i+1})(F_a - F_b)]}; on acceptance
    the trees and their cached fitness swap places and both populations are
    re-sorted.
    """
    if policy not in SWAP_POLICIES:
        raise ValueError(f"policy must be one of {SWAP_POLICIES}")
    n_pairs = max(len(replicas) - 1, 0)
    stats = SwapStats(np.zeros(n_pairs, dtype=np.int64),
                      np.zeros(n_pairs, dtype=np.int64))
    for p in range(n_pairs):
        lo, hi = replicas[p], replicas[p + 1]
        for _ in range(attempts):
            if policy == "best":
                ia = ib = 0
            else:
                ia = int(rng.integers(0, len(lo.population)))
                ib = int(rng.integers(0, len(hi.population)))
            u = rng.random()
            fa = lo.population.fitness[ia]
            fb = hi.population.fitness[ib]
            stats.attempts[p] += 1
            lo.swap_attempts += 1
            hi.swap_attempts += 1
            if fa == fb:
                accept = True
            else:
                exponent = (1.0 / lo.temperature - 1.0 / hi.temperature) * (fa - fb)
                accept = exponent >= 0.0 or u < math.exp(exponent)
            if accept:
                stats.accepts[p] += 1
                lo.swap_accepts += 1
                hi.swap_accepts += 1
                lo_trees = list(lo.population.trees)
                lo_fit = list(lo.population.fitness)
                hi_trees = list(hi.population.trees)
                hi_fit = list(hi.population.fitness)
                lo_trees[ia], hi_trees[ib] = hi_trees[ib], lo_trees[ia]
                lo_fit[ia], hi_fit[ib] = hi_fit[ib], lo_fit[ia]
                lo.population = engine.sort_population(lo_trees, lo_fit)
                hi.population = engine.sort_population(hi_trees, hi_fit)
    return stats


def adapt_temperatures(replicas, stats, low, high, rate=0.1):
    """Nudge interior temperatures in log space by the swap acceptance rates.

    A replica whose mean neighbor acceptance is below [low, high] moves
    `rate` of the way toward the log-mean of its neighbors; above the band
    it moves away.  Endpoints stay fixed and strict monotonicity is
    preserved by clamping.
    """
    n = len(replicas)
    if n < 3:
        return
    log_t = [math.log(r.temperature) for r in replicas]
    pair_rate = []
    for p in range(n - 1):
        att = int(stats.attempts[p])
        pair_rate.append(int(stats.accepts[p]) / att if att else None)
    proposed = list(log_t)
    for i in range(1, n - 1):
        rates = [r for r in (pair_rate[i - 1], pair_rate[i]) if r is not None]
        if not rates:
            continue
        mean_rate = sum(rates) / len(rates)
        target = 0.5 * (log_t[i - 1] + log_t[i + 1])
        if mean_rate < low:
            proposed[i] = log_t[i] + rate * (target - log_t[i])
        elif mean_rate > high:
            proposed[i] = log_t[i] - rate * (target - log_t[i])
    # clamp to keep the ladder strictly increasing, endpoints pinned
    final = list(proposed)
    for i in range(1, n - 1):
        lo_bound = final[i - 1] + 1e-9
        hi_bound = log_t[i + 1] - 1e-9
        final[i] = min(max(proposed[i], lo_bound), hi_bound)
    for i in range(1, n - 1):
        replicas[i].temperature = math.exp(final[i])


def _best_instant(replicas):
    """(fitness, replica index) of the currently-best tree; first wins ties."""
    best_i = 0
    best_f = replicas[0].population.fitness[0]
    for r in replicas[1:]:
        if r.population.fitness[0] > best_f:
            best_f = r.population.fitness[0]
            best_i = r.index
    return best_f, best_i


def run(config, dataset, planted=None, history_callback=None):
    """Full parallel-tempering run; a pure function of (config, seed, dataset).

    planted: optional list of (replica_index, tree) pairs injected into the
    initial populations (test hook for manufactured-solution checks).
    history_callback: called with each HistoryRow as it is produced, so
    interrupted runs keep their completed rows.
    """
    if not dataset.cases:
        raise ValueError("dataset has no cases")
    numba.set_num_threads(min(config.workers, numba.config.NUMBA_NUM_THREADS))
    temps = ladder(config.ladder)
    streams = np.random.SeedSequence(config.seed).spawn(len(temps) + 1)
    controller = np.random.default_rng(streams[-1])

    plant_by_replica = {}
    if planted:
        for idx, tree in planted:
            plant_by_replica.setdefault(idx, []).append(tree)

    replicas = []
    for i, temp in enumerate(temps):
        rng = np.random.default_rng(streams[i])
        trees = [random_tree(config.limits, config.p_max, rng)
                 for _ in range(config.population_size)]
        for slot, tree in enumerate(plant_by_replica.get(i, ())):
            trees[slot] = tree
        fits = population_fitness(trees, dataset)
        replicas.append(Replica(engine.sort_population(trees, fits),
                                float(temp), rng, i))

    fitness_cache = {}
    history = []
    best_fit = -math.inf
    best_tree = None
    best_gen = 0
    converged = False
    gen = 0
    while True:
        if gen > 0:
            gen_pass = gen_cross = gen_mut = 0
            for rep in replicas:
                rep.population, stats = engine.step(
                    rep.population, rep.temperature, config.limits, dataset,
                    rep.rng, p_max=config.p_max, fitness_cache=fitness_cache)
                gen_pass += stats.pass_throughs
                gen_cross += stats.crossovers
                gen_mut += stats.mutations
            swap_stats = swap_stage(replicas, controller,
                                    attempts=config.swap_attempts,
                                    policy=config.swap_policy)
            if config.ladder.adaptive:
                adapt_temperatures(replicas, swap_stats,
                                   config.ladder.adapt_low,
                                   config.ladder.adapt_high)
            swap_rate = swap_stats.acceptance_rate
            if len(fitness_cache) > FITNESS_CACHE_CAP:
                fitness_cache.clear()
        else:
            gen_pass = gen_cross = gen_mut = 0
            swap_rate = 0.0

        inst_fit, inst_idx = _best_instant(replicas)
        if best_tree is None or inst_fit > best_fit:
            best_fit = inst_fit
            best_tree = replicas[inst_idx].population.trees[0]
            best_gen = gen
        row = HistoryRow(
            generation=gen,
            best_fitness_overall=inst_fit,
            best_mse_so_far=-best_fit,
            replica_index_of_best=inst_idx,
            temperature_of_best=replicas[inst_idx].temperature,
            swap_acceptance_rate=swap_rate,
            pass_through_count=gen_pass,
            crossover_count=gen_cross,
            mutation_count=gen_mut,
            best_tree_infix=to_infix(best_tree),
        )
        history.append(row)
        if history_callback is not None:
            history_callback(row)
        if -best_fit <= config.convergence_mse:
            converged = True
            break
        if gen >= config.max_generations:
            break
        gen += 1

    return RunResult(
        best_tree=best_tree,
        best_tree_infix=to_infix(best_tree),
        best_fitness=best_fit,
        generation_found=best_gen,
        history=history,
        swap_attempts_total=sum(r.swap_attempts for r in replicas) // 2,
        swap_accepts_total=sum(r.swap_accepts for r in replicas) // 2,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# history CSV

def _fmt(value):
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def history_row_values(row):
    return [_fmt(getattr(row, name)) for name in HISTORY_FIELDS]


def write_history_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_FIELDS)
        for row in rows:
            writer.writerow(history_row_values(row))


def config_to_dict(config):
    doc = asdict(config)
    doc["ladder"] = asdict(config.ladder)
    doc["limits"] = asdict(config.limits)
    return doc
