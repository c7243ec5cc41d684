"""Rediscovery of pair-potential functional forms with a
parallel-tempering genetic program over algebraic expression trees."""

from .expr import (
    DepthLimits,
    Node,
    R,
    constant,
    count_search_space,
    crossover,
    depth,
    mutate,
    node_count,
    operator,
    parse_infix,
    random_tree,
    to_infix,
)
from .dataset import BoxSpec, Dataset, TrainingCase, build_dataset, lj_pair
from .fitness import compile_tree, eval_program, population_fitness, tree_fitness
from .engine import Population, metropolis_accept, step, tournament_select
from .tempering import LadderSpec, RunConfig, RunResult, ladder, run

__all__ = [
    "DepthLimits", "Node", "R", "constant", "count_search_space", "crossover",
    "depth", "mutate", "node_count", "operator", "parse_infix", "random_tree",
    "to_infix", "BoxSpec", "Dataset", "TrainingCase", "build_dataset",
    "lj_pair", "compile_tree", "eval_program", "population_fitness",
    "tree_fitness", "Population", "metropolis_accept", "step",
    "tournament_select", "LadderSpec", "RunConfig", "RunResult", "ladder",
    "run",
]

__version__ = "0.1.0"
