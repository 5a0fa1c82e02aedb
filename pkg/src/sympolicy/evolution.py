"""Multi-tree genetic programming with island subpopulations.

One generation: evaluate every new individual, copy the elites of each island,
then fill the island by reproduction (crossover, mutation, simplification or a
fresh sample) from tournament-selected parents.  Selection uses the
size-regularised fitness; reporting uses the raw fitness.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .exprtree import (
    ExprTree,
    FunctionSet,
    Node,
    arity,
    depth,
    get_at,
    iter_nodes,
    render,
    replace_at,
    sample_node,
    simplify,
    size,
)
from .policies import DynamicPolicy, PolicyShape, StaticPolicy, readouts_observe, references_latent

log = logging.getLogger(__name__)

FLOOR_FITNESS = -1e6
MAX_RETRIES = 10
MUTATION_KINDS = ("relabel", "subtree", "leaf", "insert", "delete")


class EngineError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ReproductionProfile:
    crossover: float = 0.6
    mutation: float = 0.25
    simplify: float = 0.05
    sample: float = 0.10

    def __post_init__(self):
        p = self.as_array()
        if (p < 0).any() or not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
            raise ValueError(f"reproduction probabilities must be >= 0 and sum to 1, got {p}")

    def as_array(self) -> np.ndarray:
        return np.array([self.crossover, self.mutation, self.simplify, self.sample])


def graded_profiles(n: int, mutation=(0.15, 0.35), sample=(0.05, 0.20), simplify_p: float = 0.05):
    """Island profiles from exploiting (few mutations, few samples) to exploring."""
    if n == 1:
        return (ReproductionProfile(),)
    mut = np.linspace(*mutation, n)
    smp = np.linspace(*sample, n)
    return tuple(ReproductionProfile(1 - m - s - simplify_p, m, simplify_p, s) for m, s in zip(mut, smp))


@dataclass(frozen=True)
class GPConfig:
    population_size: int = 200
    generations: int = 20
    elite_fraction: float = 0.1
    latent_size: int = 0
    control_dim: int = 1
    operators: tuple[str, ...] = ("add", "sub", "mul", "div", "pow")
    shape: PolicyShape = PolicyShape(1, 1, 0, 0)
    n_subpops: int = 4
    profiles: tuple[ReproductionProfile, ...] | None = None
    crossover_mix: tuple[float, float, float] = (0.6, 0.2, 0.2)  # subtree, uniform, tree swap
    tournament_size: int = 5
    size_penalty: float = 0.01
    init_depth: tuple[int, int] = (2, 4)
    max_depth: int = 7
    batch_size: int = 32
    migration_interval: int = 10
    migration_size: int = 2
    const_range: tuple[float, float] = (-5.0, 5.0)
    p_const: float = 0.3
    p_leaf: float = 0.3
    p_internal: float = 0.9  # chance a crossover point is an operator node, when the tree has one
    # "reference": readouts mention a latent; "observed": that latent must also be driven by y
    latent_constraint: str = "observed"
    seed: int = 0
    workers: int | None = None

    def __post_init__(self):
        if not 0 < self.elite_fraction < 1:
            raise ValueError("elite_fraction must lie in (0, 1)")
        if self.population_size < 1 or self.generations < 1:
            raise ValueError("population_size and generations must be >= 1")
        if not 1 <= self.n_subpops <= self.population_size:
            raise ValueError("need between 1 and population_size subpopulations")
        if self.latent_constraint not in ("reference", "observed"):
            raise ValueError("latent_constraint must be 'reference' or 'observed'")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")
        lo, hi = self.init_depth
        if not 1 <= lo <= hi <= self.max_depth:
            raise ValueError("need 1 <= init depth range <= max_depth")
        mix = np.asarray(self.crossover_mix, dtype=float)
        if (mix < 0).any() or not math.isclose(mix.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("crossover_mix must be non-negative and sum to 1")
        object.__setattr__(self, "operators", tuple(self.operators))
        object.__setattr__(self, "shape", PolicyShape(self.shape.M, self.control_dim, self.shape.P, self.latent_size))
        if self.profiles is None:
            object.__setattr__(self, "profiles", graded_profiles(self.n_subpops))
        if len(self.profiles) != self.n_subpops:
            raise ValueError("need one reproduction profile per subpopulation")

    @property
    def dynamic(self) -> bool:
        return self.latent_size > 0

    @property
    def n_trees(self) -> int:
        return self.latent_size + self.control_dim

    @property
    def signatures(self) -> tuple[tuple[str, ...], ...]:
        s = self.shape
        if not self.dynamic:
            return (s.static_signature,) * s.C
        return (s.state_signature,) * s.H + (s.readout_signature,) * s.C

    def function_sets(self) -> tuple[FunctionSet, ...]:
        return tuple(FunctionSet(self.operators, sig, self.const_range, self.p_const, self.p_leaf)
                     for sig in self.signatures)

    def is_readout(self, position: int) -> bool:
        return self.dynamic and position >= self.latent_size

    @property
    def n_elites(self) -> int:
        return int(round(self.elite_fraction * self.population_size))

    def island_sizes(self) -> list[int]:
        base, extra = divmod(self.population_size, self.n_subpops)
        return [base + (i < extra) for i in range(self.n_subpops)]

    def island_elites(self) -> list[int]:
        base, extra = divmod(self.n_elites, self.n_subpops)
        return [min(base + (i < extra), n) for i, n in enumerate(self.island_sizes())]

    def resolved_workers(self) -> int:
        cap = os.environ.get("SYMPOLICY_THREADS")
        n = self.workers or os.cpu_count() or 1
        if cap:
            n = min(n, max(1, int(cap)))
        return max(1, n)

    @classmethod
    def for_experiment(cls, exp, dynamic: bool, **overrides) -> "GPConfig":
        kw = dict(
            population_size=exp.population_size,
            generations=exp.generations,
            latent_size=exp.latent_size if dynamic else 0,
            control_dim=exp.control_dim,
            operators=exp.operators,
            shape=PolicyShape.of(exp),
        )
        kw.update(overrides)
        return cls(**kw)


# ---------------------------------------------------------------------------
# individuals


@dataclass
class Individual:
    trees: tuple[ExprTree, ...]
    fitness: float | None = None
    regularized: float | None = None

    def __post_init__(self):
        self.trees = tuple(self.trees)

    def key(self) -> tuple:
        return tuple(t.root.key() for t in self.trees)

    @property
    def size(self) -> int:
        return sum(t.size for t in self.trees)

    @property
    def depth(self) -> int:
        return max(t.depth for t in self.trees)

    def clone(self) -> "Individual":
        return Individual(self.trees, self.fitness, self.regularized)

    def fresh(self) -> "Individual":
        return Individual(self.trees)

    def texts(self) -> list[str]:
        return [render(t) for t in self.trees]

    def to_policy(self, cfg: GPConfig) -> StaticPolicy | DynamicPolicy:
        if cfg.dynamic:
            H = cfg.latent_size
            return DynamicPolicy(self.trees[:H], self.trees[H:], cfg.shape)
        return StaticPolicy(self.trees, cfg.shape)


def is_valid(ind: Individual, cfg: GPConfig) -> bool:
    if len(ind.trees) != cfg.n_trees:
        return False
    for k, t in enumerate(ind.trees):
        if t.depth > cfg.max_depth:
            return False
        if cfg.is_readout(k) and not references_latent(t, cfg.latent_size):
            return False
    if cfg.dynamic and cfg.latent_constraint == "observed":
        H = cfg.latent_size
        return readouts_observe(ind.trees[:H], ind.trees[H:], cfg.shape)
    return True


def regularized_fitness(raw: float, ind: Individual, penalty_coeff: float) -> float:
    return float(raw) - penalty_coeff * ind.size


@dataclass
class Population:
    subpops: list[list[Individual]]
    generation: int = 0

    def __len__(self) -> int:
        return sum(len(s) for s in self.subpops)

    def __iter__(self):
        for s in self.subpops:
            yield from s

    def individuals(self) -> list[Individual]:
        return list(self)


# ---------------------------------------------------------------------------
# sampling


def _sample_tree(fs: FunctionSet, d: int, mode: str, rng) -> ExprTree:
    return ExprTree(sample_node(fs, d, mode, rng), fs.signature)


def sample_individual(cfg: GPConfig, rng: np.random.Generator, d: int | None = None,
                      mode: str | None = None) -> Individual:
    fsets = cfg.function_sets()
    lo, hi = cfg.init_depth
    d = int(rng.integers(lo, hi + 1)) if d is None else d
    mode = ("full", "grow")[int(rng.integers(2))] if mode is None else mode
    while True:
        trees = []
        for k, fs in enumerate(fsets):
            t = _sample_tree(fs, d, mode, rng)
            while cfg.is_readout(k) and not references_latent(t, cfg.latent_size):
                t = _sample_tree(fs, d, mode, rng)
            trees.append(t)
        ind = Individual(tuple(trees))
        if is_valid(ind, cfg):
            return ind


def init_population(cfg: GPConfig, rng: np.random.Generator) -> Population:
    """Ramped half-and-half: individuals cycle through (depth, mode) over the initial depth range."""
    lo, hi = cfg.init_depth
    combos = [(d, m) for d in range(lo, hi + 1) for m in ("full", "grow")]
    subpops = []
    for n in cfg.island_sizes():
        island = []
        for i in range(n):
            d, m = combos[i % len(combos)]
            island.append(sample_individual(cfg, rng, d, m))
        subpops.append(island)
    return Population(subpops, 0)


# ---------------------------------------------------------------------------
# selection


def tournament_select(pop: Sequence[Individual], k: int, rng: np.random.Generator) -> Individual:
    if not pop:
        raise EngineError("tournament on an empty population")
    if k < 1:
        raise EngineError("tournament size must be >= 1")
    best = None
    for i in rng.integers(len(pop), size=k):
        ind = pop[int(i)]
        if ind.regularized is None:
            raise EngineError("tournament needs evaluated individuals")
        if best is None or ind.regularized > best.regularized:
            best = ind
    return best


# ---------------------------------------------------------------------------
# variation


def _retry(op, parents: tuple[Individual, ...], cfg: GPConfig, rng):
    for _ in range(MAX_RETRIES):
        children = op()
        if children is not None and all(is_valid(c, cfg) for c in children):
            return children
    return tuple(p.fresh() for p in parents)


def _with_tree(ind: Individual, k: int, tree: ExprTree) -> Individual:
    trees = list(ind.trees)
    trees[k] = tree
    return Individual(tuple(trees))


def _random_path(tree: ExprTree, rng, p_internal: float = 0.0) -> tuple[tuple[int, ...], Node, int]:
    nodes = list(iter_nodes(tree.root))
    inner = [n for n in nodes if n[1].children]
    if inner and rng.random() < p_internal:
        return inner[int(rng.integers(len(inner)))]
    return nodes[int(rng.integers(len(nodes)))]


def _crossover_position(a: Individual, b: Individual, rng) -> int:
    """A tree position where the parents differ; any position if they are identical."""
    differ = [k for k, (ta, tb) in enumerate(zip(a.trees, b.trees)) if ta.root != tb.root]
    if not differ:
        return int(rng.integers(len(a.trees)))
    return differ[int(rng.integers(len(differ)))]


def crossover_subtree(a: Individual, b: Individual, rng: np.random.Generator, cfg: GPConfig):
    def op():
        k = _crossover_position(a, b, rng)
        ta, tb = a.trees[k], b.trees[k]
        pa, na, _ = _random_path(ta, rng, cfg.p_internal)
        pb, nb, _ = _random_path(tb, rng, cfg.p_internal)
        ca = ExprTree(replace_at(ta.root, pa, nb), ta.signature)
        cb = ExprTree(replace_at(tb.root, pb, na), tb.signature)
        return _with_tree(a, k, ca), _with_tree(b, k, cb)

    return _retry(op, (a, b), cfg, rng)


def _uniform_swap(x: Node, y: Node, rng) -> tuple[Node, Node]:
    if len(x.children) != len(y.children):
        return x, y
    if rng.random() < 0.5:
        x_lab, y_lab = (y.op, y.value), (x.op, x.value)
    else:
        x_lab, y_lab = (x.op, x.value), (y.op, y.value)
    kx, ky = [], []
    for cx, cy in zip(x.children, y.children):
        nx, ny = _uniform_swap(cx, cy, rng)
        kx.append(nx)
        ky.append(ny)
    return Node(x_lab[0], tuple(kx), x_lab[1]), Node(y_lab[0], tuple(ky), y_lab[1])


def crossover_uniform(a: Individual, b: Individual, rng: np.random.Generator, cfg: GPConfig):
    """Swap node labels at aligned positions of equal arity, keeping the children in place."""

    def op():
        k = _crossover_position(a, b, rng)
        ta, tb = a.trees[k], b.trees[k]
        ra, rb = _uniform_swap(ta.root, tb.root, rng)
        return _with_tree(a, k, ExprTree(ra, ta.signature)), _with_tree(b, k, ExprTree(rb, tb.signature))

    return _retry(op, (a, b), cfg, rng)


def crossover_tree_swap(a: Individual, b: Individual, rng: np.random.Generator, cfg: GPConfig):
    def op():
        k = _crossover_position(a, b, rng)
        return _with_tree(a, k, b.trees[k]), _with_tree(b, k, a.trees[k])

    return _retry(op, (a, b), cfg, rng)


def _mutate_tree(tree: ExprTree, kind: str, fs: FunctionSet, cfg: GPConfig, rng) -> ExprTree | None:
    root = tree.root
    nodes = list(iter_nodes(root))
    if kind == "relabel":
        internal = [(p, n) for p, n, _ in nodes if n.children]
        if not internal:
            return None
        p, n = internal[int(rng.integers(len(internal)))]
        choices = [o for o in fs.operators if arity(o) == len(n.children) and o != n.op]
        if not choices:
            return None
        new = Node(choices[int(rng.integers(len(choices)))], n.children)
    elif kind == "subtree":
        p, n, level = nodes[int(rng.integers(len(nodes)))]
        room = cfg.max_depth - level + 1
        d = int(rng.integers(1, min(room, cfg.init_depth[1]) + 1))
        new = sample_node(fs, d, "grow", rng)
    elif kind == "leaf":
        leaves = [(p, n) for p, n, _ in nodes if not n.children]
        p, n = leaves[int(rng.integers(len(leaves)))]
        if n.op == "const":
            new = Node.const(float(n.value + rng.standard_normal()))
        else:
            others = [s for s in range(len(fs.signature)) if s != n.value]
            if not others:
                return None
            new = Node.var(others[int(rng.integers(len(others)))])
    elif kind == "insert":
        p, n, _ = nodes[int(rng.integers(len(nodes)))]
        op = fs.sample_operator(rng)
        if arity(op) == 1:
            new = Node(op, (n,))
        else:
            leaf = fs.sample_leaf(rng)
            new = Node(op, (n, leaf) if rng.random() < 0.5 else (leaf, n))
    elif kind == "delete":
        internal = [(p, n) for p, n, _ in nodes if n.children]
        if not internal:
            return None
        p, n = internal[int(rng.integers(len(internal)))]
        new = n.children[int(rng.integers(len(n.children)))]
    else:
        raise EngineError(f"unknown mutation kind {kind!r}")
    return ExprTree(replace_at(root, p, new), tree.signature)


def mutate(a: Individual, rng: np.random.Generator, cfg: GPConfig, kind: str | None = None) -> Individual:
    """Modify one randomly chosen tree with one mutation kind."""
    fsets = cfg.function_sets()

    def op():
        k = int(rng.integers(len(a.trees)))
        which = kind or MUTATION_KINDS[int(rng.integers(len(MUTATION_KINDS)))]
        t = _mutate_tree(a.trees[k], which, fsets[k], cfg, rng)
        return None if t is None else (_with_tree(a, k, t),)

    return _retry(op, (a,), cfg, rng)[0]


def simplify_individual(a: Individual, cfg: GPConfig) -> Individual:
    child = Individual(tuple(simplify(t) for t in a.trees))
    return child if is_valid(child, cfg) else a.fresh()


# ---------------------------------------------------------------------------
# generation step


def _migrate(new_subpops: list[list[Individual]], old: Population, cfg: GPConfig, elites: list[int]):
    """Ring migration: the best of island i replace the last offspring of island i+1."""
    S = len(old.subpops)
    for i in range(S):
        src = sorted(old.subpops[i], key=lambda ind: ind.regularized, reverse=True)[: cfg.migration_size]
        dst = new_subpops[(i + 1) % S]
        room = len(dst) - elites[(i + 1) % S]
        for j, ind in enumerate(src[:room]):
            dst[len(dst) - 1 - j] = ind.clone()


def step_generation(pop: Population, cfg: GPConfig, rng: np.random.Generator) -> Population:
    """Build the next population from an evaluated one."""
    elites = cfg.island_elites()
    mix = np.asarray(cfg.crossover_mix)
    crossovers = (crossover_subtree, crossover_uniform, crossover_tree_swap)
    new_subpops = []
    for island, n_elite, profile in zip(pop.subpops, elites, cfg.profiles):
        if any(ind.regularized is None for ind in island):
            raise EngineError("step_generation needs an evaluated population")
        ranked = sorted(island, key=lambda ind: ind.regularized, reverse=True)
        out = [ind.clone() for ind in ranked[:n_elite]]
        probs = profile.as_array()
        while len(out) < len(island):
            kind = int(rng.choice(4, p=probs))
            if kind == 0:
                a = tournament_select(island, cfg.tournament_size, rng)
                b = tournament_select(island, cfg.tournament_size, rng)
                children = crossovers[int(rng.choice(3, p=mix))](a, b, rng, cfg)
            elif kind == 1:
                children = (mutate(tournament_select(island, cfg.tournament_size, rng), rng, cfg),)
            elif kind == 2:
                children = (simplify_individual(tournament_select(island, cfg.tournament_size, rng), cfg),)
            else:
                children = (sample_individual(cfg, rng),)
            out.extend(children[: len(island) - len(out)])
        new_subpops.append(out)
    g = pop.generation + 1
    if cfg.n_subpops > 1 and cfg.migration_interval and g % cfg.migration_interval == 0:
        _migrate(new_subpops, pop, cfg, elites)
    return Population(new_subpops, g)


# ---------------------------------------------------------------------------
# driver


@dataclass(frozen=True)
class HistoryRow:
    generation: int
    subpopulation: int  # island holding the generation's best individual
    best_fitness: float  # best raw fitness evaluated so far
    mean_fitness: float  # mean raw fitness of the current generation
    generation_best: float
    best_expressions: tuple[str, ...]


@dataclass
class GPResult:
    best: Individual
    history: list[HistoryRow]
    population: Population
    evaluations: int
    cache_hits: int

    @property
    def best_fitness(self) -> float:
        return float(self.best.fitness)


def _clean(v) -> float:
    v = float(v)
    return v if math.isfinite(v) else FLOOR_FITNESS


def evaluate_population(pop: Population, evaluator: Callable[[Individual], float], cfg: GPConfig,
                        cache: dict | None = None) -> tuple[int, int]:
    """Assign fitness to every unevaluated individual; returns (evaluations, cache hits)."""
    cache = {} if cache is None else cache
    todo: dict[tuple, Individual] = {}
    hits = 0
    for ind in pop:
        if ind.fitness is not None:
            continue
        k = ind.key()
        if k in cache:
            hits += 1
        else:
            todo.setdefault(k, ind)
    keys = list(todo)
    workers = cfg.resolved_workers()
    try:
        if workers > 1 and len(keys) > 1:
            with ThreadPoolExecutor(workers) as ex:
                values = list(ex.map(lambda k: evaluator(todo[k]), keys))
        else:
            values = [evaluator(todo[k]) for k in keys]
    except Exception as err:
        raise EngineError(f"evaluator failed in generation {pop.generation}: {err}") from err
    for k, v in zip(keys, values):
        cache[k] = _clean(v)
    for ind in pop:
        if ind.fitness is None:
            ind.fitness = cache[ind.key()]
        ind.regularized = regularized_fitness(ind.fitness, ind, cfg.size_penalty)
    return len(keys), hits


def run_gp(cfg: GPConfig, evaluator: Callable[[Individual], float], rng: np.random.Generator | None = None,
           callback: Callable[[HistoryRow, Population], None] | None = None) -> GPResult:
    """Evolve for ``cfg.generations``; ``best`` is the fittest (raw) individual ever evaluated."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    pop = init_population(cfg, rng)
    cache: dict = {}
    history: list[HistoryRow] = []
    best: Individual | None = None
    n_eval = n_hit = 0
    for g in range(cfg.generations):
        e, h = evaluate_population(pop, evaluator, cfg, cache)
        n_eval += e
        n_hit += h
        gen_best, gen_island = None, 0
        for i, island in enumerate(pop.subpops):
            for ind in island:
                if gen_best is None or ind.fitness > gen_best.fitness:
                    gen_best, gen_island = ind, i
        if best is None or gen_best.fitness > best.fitness:
            best = gen_best.clone()
        row = HistoryRow(g, gen_island, best.fitness, float(np.mean([ind.fitness for ind in pop])),
                         gen_best.fitness, tuple(best.texts()))
        history.append(row)
        log.debug("generation %d best %.6g mean %.6g", g, row.best_fitness, row.mean_fitness)
        if callback is not None:
            callback(row, pop)
        if g < cfg.generations - 1:
            pop = step_generation(pop, cfg, rng)
    return GPResult(best, history, pop, n_eval, n_hit)
