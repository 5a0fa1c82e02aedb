"""Experiment runner: configuration, method dispatch, persistence and replay."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .environments import PRESETS, Experiment, get_experiment
from .evolution import GPConfig, Individual, run_gp
from .exprtree import FunctionSet
from .optimizers import cma_ask, cma_init, cma_tell
from .policies import (
    DynamicPolicy,
    LqgController,
    NdePolicy,
    PolicyShape,
    StaticPolicy,
    parse_policy_text,
    sample_random_policy,
)
from .simulate import (
    TRAIN_STREAM,
    VALIDATION_BATCH,
    VALIDATION_STREAM,
    TrialBatch,
    batch_fitness,
    make_batch,
    simulate_batch,
    write_trajectory_csv,
)

log = logging.getLogger(__name__)

METHODS = ("gp-static", "gp-dynamic", "random-search", "nde-cmaes", "lqg")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    method: str
    population_size: int | None = None
    generations: int | None = None
    latent_size: int | None = None
    seed: int = 0
    runs: int = 1
    batch_size: int = 32
    validation_size: int = VALIDATION_BATCH
    validation_seed: int = 0
    horizon: float | None = None
    dt: float | None = None
    nde_latent: int = 5
    cma_sigma0: float = 0.5
    gp: dict = field(default_factory=dict)  # extra GPConfig fields
    out: str | None = None

    def __post_init__(self):
        if self.experiment not in PRESETS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {sorted(PRESETS)}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.method == "lqg" and get_experiment(self.experiment).env != "sho":
            raise ConfigError("lqg is only available for the oscillator experiments")
        for name in ("population_size", "generations", "runs", "batch_size", "validation_size"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.latent_size is not None and self.latent_size < 1:
            raise ConfigError("latent_size must be >= 1")
        for name in ("horizon", "dt"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ConfigError(f"{name} must be positive")
        bad = set(self.gp) - {f.name for f in fields(GPConfig)}
        if bad:
            raise ConfigError(f"unknown GP settings {sorted(bad)}")

    def resolved_experiment(self) -> Experiment:
        return get_experiment(self.experiment).with_timing(self.horizon, self.dt)

    @property
    def pop(self) -> int:
        return self.population_size or get_experiment(self.experiment).population_size

    @property
    def gens(self) -> int:
        return self.generations or get_experiment(self.experiment).generations

    @property
    def latent(self) -> int:
        return self.latent_size or get_experiment(self.experiment).latent_size

    def gp_config(self, seed: int) -> GPConfig:
        exp = self.resolved_experiment()
        dynamic = self.method != "gp-static"
        kw = dict(population_size=self.pop, generations=self.gens, batch_size=self.batch_size, seed=seed)
        if dynamic:
            kw["latent_size"] = self.latent
        kw.update(self.gp)
        return GPConfig.for_experiment(exp, dynamic, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)


@dataclass
class RunRecord:
    config: dict
    seed: int
    history: list[dict]
    best: dict  # {"kind": ..., "text": ...} or {"kind": "nde", "vector": [...], "shape": [...]}
    train_fitness: float | None
    validation_fitness: float | None
    validation: list[dict]
    wall_clock: float = 0.0
    status: str = "ok"
    error: str | None = None

    @property
    def experiment(self) -> str:
        return self.config["experiment"]

    def policy(self):
        return policy_from_best(self.best, ExperimentConfig.from_dict(self.config))


# ---------------------------------------------------------------------------
# helpers


def mean_fitness(policy, batch: TrialBatch) -> float:
    return float(np.mean(batch_fitness(policy, batch)[0]))


def policy_from_best(best: dict, cfg: ExperimentConfig):
    exp = cfg.resolved_experiment()
    kind = best["kind"]
    if kind == "lqg":
        return LqgController(exp)
    if kind == "nde":
        shape = PolicyShape(*best["shape"])
        return NdePolicy.from_vector(np.array(best["vector"], dtype=float), shape)
    return parse_policy_text(best["text"], PolicyShape.of(exp))


def validate(policy, cfg: ExperimentConfig) -> tuple[float, list[dict]]:
    batch = make_batch(cfg.resolved_experiment(), cfg.validation_size, cfg.validation_seed, VALIDATION_STREAM)
    fit, status = batch_fitness(policy, batch)
    rows = [{"trial": t.index, "fitness": float(f), "status": int(s)} for t, f, s in zip(batch.trials, fit, status)]
    return float(np.mean(fit)), rows


def _history_row(generation: int, subpop: int, best: float, mean: float, texts: Sequence[str]) -> dict:
    return {"generation": generation, "subpopulation": subpop, "best_fitness": float(best),
            "mean_fitness": float(mean), "best_expression_texts": " ; ".join(texts)}


# ---------------------------------------------------------------------------
# methods


def _run_gp(cfg: ExperimentConfig, seed: int, batch: TrialBatch):
    gcfg = cfg.gp_config(seed)

    def evaluator(ind: Individual) -> float:
        return mean_fitness(ind.to_policy(gcfg), batch)

    res = run_gp(gcfg, evaluator)
    history = [_history_row(h.generation, h.subpopulation, h.best_fitness, h.mean_fitness, h.best_expressions)
               for h in res.history]
    policy = res.best.to_policy(gcfg)
    return policy, history, res.best_fitness


def _run_random_search(cfg: ExperimentConfig, seed: int, batch: TrialBatch):
    exp = cfg.resolved_experiment()
    shape = PolicyShape.of(exp, cfg.latent)
    fset = FunctionSet(exp.operators)
    rng = np.random.default_rng(seed)
    best, best_f = None, -math.inf
    history = []
    for g in range(cfg.gens):
        fits = []
        for _ in range(cfg.pop):
            p = sample_random_policy(fset, shape.H, shape.C, rng, shape)
            f = mean_fitness(p, batch)
            fits.append(f)
            if f > best_f:
                best, best_f = p, f
        history.append(_history_row(g, 0, best_f, float(np.mean(fits)), best.to_text().splitlines()[1:]))
    return best, history, best_f


def _run_nde(cfg: ExperimentConfig, seed: int, batch: TrialBatch):
    exp = cfg.resolved_experiment()
    shape = NdePolicy.shape_for(exp, cfg.nde_latent)
    n = NdePolicy.n_params(shape)
    rng = np.random.default_rng(seed)
    state = cma_init(np.zeros(n), cfg.cma_sigma0, cfg.pop)
    best_x, best_f = None, -math.inf
    history = []
    for g in range(cfg.gens):
        X = cma_ask(state, rng)
        fits = np.array([mean_fitness(NdePolicy.from_vector(x, shape), batch) for x in X])
        k = int(np.argmax(fits))
        if fits[k] > best_f:
            best_x, best_f = X[k].copy(), float(fits[k])
        state = cma_tell(state, X, fits)
        history.append(_history_row(g, 0, best_f, float(np.mean(fits)), [f"nde n={n}"]))
    return NdePolicy.from_vector(best_x, shape), history, best_f


def _best_dict(policy) -> dict:
    if isinstance(policy, NdePolicy):
        s = policy.shape
        return {"kind": "nde", "shape": [s.M, s.C, s.P, s.H], "vector": [float(v) for v in policy.to_vector()]}
    if isinstance(policy, LqgController):
        return {"kind": "lqg"}
    return {"kind": policy.kind, "text": policy.to_text()}


def run_experiment(cfg: ExperimentConfig, run_index: int = 0, out: str | Path | None = None) -> RunRecord:
    """Run one seed of ``cfg``; the result is persisted when an output directory is given."""
    seed = cfg.seed + run_index
    exp = cfg.resolved_experiment()
    t0 = time.perf_counter()
    record = RunRecord(cfg.to_dict(), seed, [], {}, None, None, [])
    try:
        if cfg.method == "lqg":
            policy, history, train = LqgController(exp), [], None
        else:
            batch = make_batch(exp, cfg.batch_size, seed, TRAIN_STREAM)
            runner = {"gp-static": _run_gp, "gp-dynamic": _run_gp, "random-search": _run_random_search,
                      "nde-cmaes": _run_nde}[cfg.method]
            policy, history, train = runner(cfg, seed, batch)
        record.history, record.best, record.train_fitness = history, _best_dict(policy), train
        record.validation_fitness, record.validation = validate(policy, cfg)
    except Exception as err:  # keep a partial record for the post-mortem
        log.exception("run %d of %s/%s failed", run_index, cfg.experiment, cfg.method)
        record.status, record.error = "failed", f"{type(err).__name__}: {err}"
    record.wall_clock = time.perf_counter() - t0
    if out is not None:
        write_results(record, out)
    return record


# ---------------------------------------------------------------------------
# persistence

HISTORY_COLUMNS = ("generation", "subpopulation", "best_fitness", "mean_fitness", "best_expression_texts")


def write_results(record: RunRecord, directory: str | Path) -> dict[str, Path]:
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
        paths = {"config": d / "config.json", "history": d / "history.csv", "validation": d / "validation.csv",
                 "metadata": d / "metadata.json"}
        paths["config"].write_text(json.dumps(record.config, indent=2, sort_keys=True) + "\n")
        with paths["history"].open("w", newline="") as fh:
            w = csv.DictWriter(fh, HISTORY_COLUMNS)
            w.writeheader()
            for row in record.history:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        with paths["validation"].open("w", newline="") as fh:
            w = csv.DictWriter(fh, ("trial", "fitness", "status"))
            w.writeheader()
            for row in record.validation:
                w.writerow({**row, "fitness": repr(row["fitness"])})
        kind = record.best.get("kind")
        if kind == "nde":
            paths["best"] = record.policy().save(d / "best_policy.params")
        elif kind in ("static", "dynamic"):
            paths["best"] = d / "best_policy.txt"
            paths["best"].write_text(record.best["text"])
        summary = {"seed": record.seed, "status": record.status, "error": record.error,
                   "train_fitness": record.train_fitness, "validation_fitness": record.validation_fitness,
                   "best": record.best}
        paths["record"] = d / "record.json"
        paths["record"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        paths["metadata"].write_text(json.dumps({"wall_clock": record.wall_clock, "written": time.time()}) + "\n")
    except OSError as err:
        raise OSError(f"cannot write results to {d}: {err}") from err
    return paths


def read_history(path: str | Path) -> list[dict]:
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    return [{"generation": int(r["generation"]), "subpopulation": int(r["subpopulation"]),
             "best_fitness": float(r["best_fitness"]), "mean_fitness": float(r["mean_fitness"]),
             "best_expression_texts": r["best_expression_texts"]} for r in rows]


def load_record(directory: str | Path) -> RunRecord:
    d = Path(directory)
    config = json.loads((d / "config.json").read_text())
    summary = json.loads((d / "record.json").read_text())
    with (d / "validation.csv").open() as fh:
        validation = [{"trial": int(r["trial"]), "fitness": float(r["fitness"]), "status": int(r["status"])}
                      for r in csv.DictReader(fh)]
    meta_path = d / "metadata.json"
    wall = json.loads(meta_path.read_text())["wall_clock"] if meta_path.exists() else 0.0
    return RunRecord(config, summary["seed"], read_history(d / "history.csv"), summary["best"],
                     summary["train_fitness"], summary["validation_fitness"], validation, wall,
                     summary["status"], summary["error"])


# ---------------------------------------------------------------------------
# replay and aggregation


@dataclass
class ReplayResult:
    mean: float
    fitness: np.ndarray
    status: np.ndarray
    trajectory_path: Path | None = None


def load_policy(source, experiment: str):
    """A policy from a run directory, a ``.txt`` / ``.params`` file or expression text."""
    exp = get_experiment(experiment)
    if isinstance(source, (StaticPolicy, DynamicPolicy, NdePolicy, LqgController)):
        return source
    if isinstance(source, RunRecord):
        return source.policy()
    path = Path(source) if isinstance(source, (str, Path)) and "\n" not in str(source) else None
    if path is not None and path.is_dir():
        return load_record(path).policy()
    if path is not None and path.suffix == ".params":
        return NdePolicy.load(path)
    text = path.read_text() if path is not None and path.exists() else str(source)
    return parse_policy_text(text, PolicyShape.of(exp))


def replay_policy(source, experiment: str, seed: int = 0, n_trials: int = VALIDATION_BATCH,
                  stream: int = VALIDATION_STREAM, trajectory_csv: str | Path | None = None, trial: int = 0,
                  horizon: float | None = None, dt: float | None = None) -> ReplayResult:
    exp = get_experiment(experiment).with_timing(horizon, dt)
    policy = load_policy(source, experiment)
    batch = make_batch(exp, n_trials, seed, stream)
    fit, status = batch_fitness(policy, batch)
    path = None
    if trajectory_csv is not None:
        traj = simulate_batch(policy, batch.subset([trial]))
        path = write_trajectory_csv(traj, trajectory_csv)
    return ReplayResult(float(np.mean(fit)), fit, status, path)


@dataclass
class Summary:
    experiment: str
    methods: list[str]
    mean_best: list[float]  # per generation, averaged over runs
    validation: list[float]  # per run
    best_run: int
    best_validation: float
    best_policy: dict


def aggregate_runs(records: Sequence[RunRecord]) -> Summary:
    if not records:
        raise ConfigError("nothing to aggregate")
    ids = {r.experiment for r in records}
    if len(ids) != 1:
        raise ConfigError(f"cannot aggregate mixed experiments {sorted(ids)}")
    ok = [r for r in records if r.status == "ok"]
    if not ok:
        raise ConfigError("no successful runs to aggregate")
    n_gen = min(len(r.history) for r in ok)
    mean_best = [float(np.mean([r.history[g]["best_fitness"] for r in ok])) for g in range(n_gen)]
    vals = [float(r.validation_fitness) for r in ok]
    k = int(np.argmax(vals))
    return Summary(ids.pop(), sorted({r.config["method"] for r in ok}), mean_best, vals, k, vals[k], ok[k].best)


def write_summary(summary: Summary, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with (d / "summary_history.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "mean_best_fitness"])
        for g, v in enumerate(summary.mean_best):
            w.writerow([g, repr(v)])
    with (d / "summary_validation.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "validation_fitness"])
        for i, v in enumerate(summary.validation):
            w.writerow([i, repr(v)])
    path = d / "summary.json"
    path.write_text(json.dumps(asdict(summary), indent=2) + "\n")
    return path
