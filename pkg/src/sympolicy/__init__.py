"""Symbolic control policies evolved with multi-tree genetic programming."""

from .environments import PRESETS, Experiment, get_experiment
from .evolution import GPConfig, GPResult, Individual, run_gp
from .experiments import ExperimentConfig, RunRecord, aggregate_runs, load_record, replay_policy, run_experiment
from .exprtree import ExprTree, FunctionSet, parse, render, simplify
from .policies import DynamicPolicy, LqgController, NdePolicy, PolicyShape, StaticPolicy, parse_policy_text
from .reference_policies import reference_policy
from .simulate import TrialBatch, batch_fitness, evaluate_policy, make_batch, simulate_batch

__all__ = [
    "PRESETS", "Experiment", "get_experiment",
    "GPConfig", "GPResult", "Individual", "run_gp",
    "ExperimentConfig", "RunRecord", "aggregate_runs", "load_record", "replay_policy", "run_experiment",
    "ExprTree", "FunctionSet", "parse", "render", "simplify",
    "DynamicPolicy", "LqgController", "NdePolicy", "PolicyShape", "StaticPolicy", "parse_policy_text",
    "reference_policy",
    "TrialBatch", "batch_fitness", "evaluate_policy", "make_batch", "simulate_batch",
]
