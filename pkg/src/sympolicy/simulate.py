"""Fixed-step coupled simulation of environment and policy, and batch fitness.

Every trial owns a random substream derived from ``(seed, stream, index)``; the
substream draws the trial conditions first and then all Wiener increments and
observation noise for the horizon.  Two policies evaluated on the same batch
therefore see identical noise (common random numbers).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernel
from .environments import Experiment, TrialSpec, get_experiment, sample_trial
from .fitness import QuadraticCost, SwingUpCost, fitness_quadratic, fitness_swing_up

__all__ = [
    "FLOOR_FITNESS", "TRAIN_STREAM", "VALIDATION_STREAM", "TrialBatch", "Trajectory", "make_batch",
    "euler_heun_step", "simulate_batch", "simulate_trial", "evaluate_policy", "batch_fitness",
    "fitness_quadratic", "fitness_swing_up", "write_trajectory_csv",
]

FLOOR_FITNESS = -1e6
TRAIN_STREAM = 0
VALIDATION_STREAM = 1
DEFAULT_BATCH = 32
VALIDATION_BATCH = 128


@dataclass
class TrialBatch:
    experiment: Experiment
    trials: list[TrialSpec]
    dW: np.ndarray  # (B, steps, K) Wiener increments
    xi: np.ndarray  # (B, steps + 1, M) standard-normal observation draws
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        self.x0 = np.array([t.x0 for t in self.trials], dtype=float)
        self.target = np.array([t.target for t in self.trials], dtype=float)
        self.xstar = np.array([t.xstar for t in self.trials], dtype=float)
        self.params = np.array([t.params.vector() for t in self.trials], dtype=float)

    def __len__(self) -> int:
        return len(self.trials)

    @property
    def dt(self) -> float:
        return self.experiment.dt

    @property
    def n_steps(self) -> int:
        return self.experiment.n_steps

    def subset(self, indices) -> "TrialBatch":
        indices = list(indices)
        return TrialBatch(self.experiment, [self.trials[i] for i in indices], self.dW[indices],
                          self.xi[indices], self.seed, self.stream)


def trial_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), int(index)]))


def make_batch(exp: Experiment | str, size: int = DEFAULT_BATCH, seed: int = 0, stream: int = TRAIN_STREAM,
               start: int = 0) -> TrialBatch:
    """Sample ``size`` trials (indices ``start..start+size-1``) with pre-drawn noise."""
    if isinstance(exp, str):
        exp = get_experiment(exp)
    S = exp.n_steps
    K = exp.diffusion.shape[1]
    M = exp.obs_dim
    trials, dws, xis = [], [], []
    sq = math.sqrt(exp.dt)
    for i in range(start, start + size):
        rng = trial_rng(seed, stream, i)
        trials.append(sample_trial(exp, rng, i))
        dws.append(rng.standard_normal((S, K)) * sq)
        xis.append(rng.standard_normal((S + 1, M)))
    return TrialBatch(exp, trials, np.array(dws), np.array(xis), seed, stream)


def euler_heun_step(drift: Callable, diffusion: Callable, x, dt: float, dW) -> np.ndarray:
    """One Euler-Heun step for the Stratonovich SDE ``dx = f(x) dt + g(x) o dW``.

    The drift is taken once at ``x``; the diffusion is averaged between ``x`` and
    the Euler predictor.  For constant ``g`` this is exactly Euler-Maruyama.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    f = drift(x)
    g0 = np.atleast_2d(diffusion(x))
    pred = x + f * dt + g0 @ dW
    g1 = np.atleast_2d(diffusion(pred))
    return (x + f * dt) + (0.5 * (g0 + g1)) @ dW


@dataclass
class Trajectory:
    """Recorded series of one batch; ``length[b]`` points are valid for trial ``b``."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    a: np.ndarray
    length: np.ndarray
    fitness: np.ndarray
    status: np.ndarray
    t_final: np.ndarray

    def trial(self, b: int) -> dict[str, np.ndarray]:
        n = int(self.length[b])
        return {"t": self.t[:n], "x": self.x[b, :n], "y": self.y[b, :n], "u": self.u[b, :n], "a": self.a[b, :n]}


def _cost_weights(exp: Experiment):
    fit = exp.fitness
    if isinstance(fit, QuadraticCost):
        return _kernel.FIT_QUADRATIC, fit.Q, fit.r, 0.0
    return _kernel.FIT_SWING, np.zeros((exp.state_dim, exp.state_dim)), fit.R, fit.target_height


def simulate_batch(policy, batch: TrialBatch, record: bool = True) -> Trajectory:
    """Reference closed loop in numpy, vectorised over the trials of ``batch``.

    Per step: observe, compute and clip the control, accrue cost, test
    termination, then advance the environment (Euler-Heun) and the policy's
    internal state (deterministic Euler, previous control as input).
    """
    exp = batch.experiment
    B, N, S, dt = len(batch), exp.state_dim, batch.n_steps, batch.dt
    obs = exp.observation
    fit_kind, Q, r, height = _cost_weights(exp)
    x = batch.x0.copy()
    scratch = policy.start(batch)
    H = policy.latent_size(exp)
    C = exp.control_dim
    active = np.ones(B, dtype=bool)
    status = np.zeros(B, dtype=np.int64)
    cost = np.zeros(B)
    t_final = np.full(B, S * dt)
    f_step = np.full(B, S)
    length = np.zeros(B, dtype=np.int64)
    if record:
        xs = np.full((B, S + 1, N), np.nan)
        ys = np.full((B, S + 1, obs.dim), np.nan)
        us = np.full((B, S + 1, C), np.nan)
        as_ = np.full((B, S + 1, H), np.nan)
    V = exp.diffusion
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(S + 1):
            y = obs.apply(x, batch.xi[:, i])
            u = exp.clip(policy.act(scratch, y, batch.xstar, dt))
            if fit_kind == _kernel.FIT_QUADRATIC:
                e = x - batch.target
                step_cost = np.einsum("bi,ij,bj->b", e, Q, e) + (r * u * u).sum(axis=1)
            else:
                step_cost = (r * u * u).sum(axis=1)
            cost = np.where(active, cost + step_cost, cost)
            if record:
                xs[active, i], ys[active, i], us[active, i] = x[active], y[active], u[active]
                if H:
                    as_[active, i] = policy.latent(scratch)[active]
            length[active] = i + 1
            bad = active & ~np.isfinite(cost)
            status[bad] = _kernel.ST_NONFINITE
            active &= ~bad
            if exp.env == "acrobot":
                h = -np.cos(x[:, 0]) - np.cos(x[:, 0] + x[:, 1])
                win = active & (h > height)
                status[win] = _kernel.ST_SUCCESS
                t_final[win] = i * dt
                f_step[win] = i
                active &= ~win
                lost = active & ((np.abs(x[:, 2]) > 8 * np.pi) | (np.abs(x[:, 3]) > 18 * np.pi))
                status[lost] = _kernel.ST_ABORT
                active &= ~lost
            if i == S or not active.any():
                break
            det = np.array([exp.deterministic_step(batch.trials[b].params, x[b], u[b], dt) if active[b] else x[b]
                            for b in range(B)])
            x_new = det + batch.dW[:, i] @ V.T
            x = np.where(active[:, None], x_new, x)
            policy.advance(scratch, y, u, batch.xstar, dt)
            ok = np.isfinite(x).all(axis=1)
            if H:
                ok &= np.isfinite(policy.latent(scratch)).all(axis=1)
            bad = active & ~ok
            status[bad] = _kernel.ST_NONFINITE
            active &= ~bad
    if fit_kind == _kernel.FIT_QUADRATIC:
        fitness = -cost
    else:
        fitness = -f_step - cost
    fitness = np.where(status == _kernel.ST_NONFINITE, FLOOR_FITNESS, fitness)
    t = np.arange(S + 1) * dt
    if not record:
        empty = np.empty((B, 0, 0))
        return Trajectory(t, empty, empty, empty, empty, length, fitness, status, t_final)
    return Trajectory(t, xs, ys, us, as_, length, fitness, status, t_final)


def simulate_trial(policy, exp: Experiment | str, trial_index: int = 0, seed: int = 0,
                   stream: int = TRAIN_STREAM) -> tuple[dict, float]:
    """Simulate a single trial; returns its recorded series and fitness."""
    batch = make_batch(exp, 1, seed, stream, start=trial_index)
    traj = simulate_batch(policy, batch)
    return traj.trial(0), float(traj.fitness[0])


def batch_fitness(policy, batch: TrialBatch) -> tuple[np.ndarray, np.ndarray]:
    """Per-trial fitness and status, using the compiled loop when the policy has one."""
    kernel_args = getattr(policy, "kernel_args", None)
    if kernel_args is None:
        traj = simulate_batch(policy, batch, record=False)
        return traj.fitness, traj.status
    return _run_kernel(kernel_args(batch.experiment), batch)[:2]


def _run_kernel(pargs, batch: TrialBatch):
    exp = batch.experiment
    fit_kind, Q, r, height = _cost_weights(exp)
    C = exp.control_dim
    if exp.u_bounds is None:
        lo, hi = np.full(C, -np.inf), np.full(C, np.inf)
    else:
        lo, hi = np.full(C, exp.u_bounds[0]), np.full(C, exp.u_bounds[1])
    obs = exp.observation
    return _kernel.run_batch(
        exp.env_kind, batch.params, batch.x0, batch.target, batch.xstar, batch.dW, batch.xi,
        np.ascontiguousarray(exp.diffusion, dtype=float), obs.D, np.sqrt(obs.sigma), obs.wrap.astype(np.int64),
        lo, hi, float(exp.dt), int(exp.n_steps),
        pargs["kind"], pargs["H"], C, pargs["ops"], pargs["args"], pargs["starts"],
        pargs["nde_A"], pargs["nde_B"],
        fit_kind, np.ascontiguousarray(Q, dtype=float), np.asarray(r, dtype=float), float(height), FLOOR_FITNESS,
    )


@dataclass
class EvaluationReport:
    mean: float
    fitness: np.ndarray
    status: np.ndarray

    @property
    def nonfinite(self) -> int:
        return int((self.status == _kernel.ST_NONFINITE).sum())

    @property
    def successes(self) -> int:
        return int((self.status == _kernel.ST_SUCCESS).sum())


def evaluate_policy(policy, exp: Experiment | str | TrialBatch, batch_size: int = DEFAULT_BATCH, seed: int = 0,
                    stream: int = TRAIN_STREAM, report: bool = False):
    """Mean fitness over a batch; pass a :class:`TrialBatch` to reuse pre-drawn trials."""
    batch = exp if isinstance(exp, TrialBatch) else make_batch(exp, batch_size, seed, stream)
    fit, status = batch_fitness(policy, batch)
    mean = float(np.mean(fit))
    if report:
        return EvaluationReport(mean, fit, status)
    return mean


def write_trajectory_csv(traj: Trajectory, path: str | Path, trial: int = 0) -> Path:
    """Per-step dump ``t, x..., y..., u..., a...`` of one trial."""
    path = Path(path)
    rec = traj.trial(trial)
    cols = (["t"] + [f"x{i + 1}" for i in range(rec["x"].shape[1])] + [f"y{i + 1}" for i in range(rec["y"].shape[1])]
            + [f"u{i + 1}" for i in range(rec["u"].shape[1])] + [f"a{i + 1}" for i in range(rec["a"].shape[1])])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for k in range(len(rec["t"])):
            w.writerow([repr(float(v)) for v in
                        np.concatenate([[rec["t"][k]], rec["x"][k], rec["y"][k], rec["u"][k], rec["a"][k]])])
    return path
