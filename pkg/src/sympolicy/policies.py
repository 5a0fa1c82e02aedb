"""Executable control policies.

All policies follow one protocol used by :func:`sympolicy.simulate.simulate_batch`:
``start(batch)`` returns per-batch scratch (latent state, previous control,
filter estimate), ``act`` returns the control for the current observation and
``advance`` integrates the internal state one step.  The policy objects
themselves stay immutable.

Symbolic and NDE policies also expose ``kernel_args`` so the compiled loop can
run them without Python callbacks.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernel
from .environments import Experiment, SHOParams
from .exprtree import (
    OP_VAR,
    ExprError,
    ExprTree,
    FunctionSet,
    compile_postfix,
    evaluate,
    parse,
    render,
    sample_tree,
    variables,
)
from .optimizers import RiccatiError, solve_care

NDE_LATENT = 5
RANDOM_MAX_DEPTH = 7


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyShape:
    """Input and output sizes shared by every policy of one experiment."""

    M: int  # observations
    C: int  # controls
    P: int  # visible target entries
    H: int = 0  # latent size

    @classmethod
    def of(cls, exp: Experiment, H: int | None = None) -> "PolicyShape":
        return cls(exp.obs_dim, exp.control_dim, exp.target_dim, exp.latent_size if H is None else H)

    def with_latent(self, H: int) -> "PolicyShape":
        return PolicyShape(self.M, self.C, self.P, H)

    @property
    def a_names(self) -> tuple[str, ...]:
        return tuple(f"a{i + 1}" for i in range(self.H))

    @property
    def y_names(self) -> tuple[str, ...]:
        return tuple(f"y{i + 1}" for i in range(self.M))

    @property
    def u_names(self) -> tuple[str, ...]:
        return tuple(f"u{i + 1}" for i in range(self.C))

    @property
    def xstar_names(self) -> tuple[str, ...]:
        return ("xstar",) if self.P == 1 else tuple(f"xstar{i + 1}" for i in range(self.P))

    @property
    def static_signature(self) -> tuple[str, ...]:
        return self.y_names + self.xstar_names

    @property
    def state_signature(self) -> tuple[str, ...]:
        return self.a_names + self.y_names + self.u_names + self.xstar_names

    @property
    def readout_signature(self) -> tuple[str, ...]:
        return self.a_names + self.xstar_names

    @property
    def aliases(self) -> dict[str, str]:
        out = {}
        if self.C == 1:
            out["u"] = "u1"
        return out

    # kernel layout of the per-trial input vector z = (a, y, u_prev, xstar)
    def static_slots(self) -> np.ndarray:
        return np.concatenate([self.H + np.arange(self.M), self.H + self.M + self.C + np.arange(self.P)])

    def readout_slots(self) -> np.ndarray:
        return np.concatenate([np.arange(self.H), self.H + self.M + self.C + np.arange(self.P)])


def _program(trees: Sequence[ExprTree], slot_maps: Sequence[np.ndarray]):
    ops, args, starts = [], [], [0]
    for tree, slots in zip(trees, slot_maps):
        o, a = compile_postfix(tree.root)
        a = [float(slots[int(v)]) if op == OP_VAR else v for op, v in zip(o, a)]
        ops.extend(o)
        args.extend(a)
        starts.append(len(ops))
    return np.array(ops, dtype=np.int64), np.array(args, dtype=float), np.array(starts, dtype=np.int64)


_NO_MATRIX = np.zeros((1, 1))


def _eval_trees(trees: Sequence[ExprTree], inputs: Sequence) -> np.ndarray:
    """Stack tree outputs along the last axis; inputs may be batched arrays."""
    shape = np.broadcast_shapes(*(np.shape(v) for v in inputs)) if inputs else ()
    outs = [np.broadcast_to(evaluate(t, inputs), shape) for t in trees]
    return np.stack(outs, axis=-1).astype(float)


def _columns(m: np.ndarray) -> list[np.ndarray]:
    m = np.asarray(m, dtype=float)
    return [m[..., j] for j in range(m.shape[-1])]


def references_latent(tree: ExprTree, H: int) -> bool:
    return any(v < H for v in variables(tree.root))


def observed_latents(state_trees: Sequence[ExprTree], shape: PolicyShape) -> set[int]:
    """Latents whose dynamics depend on an observation, directly or through other latents."""
    H, M = shape.H, shape.M
    deps = [variables(t.root) for t in state_trees]
    seen = {i for i, d in enumerate(deps) if any(H <= v < H + M for v in d)}
    while True:
        new = {i for i, d in enumerate(deps) if i not in seen and d & seen}
        if not new:
            return seen
        seen |= new


def readouts_observe(state_trees: Sequence[ExprTree], readouts: Sequence[ExprTree], shape: PolicyShape) -> bool:
    """Every readout reads at least one latent that is driven by the observations."""
    obs = observed_latents(state_trees, shape)
    return all(variables(t.root) & obs for t in readouts)


# ---------------------------------------------------------------------------
# symbolic policies


@dataclass(frozen=True)
class StaticPolicy:
    """Memoryless ``u_j = g_j(y, x*)``."""

    readouts: tuple[ExprTree, ...]
    shape: PolicyShape

    def __post_init__(self):
        object.__setattr__(self, "readouts", tuple(self.readouts))
        object.__setattr__(self, "shape", self.shape.with_latent(0))
        if len(self.readouts) != self.shape.C:
            raise PolicyError(f"need {self.shape.C} readout trees, got {len(self.readouts)}")
        for t in self.readouts:
            if t.signature != self.shape.static_signature:
                raise PolicyError(f"readout signature {t.signature} != {self.shape.static_signature}")

    @classmethod
    def from_text(cls, readouts: Sequence[str], shape: PolicyShape) -> "StaticPolicy":
        shape = shape.with_latent(0)
        sig = shape.static_signature
        return cls(tuple(parse(s, sig, shape.aliases) for s in readouts), shape)

    kind = "static"

    @property
    def trees(self) -> tuple[ExprTree, ...]:
        return self.readouts

    def latent_size(self, exp=None) -> int:
        return 0

    def control(self, y, xstar) -> np.ndarray:
        return _eval_trees(self.readouts, _columns(y) + _columns(xstar))

    def start(self, batch):
        return {}

    def act(self, scratch, y, xstar, dt):
        return self.control(y, xstar)

    def advance(self, scratch, y, u, xstar, dt):
        pass

    def latent(self, scratch):
        return np.zeros((0, 0))

    @cached_property
    def _compiled(self):
        slots = self.shape.static_slots()
        return _program(self.readouts, [slots] * len(self.readouts))

    def kernel_args(self, exp=None) -> dict:
        ops, args, starts = self._compiled
        return {"kind": _kernel.POL_STATIC, "H": 0, "ops": ops, "args": args, "starts": starts,
                "nde_A": _NO_MATRIX, "nde_B": _NO_MATRIX}

    def to_text(self) -> str:
        lines = [f"# static M={self.shape.M} C={self.shape.C} P={self.shape.P}"]
        lines += [f"u{j + 1} = {render(t)}" for j, t in enumerate(self.readouts)]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DynamicPolicy:
    """Latent ODE ``da/dt = f(a, y, u_prev, x*)`` read out as ``u = g(a, x*)``; ``a(0) = 0``."""

    state_trees: tuple[ExprTree, ...]
    readouts: tuple[ExprTree, ...]
    shape: PolicyShape
    require_latent: bool = True

    def __post_init__(self):
        object.__setattr__(self, "state_trees", tuple(self.state_trees))
        object.__setattr__(self, "readouts", tuple(self.readouts))
        s = self.shape
        if len(self.state_trees) != s.H:
            raise PolicyError(f"need {s.H} state trees, got {len(self.state_trees)}")
        if len(self.readouts) != s.C:
            raise PolicyError(f"need {s.C} readout trees, got {len(self.readouts)}")
        for t in self.state_trees:
            if t.signature != s.state_signature:
                raise PolicyError(f"state-tree signature {t.signature} != {s.state_signature}")
        for t in self.readouts:
            if t.signature != s.readout_signature:
                raise PolicyError(f"readout signature {t.signature} != {s.readout_signature}")
            if self.require_latent and not references_latent(t, s.H):
                raise PolicyError(f"readout {render(t)!r} does not reference a latent variable")

    @classmethod
    def from_text(cls, state: Sequence[str], readouts: Sequence[str], shape: PolicyShape,
                  require_latent: bool = True) -> "DynamicPolicy":
        shape = shape.with_latent(len(state))
        al = shape.aliases
        return cls(tuple(parse(s, shape.state_signature, al) for s in state),
                   tuple(parse(s, shape.readout_signature, al) for s in readouts), shape, require_latent)

    kind = "dynamic"

    @property
    def trees(self) -> tuple[ExprTree, ...]:
        return self.state_trees + self.readouts

    @property
    def satisfies_latent_constraint(self) -> bool:
        return all(references_latent(t, self.shape.H) for t in self.readouts)

    def latent_size(self, exp=None) -> int:
        return self.shape.H

    def derivative(self, a, y, u_prev, xstar) -> np.ndarray:
        return _eval_trees(self.state_trees, _columns(a) + _columns(y) + _columns(u_prev) + _columns(xstar))

    def control(self, a, xstar) -> np.ndarray:
        return _eval_trees(self.readouts, _columns(a) + _columns(xstar))

    def start(self, batch):
        B = len(batch)
        return {"a": np.zeros((B, self.shape.H)), "u_prev": np.zeros((B, self.shape.C))}

    def act(self, scratch, y, xstar, dt):
        return self.control(scratch["a"], xstar)

    def advance(self, scratch, y, u, xstar, dt):
        da = self.derivative(scratch["a"], y, scratch["u_prev"], xstar)
        scratch["a"] = scratch["a"] + da * dt
        scratch["u_prev"] = np.array(u, dtype=float)

    def latent(self, scratch):
        return scratch["a"]

    @cached_property
    def _compiled(self):
        s = self.shape
        ident = np.arange(s.H + s.M + s.C + s.P)
        return _program(self.trees, [ident] * s.H + [s.readout_slots()] * s.C)

    def kernel_args(self, exp=None) -> dict:
        ops, args, starts = self._compiled
        return {"kind": _kernel.POL_DYNAMIC, "H": self.shape.H, "ops": ops, "args": args, "starts": starts,
                "nde_A": _NO_MATRIX, "nde_B": _NO_MATRIX}

    def to_text(self) -> str:
        s = self.shape
        lines = [f"# dynamic M={s.M} C={s.C} P={s.P} H={s.H}"]
        lines += [f"da{i + 1} = {render(t)}" for i, t in enumerate(self.state_trees)]
        lines += [f"u{j + 1} = {render(t)}" for j, t in enumerate(self.readouts)]
        return "\n".join(lines) + "\n"


def static_control(p: StaticPolicy, y, xstar) -> np.ndarray:
    return p.control(y, xstar)


def dynamic_derivative(p: DynamicPolicy, a, y, u_prev, xstar) -> np.ndarray:
    return p.derivative(a, y, u_prev, xstar)


def dynamic_control(p: DynamicPolicy, a, xstar) -> np.ndarray:
    return p.control(a, xstar)


def parse_policy_text(text: str, shape: PolicyShape) -> StaticPolicy | DynamicPolicy:
    """Inverse of ``to_text``: ``daK = ...`` lines are state trees, ``uJ = ...`` readouts."""
    state, readouts = {}, {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PolicyError(f"expected 'name = expression', got {raw!r}")
        name, expr = (s.strip() for s in line.split("=", 1))
        if name.startswith("da") and name[2:].isdigit():
            state[int(name[2:])] = expr
        elif name.startswith("u") and name[1:].isdigit():
            readouts[int(name[1:])] = expr
        elif name == "u":
            readouts[1] = expr
        else:
            raise PolicyError(f"unknown left-hand side {name!r}")
    if sorted(readouts) != list(range(1, len(readouts) + 1)) or sorted(state) != list(range(1, len(state) + 1)):
        raise PolicyError("equations must be numbered consecutively from 1")
    outs = [readouts[j] for j in sorted(readouts)]
    if not state:
        return StaticPolicy.from_text(outs, shape)
    return DynamicPolicy.from_text([state[i] for i in sorted(state)], outs, shape)


def sample_random_policy(fset: FunctionSet, H: int, C: int, rng: np.random.Generator,
                         shape: PolicyShape | None = None, max_depth: int = RANDOM_MAX_DEPTH,
                         observed: bool = True) -> DynamicPolicy:
    """``H + C`` grow-sampled trees with depth limits drawn from ``2..max_depth``.

    Readouts are redrawn until they reference a latent variable; with
    ``observed`` the whole draw repeats until that latent is driven by ``y``.
    """
    if shape is None:
        raise PolicyError("sample_random_policy needs the policy input shape")
    shape = PolicyShape(shape.M, C, shape.P, H)
    fs_state = fset.with_signature(shape.state_signature)
    fs_read = fset.with_signature(shape.readout_signature)

    def draw(fs):
        return sample_tree(fs, int(rng.integers(2, max_depth + 1)), "grow", rng)

    while True:
        state = tuple(draw(fs_state) for _ in range(H))
        readouts = []
        for _ in range(C):
            t = draw(fs_read)
            while not references_latent(t, H):
                t = draw(fs_read)
            readouts.append(t)
        if not observed or readouts_observe(state, readouts, shape):
            return DynamicPolicy(state, tuple(readouts), shape)


# ---------------------------------------------------------------------------
# neural differential equation baseline


@dataclass(frozen=True)
class NdePolicy:
    """``da/dt = tanh(A z)``, ``z = (a, y, u_prev, x*, 1)``; ``u = B v``, ``v = (a, x*, 1)``."""

    A: np.ndarray
    B: np.ndarray
    shape: PolicyShape

    def __post_init__(self):
        A = np.array(self.A, dtype=float, order="C")
        B = np.array(self.B, dtype=float, order="C")
        s = self.shape
        if A.shape != (s.H, s.H + s.M + s.C + s.P + 1):
            raise PolicyError(f"A has shape {A.shape}, expected {(s.H, s.H + s.M + s.C + s.P + 1)}")
        if B.shape != (s.C, s.H + s.P + 1):
            raise PolicyError(f"B has shape {B.shape}, expected {(s.C, s.H + s.P + 1)}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    kind = "nde"

    @staticmethod
    def n_params(shape: PolicyShape) -> int:
        return shape.H * (shape.H + shape.M + shape.C + shape.P + 1) + shape.C * (shape.H + shape.P + 1)

    @classmethod
    def shape_for(cls, exp: Experiment, H: int = NDE_LATENT) -> PolicyShape:
        return PolicyShape.of(exp, H)

    @classmethod
    def from_vector(cls, vec, shape: PolicyShape) -> "NdePolicy":
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.size != cls.n_params(shape):
            raise PolicyError(f"expected {cls.n_params(shape)} parameters, got {vec.size}")
        na = shape.H * (shape.H + shape.M + shape.C + shape.P + 1)
        return cls(vec[:na].reshape(shape.H, -1), vec[na:].reshape(shape.C, -1), shape)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.A.ravel(), self.B.ravel()])

    def latent_size(self, exp=None) -> int:
        return self.shape.H

    def derivative(self, a, y, u_prev, xstar) -> np.ndarray:
        z = np.concatenate([np.atleast_1d(a), np.atleast_1d(y), np.atleast_1d(u_prev), np.atleast_1d(xstar)], axis=-1)
        z = np.concatenate([z, np.ones(z.shape[:-1] + (1,))], axis=-1)
        return np.tanh(z @ self.A.T)

    def control(self, a, xstar) -> np.ndarray:
        v = np.concatenate([np.atleast_1d(a), np.atleast_1d(xstar)], axis=-1)
        v = np.concatenate([v, np.ones(v.shape[:-1] + (1,))], axis=-1)
        return v @ self.B.T

    def start(self, batch):
        B = len(batch)
        return {"a": np.zeros((B, self.shape.H)), "u_prev": np.zeros((B, self.shape.C))}

    def act(self, scratch, y, xstar, dt):
        return self.control(scratch["a"], xstar)

    def advance(self, scratch, y, u, xstar, dt):
        scratch["a"] = scratch["a"] + self.derivative(scratch["a"], y, scratch["u_prev"], xstar) * dt
        scratch["u_prev"] = np.array(u, dtype=float)

    def latent(self, scratch):
        return scratch["a"]

    def kernel_args(self, exp=None) -> dict:
        empty_i = np.zeros(1, dtype=np.int64)
        return {"kind": _kernel.POL_NDE, "H": self.shape.H, "ops": empty_i, "args": np.zeros(1),
                "starts": empty_i, "nde_A": self.A, "nde_B": self.B}

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        s = self.shape
        with path.open("w") as fh:
            fh.write(f"# nde M={s.M} C={s.C} P={s.P} H={s.H} n={self.n_params(s)}\n")
            for v in self.to_vector():
                fh.write(f"{float(v)!r}\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "NdePolicy":
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith("# nde"):
            raise PolicyError(f"{path}: missing '# nde' header")
        dims = dict(tok.split("=") for tok in lines[0].split()[2:])
        shape = PolicyShape(int(dims["M"]), int(dims["C"]), int(dims["P"]), int(dims["H"]))
        vec = np.array([float(s) for s in lines[1:] if s.strip()])
        return cls.from_vector(vec, shape)


def nde_derivative(p: NdePolicy, a, y, u_prev, xstar) -> np.ndarray:
    return p.derivative(a, y, u_prev, xstar)


def nde_control(p: NdePolicy, a, xstar) -> np.ndarray:
    return p.control(a, xstar)


# ---------------------------------------------------------------------------
# LQG baseline (linear oscillator only)


@dataclass(frozen=True)
class LqgGains:
    K: np.ndarray  # (B, N)
    L: np.ndarray  # (B, N, M)
    A: np.ndarray  # (B, N, N)
    skipped: np.ndarray  # (B,) trials whose Riccati solve failed


@dataclass(frozen=True)
class LqgController:
    """Steady-state Kalman-Bucy filter plus LQR feedback ``u = -K (x_hat - x*)``.

    ``feedforward`` adds the equilibrium input ``omega * x*`` that holds the
    oscillator at the target; without it the regulator settles short of it.
    """

    experiment: Experiment
    feedforward: bool = False

    def __post_init__(self):
        if self.experiment.env != "sho":
            raise PolicyError("the LQG baseline is defined for the linear oscillator only")

    kind = "lqg"

    def latent_size(self, exp=None) -> int:
        return self.experiment.state_dim

    def gains(self, params: Sequence[SHOParams]) -> LqgGains:
        exp = self.experiment
        A = np.array([p.A for p in params])
        b = np.array([[0.0], [1.0]])
        Q = exp.fitness.Q
        r = np.atleast_2d(exp.fitness.r)
        D = exp.observation.D
        Sigma = np.diag(exp.observation.sigma)
        V = exp.diffusion
        skipped = np.zeros(len(params), dtype=bool)
        try:
            Pc = solve_care(A, b, Q, r)
            Pf = solve_care(np.swapaxes(A, 1, 2), D.T, V @ V.T, Sigma)
        except RiccatiError:
            Pc, Pf = np.zeros_like(A), np.zeros_like(A)
            for k, Ak in enumerate(A):
                try:
                    Pc[k] = solve_care(Ak, b, Q, r)
                    Pf[k] = solve_care(Ak.T, D.T, V @ V.T, Sigma)
                except RiccatiError:
                    skipped[k] = True
        K = (np.linalg.solve(r, b.T) @ Pc)[:, 0, :]
        L = Pf @ D.T @ np.linalg.inv(Sigma)
        return LqgGains(K, L, A, skipped)

    def start(self, batch):
        g = self.gains([t.params for t in batch.trials])
        B, N = len(batch), self.experiment.state_dim
        omega = np.array([t.params.omega for t in batch.trials])
        return {"g": g, "xhat": np.zeros((B, N)), "u_prev": np.zeros((B, 1)), "omega": omega,
                "target": batch.target}

    def act(self, scratch, y, xstar, dt):
        return lqg_control(self, scratch, y, xstar, dt)

    def advance(self, scratch, y, u, xstar, dt):
        scratch["u_prev"] = np.array(u, dtype=float)

    def latent(self, scratch):
        return scratch["xhat"]


def lqg_control(c: LqgController, scratch: dict, y, xstar, dt: float) -> np.ndarray:
    """Filter update with the new observation, then the feedback control."""
    g: LqgGains = scratch["g"]
    xhat = scratch["xhat"]
    D = c.experiment.observation.D
    innov = np.asarray(y, dtype=float) - xhat @ D.T
    dx = np.einsum("bij,bj->bi", g.A, xhat) + scratch["u_prev"] * np.array([0.0, 1.0])
    dx += np.einsum("bij,bj->bi", g.L, innov)
    xhat = xhat + dx * dt
    scratch["xhat"] = xhat
    target = np.zeros_like(xhat)
    target[:, 0] = np.asarray(xstar, dtype=float)[:, 0]
    u = -np.einsum("bi,bi->b", g.K, xhat - target)
    if c.feedforward:
        u = u + scratch["omega"] * target[:, 0]
    return u[:, None]
