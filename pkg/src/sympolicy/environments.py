"""Benchmark environments: harmonic oscillator, acrobot swing-up and stirred tank reactor.

Each experiment preset bundles dynamics parameters, the observation model, trial
sampling, termination, fitness, and the GP hyperparameter row used for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exprtree import ACROBOT_OPERATORS, CSTR_OPERATORS, SHO_OPERATORS
from .fitness import QuadraticCost, SwingUpCost

ENV_SHO, ENV_ACROBOT, ENV_CSTR = 0, 1, 2


@dataclass(frozen=True)
class SHOParams:
    omega: float = 1.0
    zeta: float = 0.0

    def __post_init__(self):
        if self.omega < 0 or self.zeta < 0:
            raise ValueError("omega and zeta must be non-negative")

    @property
    def A(self) -> np.ndarray:
        return np.array([[0.0, 1.0], [-self.omega, -self.zeta]])

    @property
    def b(self) -> np.ndarray:
        return np.array([0.0, 1.0])

    def vector(self) -> np.ndarray:
        return np.array([self.omega, self.zeta])


SHO_DIFFUSION = np.array([[0.0], [0.05]])


@dataclass(frozen=True)
class AcrobotParams:
    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    lc1: float = 0.5
    lc2: float = 0.5
    I1: float = 1.0
    I2: float = 1.0
    g: float = 9.81
    two_controls: bool = False

    def __post_init__(self):
        if min(self.m1, self.m2, self.l1, self.l2, self.lc1, self.lc2, self.I1, self.I2, self.g) <= 0:
            raise ValueError("acrobot parameters must be positive")

    def vector(self) -> np.ndarray:
        return np.array(
            [self.m1, self.m2, self.l1, self.l2, self.lc1, self.lc2, self.I1, self.I2, self.g, float(self.two_controls)]
        )


ACROBOT_DIFFUSION = np.diag([0.0, 0.0, 0.05, 0.05])


@dataclass(frozen=True)
class CSTRParams:
    q_r: float = 100.0
    c_f: float = 1.0
    T_f: float = 325.0
    T_cf: float = 275.0
    V_r: float = 112.5
    V_c: float = 20.0
    dH: float = -50000.0
    rho: float = 1000.0
    C_p: float = 0.275
    UA: float = 50000.0
    k0: float = 7.2e10
    E: float = 72750.0
    R_gas: float = 8.314
    # -1 consumes reactant (k c removed from dc/dt); +1 is the sign as printed
    reaction_sign: float = -1.0

    def __post_init__(self):
        if min(self.q_r, self.V_r, self.V_c, self.rho, self.C_p, self.UA, self.k0) <= 0:
            raise ValueError("flows, volumes, density and heat constants must be positive")
        if self.dH >= 0:
            raise ValueError("reaction enthalpy must be negative (exothermic)")

    def rate(self, T_r: float) -> float:
        return self.k0 * math.exp(-self.E / (self.R_gas * T_r))

    def vector(self) -> np.ndarray:
        return np.array(
            [self.q_r, self.c_f, self.T_f, self.T_cf, self.V_r, self.V_c, self.dH, self.rho,
             self.C_p, self.UA, self.k0, self.E, self.R_gas, self.reaction_sign]
        )


CSTR_DIFFUSION = np.diag([0.025, 3.0, 3.0])

# sampling ranges for the parameters that vary per trial
CSTR_RANGES = {
    "q_r": (75.0, 125.0),
    "T_f": (300.0, 350.0),
    "T_cf": (250.0, 300.0),
    "V_r": (75.0, 150.0),
    "V_c": (10.0, 30.0),
    "dH": (-55000.0, -45000.0),
    "C_p": (0.2, 0.35),
    "UA": (25000.0, 75000.0),
}
CSTR_SETPOINT_RANGE = (400.0, 500.0)


def sho_drift(p: SHOParams, x, u) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = float(np.ravel(u)[0])
    return np.array([x[1], -p.omega * x[0] - p.zeta * x[1] + u])


def acrobot_terms(p: AcrobotParams, x) -> tuple[float, float, float, float]:
    """``(d1, d2, phi1, phi2)`` of the two-link equations of motion."""
    th1, th2, dth1, dth2 = (float(v) for v in x)
    d1 = p.m1 * p.lc1**2 + p.m2 * (p.l1**2 + p.lc2**2 + 2 * p.l1 * p.lc2 * math.cos(th2)) + p.I1 + p.I2
    d2 = p.m2 * (p.lc2**2 + p.l1 * p.lc2 * math.cos(th2)) + p.I2
    phi2 = p.m2 * p.lc2 * p.g * math.cos(th1 + th2 - math.pi / 2)
    phi1 = (
        -p.m2 * p.l1 * p.lc2 * dth2**2 * math.sin(th2)
        - 2 * p.m2 * p.l1 * p.lc2 * dth2 * dth1 * math.sin(th2)
        + (p.m1 * p.lc1 + p.m2 * p.l1) * p.g * math.cos(th1 - math.pi / 2)
        + phi2
    )
    return d1, d2, phi1, phi2


def acrobot_drift(p: AcrobotParams, x, u) -> np.ndarray:
    th1, th2, dth1, dth2 = (float(v) for v in x)
    u = np.ravel(np.asarray(u, dtype=float))
    d1, d2, phi1, phi2 = acrobot_terms(p, x)
    denom = p.m2 * p.lc2**2 + p.I2 - d2**2 / d1
    assert denom > 1e-6 and d1 > 1e-6
    ddth2 = (u[0] + d2 / d1 * phi1 - p.m2 * p.l1 * p.lc2 * dth1**2 * math.sin(th2) - phi2) / denom
    if p.two_controls:
        ddth1 = (u[1] - d2 * ddth2 - phi1) / d1
    else:
        ddth1 = -(d2 * ddth2 + phi1) / d1
    return np.array([dth1, dth2, ddth1, ddth2])


def acrobot_energy(p: AcrobotParams, x) -> float:
    """Total mechanical energy; height measured upward, angle 0 hanging down."""
    th1, th2, dth1, dth2 = (float(v) for v in x)
    kin = 0.5 * (p.m1 * p.lc1**2 + p.I1) * dth1**2
    # link 2 centre of mass velocity
    v2sq = p.l1**2 * dth1**2 + p.lc2**2 * (dth1 + dth2) ** 2 + 2 * p.l1 * p.lc2 * dth1 * (dth1 + dth2) * math.cos(th2)
    kin += 0.5 * p.m2 * v2sq + 0.5 * p.I2 * (dth1 + dth2) ** 2
    pot = -p.m1 * p.g * p.lc1 * math.cos(th1) - p.m2 * p.g * (p.l1 * math.cos(th1) + p.lc2 * math.cos(th1 + th2))
    return kin + pot


def cstr_drift(p: CSTRParams, x, u) -> np.ndarray:
    c, T_r, T_c = (float(v) for v in x)
    q_c = min(max(float(np.ravel(u)[0]), 0.0), 300.0)
    k = p.rate(T_r)
    exchange = p.UA / (p.rho * p.C_p * p.V_r)
    f1 = p.q_r / p.V_r * (p.c_f - c) + p.reaction_sign * k * c
    f2 = p.q_r / p.V_r * (p.T_f - T_r) + (-p.dH) / (p.rho * p.C_p) * k * c + exchange * (T_c - T_r)
    f3 = q_c / p.V_c * (p.T_cf - T_c) + exchange * (T_r - T_c)
    return np.array([f1, f2, f3])


def cstr_step(p: CSTRParams, x, u, dt: float) -> np.ndarray:
    """Deterministic part of one reactor step.

    The reaction is stiff (``k dt`` reaches the hundreds during a runaway), so
    with ``T_r`` frozen over the step the concentration is advanced exactly,
    and the heat released equals the reactant actually consumed.  The
    remaining terms use the explicit Euler update.
    """
    c, T_r, T_c = (float(v) for v in x)
    q_c = min(max(float(np.ravel(u)[0]), 0.0), 300.0)
    return np.array(_cstr_next(p.vector(), c, T_r, T_c, q_c, dt))


def _cstr_next(pv, c, T_r, T_c, q_c, dt):
    q_r, c_f, T_f, T_cf, V_r, V_c, dH, rho, C_p, UA, k0, E, R, sgn = pv
    # guard against unphysical temperatures overflowing the Arrhenius term
    k = k0 * math.exp(-E / (R * max(T_r, 1.0)))
    flow = q_r / V_r
    exchange = UA / (rho * C_p * V_r)
    if sgn < 0:
        lam = flow + k
        c_inf = flow * c_f / lam
        decay = math.exp(-lam * dt)
        c_new = c_inf + (c - c_inf) * decay
        reacted = k * (c_inf * dt + (c - c_inf) * (-math.expm1(-lam * dt)) / lam)
    else:
        c_new = c + (flow * (c_f - c) + k * c) * dt
        reacted = k * c * dt
    T_r_new = T_r + (flow * (T_f - T_r) + exchange * (T_c - T_r)) * dt + (-dH) / (rho * C_p) * reacted
    T_c_new = T_c + (q_c / V_c * (T_cf - T_c) + exchange * (T_r - T_c)) * dt
    return c_new, T_r_new, T_c_new


def wrap_angle(theta):
    return (np.asarray(theta) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class ObservationModel:
    """``y = D x + eps`` with ``eps ~ N(0, diag(sigma))``; masked components are angle-wrapped."""

    D: np.ndarray
    sigma: np.ndarray
    wrap: np.ndarray

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim == 2:
            sigma = np.diag(sigma).copy()
        wrap = np.asarray(self.wrap, dtype=bool)
        if (sigma < 0).any():
            raise ValueError("observation variances must be non-negative")
        if sigma.shape != (D.shape[0],) or wrap.shape != (D.shape[0],):
            raise ValueError("sigma and wrap must have one entry per observation")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "wrap", wrap)

    @property
    def dim(self) -> int:
        return self.D.shape[0]

    def apply(self, x, xi) -> np.ndarray:
        """Observation for state(s) ``x`` given standard-normal draws ``xi``."""
        x = np.asarray(x, dtype=float)
        y = x @ self.D.T + np.sqrt(self.sigma) * xi
        if self.wrap.any():
            y = np.where(self.wrap, wrap_angle(y), y)
        return y


def observe(m: ObservationModel, x, rng: np.random.Generator) -> np.ndarray:
    return m.apply(x, rng.standard_normal(np.shape(x)[:-1] + (m.dim,)))


@dataclass(frozen=True)
class TrialSpec:
    params: SHOParams | AcrobotParams | CSTRParams
    x0: np.ndarray
    target: np.ndarray  # full-state target used by the cost
    xstar: np.ndarray  # target values visible to the policy
    index: int = 0


@dataclass(frozen=True)
class Experiment:
    """One benchmark setting together with its GP hyperparameter row."""

    id: str
    env: str
    observation: ObservationModel
    diffusion: np.ndarray
    fitness: QuadraticCost | SwingUpCost
    control_dim: int
    target_dim: int
    horizon: float
    dt: float
    population_size: int
    generations: int
    latent_size: int
    operators: tuple[str, ...]
    u_bounds: tuple[float, float] | None = None
    vary_params: bool = False
    two_controls: bool = False
    cstr_reaction_sign: float = -1.0
    description: str = ""

    @property
    def env_kind(self) -> int:
        return {"sho": ENV_SHO, "acrobot": ENV_ACROBOT, "cstr": ENV_CSTR}[self.env]

    @property
    def state_dim(self) -> int:
        return self.diffusion.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.observation.dim

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def with_timing(self, horizon: float | None = None, dt: float | None = None) -> "Experiment":
        return replace(self, horizon=horizon or self.horizon, dt=dt or self.dt)

    def drift(self, params, x, u) -> np.ndarray:
        if self.env == "sho":
            return sho_drift(params, x, u)
        if self.env == "acrobot":
            return acrobot_drift(params, x, u)
        return cstr_drift(params, x, u)

    def deterministic_step(self, params, x, u, dt: float | None = None) -> np.ndarray:
        """State after one step without noise (explicit Euler except the reactor)."""
        dt = self.dt if dt is None else dt
        if self.env == "cstr":
            return cstr_step(params, x, u, dt)
        return np.asarray(x, dtype=float) + self.drift(params, x, u) * dt

    def clip(self, u):
        if self.u_bounds is None:
            return u
        return np.clip(u, *self.u_bounds)


def _sho(eid, D, sigma, pop, gens, vary, description):
    return Experiment(
        id=eid,
        env="sho",
        observation=ObservationModel(D, sigma, [False] * len(sigma)),
        diffusion=SHO_DIFFUSION,
        fitness=QuadraticCost(np.diag([0.5, 0.0]), [0.5]),
        control_dim=1,
        target_dim=1,
        horizon=30.0,
        dt=0.02,
        population_size=pop,
        generations=gens,
        latent_size=2,
        operators=SHO_OPERATORS,
        vary_params=vary,
        description=description,
    )


def _acrobot(eid, D, wrap, pop, gens, latent, two, description):
    C = 2 if two else 1
    return Experiment(
        id=eid,
        env="acrobot",
        observation=ObservationModel(D, [0.3] * len(wrap), wrap),
        diffusion=ACROBOT_DIFFUSION,
        fitness=SwingUpCost(0.01 * np.ones(C), 1.5),
        control_dim=C,
        target_dim=1,
        horizon=25.0,
        dt=0.01,
        population_size=pop,
        generations=gens,
        latent_size=latent,
        operators=ACROBOT_OPERATORS,
        u_bounds=(-1.0, 1.0),
        two_controls=two,
        description=description,
    )


PRESETS: dict[str, Experiment] = {
    e.id: e
    for e in [
        _sho("sho-noise", np.eye(2), [0.3, 0.3], 500, 30, False, "SHO, noisy full-state observations"),
        _sho("sho-partial", [[1.0, 0.0]], [0.3], 500, 50, False, "SHO, noisy position only"),
        _sho("sho-varying", np.eye(2), [0.3, 0.3], 1000, 100, True, "SHO, omega and zeta vary per trial"),
        _acrobot("acrobot-noise", np.eye(4), [True, True, False, False], 500, 50, 2, False,
                 "acrobot swing-up, noisy full-state observations"),
        _acrobot("acrobot-partial", np.eye(4)[:2], [True, True], 500, 50, 2, False,
                 "acrobot swing-up, noisy angles only"),
        _acrobot("acrobot-two-u", np.eye(4), [True, True, False, False], 1000, 50, 3, True,
                 "acrobot swing-up, torque on both links"),
        Experiment(
            id="cstr",
            env="cstr",
            observation=ObservationModel(np.eye(3)[1:], [7.5, 7.5], [False, False]),
            diffusion=CSTR_DIFFUSION,
            fitness=QuadraticCost(np.diag([0.0, 0.01, 0.0]), [0.0001]),
            control_dim=1,
            target_dim=1,
            horizon=40.0,
            dt=0.01,
            population_size=1000,
            generations=100,
            latent_size=2,
            operators=CSTR_OPERATORS,
            u_bounds=(0.0, 300.0),
            vary_params=True,
            description="stirred tank reactor temperature tracking, eight parameters vary",
        ),
    ]
}


def get_experiment(eid: str) -> Experiment:
    try:
        return PRESETS[eid]
    except KeyError:
        raise KeyError(f"unknown experiment {eid!r}; choose from {sorted(PRESETS)}") from None


def sample_trial(exp: Experiment | str, rng: np.random.Generator, index: int = 0) -> TrialSpec:
    if isinstance(exp, str):
        exp = get_experiment(exp)
    if exp.env == "sho":
        x0 = rng.standard_normal(2) * np.sqrt([3.0, 1.0])
        xs = rng.uniform(-3.0, 3.0)
        if exp.vary_params:
            params = SHOParams(omega=rng.uniform(0.0, 2.0), zeta=rng.uniform(0.0, 1.5))
        else:
            params = SHOParams(1.0, 0.0)
        return TrialSpec(params, x0, np.array([xs, 0.0]), np.array([xs]), index)
    if exp.env == "acrobot":
        x0 = rng.uniform(-0.1, 0.1, size=4)
        h = exp.fitness.target_height
        return TrialSpec(AcrobotParams(two_controls=exp.two_controls), x0, np.array([h]), np.array([h]), index)
    if exp.env == "cstr":
        x0 = np.array([rng.uniform(0.5, 1.0), rng.uniform(350.0, 375.0), rng.uniform(275.0, 300.0)])
        setpoint = rng.uniform(*CSTR_SETPOINT_RANGE)
        varied = {k: rng.uniform(lo, hi) for k, (lo, hi) in CSTR_RANGES.items()}
        params = CSTRParams(reaction_sign=exp.cstr_reaction_sign, **varied)
        return TrialSpec(params, x0, np.array([0.0, setpoint, 0.0]), np.array([setpoint]), index)
    raise KeyError(f"unknown environment {exp.env!r}")


def swing_height(x) -> float:
    return -math.cos(x[0]) - math.cos(x[0] + x[1])


def check_termination(exp: Experiment | str, x, t: float = 0.0) -> str:
    """``"success"``, ``"abort"`` or ``"continue"``; only the acrobot terminates early."""
    if isinstance(exp, str):
        exp = get_experiment(exp)
    if exp.env != "acrobot":
        return "continue"
    if swing_height(x) > exp.fitness.target_height:
        return "success"
    if abs(x[2]) > 8 * math.pi or abs(x[3]) > 18 * math.pi:
        return "abort"
    return "continue"
