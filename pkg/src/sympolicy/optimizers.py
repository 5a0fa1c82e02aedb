"""CMA-ES (ask/tell, maximising) and continuous-time algebraic Riccati solvers."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# CMA-ES


def default_popsize(n: int) -> int:
    return 4 + int(math.floor(3 * math.log(n)))


@dataclass
class CmaState:
    mean: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    popsize: int
    weights: np.ndarray
    generation: int = 0
    evaluations: int = 0
    # cached eigendecomposition C = B diag(D^2) B^T
    B: np.ndarray = field(default=None, repr=False)
    D: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.mean)

    @property
    def mu(self) -> int:
        return len(self.weights)

    @property
    def mueff(self) -> float:
        return 1.0 / float(np.sum(self.weights**2))

    def constants(self):
        n, mueff = self.dim, self.mueff
        cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
        cs = (mueff + 2) / (n + mueff + 5)
        c1 = 2 / ((n + 1.3) ** 2 + mueff)
        cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
        damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
        chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        return cc, cs, c1, cmu, damps, chi_n


def cma_init(x0, sigma0: float = 0.5, popsize: int | None = None) -> CmaState:
    x0 = np.asarray(x0, dtype=float).ravel()
    if sigma0 <= 0:
        raise ValueError("sigma0 must be positive")
    n = len(x0)
    lam = popsize or default_popsize(n)
    mu = lam // 2
    w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w = w / w.sum()
    return CmaState(x0.copy(), float(sigma0), np.eye(n), np.zeros(n), np.zeros(n), lam, w,
                    B=np.eye(n), D=np.ones(n))


def _decompose(state: CmaState) -> None:
    try:
        C = np.triu(state.C) + np.triu(state.C, 1).T
        vals, vecs = np.linalg.eigh(C)
        if not np.all(np.isfinite(vals)) or vals.min() <= 0:
            raise np.linalg.LinAlgError("covariance not positive definite")
        state.C, state.B, state.D = C, vecs, np.sqrt(vals)
    except np.linalg.LinAlgError as err:
        log.warning("CMA-ES covariance reset to identity: %s", err)
        n = state.dim
        state.C, state.B, state.D = np.eye(n), np.eye(n), np.ones(n)


def cma_ask(state: CmaState, rng: np.random.Generator) -> np.ndarray:
    """``popsize`` candidates drawn from ``N(mean, sigma^2 C)`` (one per row)."""
    if state.B is None or state.D is None:
        _decompose(state)
    z = rng.standard_normal((state.popsize, state.dim))
    return state.mean + state.sigma * (z * state.D) @ state.B.T


def cma_tell(state: CmaState, candidates, fitnesses) -> CmaState:
    """Rank-based update; higher fitness is better, non-finite ranks last."""
    X = np.asarray(candidates, dtype=float)
    f = np.asarray(fitnesses, dtype=float)
    f = np.where(np.isfinite(f), f, -np.inf)
    s = replace(state, mean=state.mean.copy(), C=state.C.copy(), p_sigma=state.p_sigma.copy(), p_c=state.p_c.copy())
    s.generation += 1
    s.evaluations += len(f)
    if np.all(f == f[0]):
        # no ordering information: keep the distribution
        return s
    n = s.dim
    cc, cs, c1, cmu, damps, chi_n = s.constants()
    order = np.argsort(-f, kind="stable")[: s.mu]
    Y = (X[order] - state.mean) / state.sigma
    y_w = s.weights @ Y
    s.mean = state.mean + state.sigma * y_w
    inv_sqrt = state.B @ np.diag(1.0 / state.D) @ state.B.T
    s.p_sigma = (1 - cs) * state.p_sigma + math.sqrt(cs * (2 - cs) * s.mueff) * inv_sqrt @ y_w
    ps_norm = float(np.linalg.norm(s.p_sigma))
    hsig = ps_norm / math.sqrt(1 - (1 - cs) ** (2 * s.generation)) / chi_n < 1.4 + 2 / (n + 1)
    s.p_c = (1 - cc) * state.p_c + (math.sqrt(cc * (2 - cc) * s.mueff) * y_w if hsig else 0.0)
    rank_mu = (Y.T * s.weights) @ Y
    s.C = ((1 - c1 - cmu + (0.0 if hsig else c1 * cc * (2 - cc))) * state.C
           + c1 * np.outer(s.p_c, s.p_c) + cmu * rank_mu)
    s.sigma = state.sigma * math.exp(min(1.0, (cs / damps) * (ps_norm / chi_n - 1)))
    _decompose(s)
    return s


def cma_maximize(fun, x0, sigma0: float = 0.5, popsize: int | None = None, generations: int = 100,
                 rng: np.random.Generator | None = None, max_evals: int | None = None, callback=None):
    """Run ask/tell for ``generations``; ``fun`` maps a candidate matrix to fitnesses."""
    rng = rng if rng is not None else np.random.default_rng()
    state = cma_init(x0, sigma0, popsize)
    best_x, best_f = state.mean.copy(), -np.inf
    for g in range(generations):
        X = cma_ask(state, rng)
        f = np.asarray(fun(X), dtype=float)
        k = int(np.nanargmax(np.where(np.isfinite(f), f, -np.inf)))
        if f[k] > best_f:
            best_f, best_x = float(f[k]), X[k].copy()
        state = cma_tell(state, X, f)
        if callback is not None:
            callback(g, state, best_x, best_f)
        if max_evals is not None and state.evaluations >= max_evals:
            break
    return best_x, best_f, state


# ---------------------------------------------------------------------------
# Riccati


class RiccatiError(RuntimeError):
    pass


@dataclass(frozen=True)
class RiccatiSolution:
    P_control: np.ndarray | None = None
    P_filter: np.ndarray | None = None


def care_residual(A, B, Q, R, P) -> np.ndarray:
    A, B, Q, R, P = (np.asarray(v, dtype=float) for v in (A, B, Q, R, P))
    S = B @ np.linalg.solve(R, np.swapaxes(B, -1, -2))
    At = np.swapaxes(A, -1, -2)
    return At @ P + P @ A - P @ S @ P + Q


def solve_care(A, B, Q, R, tol: float = 1e-12, max_time: float = 1e4, step: float | None = None) -> np.ndarray:
    """Stabilising solution of ``A'P + PA - P B R^-1 B' P + Q = 0``.

    Integrates the Riccati differential equation (RK4) from ``P = 0`` until the
    residual norm drops below ``tol``.  Leading axes broadcast, so a stack of
    systems is solved in one pass.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[-1]
    B = np.asarray(B, dtype=float)
    if B.ndim < 2:
        B = B.reshape(n, -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    S = B @ np.linalg.solve(R, np.swapaxes(B, -1, -2))
    At = np.swapaxes(A, -1, -2)
    shape = np.broadcast_shapes(A.shape, S.shape, np.shape(Q))

    def F(P):
        return At @ P + P @ A - P @ S @ P + Q

    scale = np.max(np.abs(A)) + np.max(np.abs(S)) * (1 + np.max(np.abs(Q))) + 1e-12
    h = step or min(0.05, 0.25 / scale)
    while h > 1e-8:
        P = np.zeros(shape)
        t = 0.0
        stalled = False
        while t < max_time:
            for _ in range(50):
                k1 = F(P)
                k2 = F(P + 0.5 * h * k1)
                k3 = F(P + 0.5 * h * k2)
                k4 = F(P + h * k3)
                P = P + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
                P = 0.5 * (P + np.swapaxes(P, -1, -2))
            t += 50 * h
            if not np.all(np.isfinite(P)):
                stalled = True
                break
            res = np.linalg.norm(F(P), axis=(-2, -1))
            if np.all(res < tol):
                return P
        if not stalled:
            raise RiccatiError(f"Riccati ODE did not reach residual {tol:g} within t={max_time:g}")
        h /= 4
    raise RiccatiError("Riccati ODE integration diverged")


def solve_control_riccati(A, b, Q, r, **kw) -> np.ndarray:
    """``P`` for the regulator gain ``K = r^-1 b' P``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(A.shape[-1], -1) if np.ndim(b) < 2 else np.asarray(b, dtype=float)
    return solve_care(A, b, np.asarray(Q, dtype=float), np.atleast_2d(r), **kw)


def solve_filter_riccati(A, V, D, Sigma, **kw) -> np.ndarray:
    """Steady Kalman-Bucy covariance: ``A P + P A' - P D' Sigma^-1 D P + V V' = 0``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[-1]
    V = np.asarray(V, dtype=float).reshape(n, -1)
    D = np.atleast_2d(np.asarray(D, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    return solve_care(A.T, D.T, V @ V.T, Sigma, **kw)


def is_hurwitz(M) -> bool:
    return bool(np.all(np.linalg.eigvals(np.asarray(M, dtype=float)).real < 0))
