"""Fitness functions on recorded trajectories (higher is better)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadraticCost:
    """``F = -sum_t (x_t - x*)^T Q (x_t - x*) + sum_j r_j u_tj^2``."""

    Q: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        r = np.atleast_1d(np.asarray(self.r, dtype=float))
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be symmetric positive semidefinite")
        if (r < 0).any():
            raise ValueError("r must be non-negative")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "r", r)

    kind = "quadratic"


@dataclass(frozen=True)
class SwingUpCost:
    """``F = -f - sum_t u_t^T R u_t`` with diagonal ``R``.

    ``f`` is the index of the final recorded step: the step at which the
    swing-up succeeded, or the last step of the horizon otherwise.
    """

    R: np.ndarray
    target_height: float = 1.5

    def __post_init__(self):
        R = np.atleast_1d(np.asarray(self.R, dtype=float))
        if R.ndim == 2:
            if not np.allclose(R, np.diag(np.diag(R))):
                raise ValueError("R must be diagonal")
            R = np.diag(R).copy()
        if (R < 0).any():
            raise ValueError("R must be non-negative")
        object.__setattr__(self, "R", R)

    kind = "swing-up"


def fitness_quadratic(xs, us, Q, r, target) -> float:
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    us = np.asarray(us, dtype=float).reshape(len(xs), -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    e = xs - np.asarray(target, dtype=float)
    return -float(np.einsum("ti,ij,tj->", e, Q, e) + np.sum(r * us**2))


def fitness_swing_up(us, R, final_step: int) -> float:
    """``final_step`` is the success step, or the horizon's last step when the swing-up failed."""
    us = np.atleast_2d(np.asarray(us, dtype=float))
    R = np.atleast_1d(np.asarray(R, dtype=float))
    if R.ndim == 2:
        R = np.diag(R)
    return -float(final_step) - float(np.sum(R * us**2))
