# app/services/mean_field.py
# Mean-field limits: the OU mean bank and the two-mechanism mean bank with its auxiliary mean

import logging
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from app.exceptions import ConfigurationError
from app.schemas.model import RateFunction
from app.schemas.trajectory import PerturbedTargets, VolSchedule
from app.services.sde_engine import NoiseBlock, TimeGrid, euler_step
from app.services.trajectories import eval_sigma_grid, eval_xi_grid, perturbed_grid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MeanFieldState:
    """Mean bank reserves and auxiliary mean at one grid time."""
    t: float
    x: np.ndarray
    xbar: float


@dataclass(frozen=True)
class MeanFieldPath:
    """Mean-bank paths on a grid.

    x has one column per independent realization; xbar is deterministic.
    """
    times: np.ndarray
    x: np.ndarray
    xbar: np.ndarray
    xi: np.ndarray

    @property
    def n_realizations(self) -> int:
        return int(self.x.shape[1])

    def state(self, k: int) -> MeanFieldState:
        return MeanFieldState(t=float(self.times[k]), x=self.x[k].copy(), xbar=float(self.xbar[k]))


def _check_noise(grid: TimeGrid, noise: NoiseBlock) -> None:
    if noise.n_steps != grid.n_steps:
        raise ValueError(f"noise has {noise.n_steps} steps, grid has {grid.n_steps}")


def simulate_meanfield_ou(alpha: float, sigma: Union[float, VolSchedule], grid: TimeGrid,
                          noise: NoiseBlock, start: float = 0.0) -> np.ndarray:
    """Euler path of dY = -alpha*Y dt + sigma dW; one column per noise column.

    sigma may be a schedule, read at the left end of every step.
    """
    if alpha < 0:
        raise ConfigurationError(f"alpha must be non-negative, got {alpha}")
    _check_noise(grid, noise)
    if isinstance(sigma, VolSchedule):
        sig = eval_sigma_grid(sigma, grid.points[:-1])
    else:
        sig = np.full(grid.n_steps, float(sigma))
    path = np.empty((grid.n_steps + 1, noise.n_banks))
    path[0] = start
    for k in range(grid.n_steps):
        path[k + 1] = euler_step(path[k], -alpha * path[k], float(sig[k]), noise.increments[k], grid.dt)
    return path


def ou_stationary_variance(alpha: float, sigma: float, horizon: float) -> float:
    """Var(Y_T) for Y_0 = 0: sigma^2 (1 - exp(-2 alpha T)) / (2 alpha)."""
    if alpha == 0:
        return sigma ** 2 * horizon
    return sigma ** 2 * (1.0 - math.exp(-2.0 * alpha * horizon)) / (2.0 * alpha)


def simulate_meanfield_two(targets: PerturbedTargets, alpha_fn: RateFunction,
                           gamma_fn: RateFunction, sigma: VolSchedule, grid: TimeGrid,
                           noise: NoiseBlock) -> MeanFieldPath:
    """Co-integrate the auxiliary mean xbar and the mean bank x, both from xi_plus(t0).

    The gap u = xbar - xi_minus solves u' = gamma*u with u(t0) = 2*epsilon, so
    xbar is carried as xi_plus + (u - 2*epsilon). With epsilon = 0 the gap is
    zero and gamma drops out of both equations exactly.
    """
    if alpha_fn.lowest < 0:
        raise ConfigurationError("alpha must be non-negative at every time")
    if gamma_fn.highest > 0:
        raise ConfigurationError("gamma must be non-positive at every time")
    _check_noise(grid, noise)

    points = grid.points
    left = points[:-1]
    _, xi_plus, _ = perturbed_grid(targets, points)
    alpha = alpha_fn.evaluate(left)
    gamma = gamma_fn.evaluate(left)
    sig = eval_sigma_grid(sigma, left)
    xi_step = np.diff(xi_plus)

    gap0 = 2.0 * targets.epsilon
    gap = gap0 * np.concatenate(([1.0], np.cumprod(1.0 + gamma * grid.dt)))
    xbar = xi_plus + (gap - gap0)

    x = np.empty((grid.n_steps + 1, noise.n_banks))
    x[0] = xi_plus[0]
    for k in range(grid.n_steps):
        mf_drift = alpha[k] * (xbar[k] - x[k]) + gamma[k] * gap[k]
        x[k + 1] = euler_step(x[k], mf_drift, float(sig[k]), noise.increments[k], grid.dt) + xi_step[k]

    xi, _ = eval_xi_grid(targets.base, points)
    return MeanFieldPath(times=points, x=x, xbar=xbar, xi=xi)
