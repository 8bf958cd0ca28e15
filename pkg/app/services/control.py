# app/services/control.py
# Riccati solution of the tracking problem, feedback control and cooperation-rate extraction

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from app.exceptions import ConfigurationError, DomainError, SingularDenominatorError
from app.schemas.control import ControlProblem
from app.schemas.model import RateFunction
from app.schemas.trajectory import PerturbedTargets
from app.services.sde_engine import NoiseBlock, TimeGrid, euler_step, make_grid
from app.services.trajectories import eval_xi_grid, perturbed_grid
from app.utils import log_event

logger = logging.getLogger(__name__)

DEFAULT_ODE_STEP = 1e-4
DENOMINATOR_FLOOR = 1e-6

# Slack when testing a time against the horizon ends.
_HORIZON_TOL = 1e-9


@dataclass(frozen=True)
class RiccatiSolution:
    """Coefficients of V(t, z) = a(t) + b(t) z + c(t) z^2 on a forward grid."""
    grid: TimeGrid
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    lam: float

    def coefficients(self, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=float)
        if t.size and (t.min() < self.grid.t0 - _HORIZON_TOL or t.max() > self.grid.t1 + _HORIZON_TOL):
            raise DomainError(
                f"time outside control horizon [{self.grid.t0}, {self.grid.t1}]"
            )
        points = self.grid.points
        return (np.interp(t, points, self.a), np.interp(t, points, self.b),
                np.interp(t, points, self.c))


@dataclass(frozen=True)
class ControlLaw:
    """Cooperation rates realizing the optimal feedback, sampled on a grid.

    clamped marks the samples where the formula gave a positive gamma and
    gamma = 0 was enforced.
    """
    times: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    xbar: np.ndarray
    b: np.ndarray
    c: np.ndarray
    clamped: np.ndarray
    lam: float

    def alpha_rate(self) -> RateFunction:
        return RateFunction.sampled(self.times, self.alpha)

    def gamma_rate(self) -> RateFunction:
        return RateFunction.sampled(self.times, self.gamma)

    def beta(self, z: np.ndarray) -> np.ndarray:
        """Optimal control along a mean-bank path sampled on the same grid."""
        return -(self.b + 2.0 * self.c * np.asarray(z, dtype=float)) / (2.0 * self.lam)


def hamiltonian(p: float, lam: float) -> float:
    """min over d of d*p + lam*d^2."""
    if lam <= 0:
        raise ConfigurationError(f"lambda must be positive, got {lam}")
    return -p * p / (4.0 * lam)


def _riccati_rhs(a: float, b: float, c: float, xi: float, lam: float,
                 sigma: float) -> Tuple[float, float, float]:
    da = b * b / (4.0 * lam) - sigma * sigma * c - xi * xi
    db = b * c / lam + 2.0 * xi
    dc = c * c / lam - 1.0
    return da, db, dc


def solve_riccati(problem: ControlProblem, dt_ode: float = DEFAULT_ODE_STEP) -> RiccatiSolution:
    """Integrate a, b, c backward from zero terminal data with classical RK4."""
    lam = problem.lam
    if dt_ode > math.sqrt(lam) / 10.0:
        raise ConfigurationError(
            f"dt_ode={dt_ode} too coarse for lambda={lam}; need dt_ode <= sqrt(lambda)/10"
        )
    grid = make_grid(problem.t0, problem.t1, dt_ode)
    h = grid.dt
    n = grid.n_steps

    # xi at every node and every midpoint
    half_points = grid.t0 + np.arange(2 * n + 1, dtype=float) * (h / 2.0)
    half_points[-1] = grid.t1
    xi_half, _ = eval_xi_grid(problem.targets.base, half_points)
    sigma = problem.sigma

    a = np.zeros(n + 1)
    b = np.zeros(n + 1)
    c = np.zeros(n + 1)
    ya, yb, yc = 0.0, 0.0, 0.0
    for k in range(n, 0, -1):
        xi_hi = float(xi_half[2 * k])
        xi_mid = float(xi_half[2 * k - 1])
        xi_lo = float(xi_half[2 * k - 2])
        # stepping backward: y(t - h) = y(t) - h * f
        k1 = _riccati_rhs(ya, yb, yc, xi_hi, lam, sigma)
        k2 = _riccati_rhs(ya - 0.5 * h * k1[0], yb - 0.5 * h * k1[1], yc - 0.5 * h * k1[2],
                          xi_mid, lam, sigma)
        k3 = _riccati_rhs(ya - 0.5 * h * k2[0], yb - 0.5 * h * k2[1], yc - 0.5 * h * k2[2],
                          xi_mid, lam, sigma)
        k4 = _riccati_rhs(ya - h * k3[0], yb - h * k3[1], yc - h * k3[2], xi_lo, lam, sigma)
        ya -= h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        yb -= h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        yc -= h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        a[k - 1], b[k - 1], c[k - 1] = ya, yb, yc

    logger.debug(f"Riccati solved on [{grid.t0}, {grid.t1}] with {n} RK4 steps, c(t0)={c[0]:.8g}")
    return RiccatiSolution(grid=grid, a=a, b=b, c=c, lam=lam)


def value_function(sol: RiccatiSolution, t: float, z: float) -> float:
    """V(t, z) = a(t) + b(t) z + c(t) z^2."""
    a, b, c = sol.coefficients(np.array([t]))
    return float(a[0] + b[0] * z + c[0] * z * z)


def optimal_beta(sol: RiccatiSolution, t: float, z: float, lam: float) -> float:
    """beta = -(b(t) + 2 c(t) z) / (2 lam)."""
    _, b, c = sol.coefficients(np.array([t]))
    return float(-(b[0] + 2.0 * c[0] * z) / (2.0 * lam))


def hjb_residual(sol: RiccatiSolution, problem: ControlProblem, z: np.ndarray) -> np.ndarray:
    """HJB residual of the quadratic V at interior nodes, one column per z."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    points = sol.grid.points[1:-1]
    a, b, c = sol.a[1:-1], sol.b[1:-1], sol.c[1:-1]
    xi, _ = eval_xi_grid(problem.targets.base, points)
    lam, sigma = problem.lam, problem.sigma

    da = b * b / (4.0 * lam) - sigma * sigma * c - xi * xi
    db = b * c / lam + 2.0 * xi
    dc = c * c / lam - 1.0

    Z = z[None, :]
    v_t = da[:, None] + db[:, None] * Z + dc[:, None] * Z * Z
    v_z = b[:, None] + 2.0 * c[:, None] * Z
    v_zz = 2.0 * c[:, None]
    return v_t - v_z * v_z / (4.0 * lam) + 0.5 * sigma * sigma * v_zz + (Z - xi[:, None]) ** 2


def simulate_tracking(sol: RiccatiSolution, problem: ControlProblem, grid: TimeGrid,
                      noise: NoiseBlock, controlled: bool = True) -> np.ndarray:
    """Tracking cost of dZ = beta dt + sigma dW per noise column.

    Z starts at xi_plus(t0); the cost is the left-point sum of
    ((Z - xi)^2 + lam*beta^2) dt.
    """
    if noise.n_steps != grid.n_steps:
        raise ValueError(f"noise has {noise.n_steps} steps, grid has {grid.n_steps}")
    left = grid.points[:-1]
    xi, _ = eval_xi_grid(problem.targets.base, grid.points)
    _, b, c = sol.coefficients(left)

    z = np.full(noise.n_banks, xi[0] + problem.targets.epsilon)
    cost = np.zeros(noise.n_banks)
    for k in range(grid.n_steps):
        beta = -(b[k] + 2.0 * c[k] * z) / (2.0 * problem.lam) if controlled else np.zeros_like(z)
        cost += ((z - xi[k]) ** 2 + problem.lam * beta ** 2) * grid.dt
        z = euler_step(z, beta, problem.sigma, noise.increments[k], grid.dt)
    return cost


def derive_control_law(sol: RiccatiSolution, targets: PerturbedTargets, lam: float,
                       grid: TimeGrid, floor: float = DENOMINATOR_FLOOR) -> ControlLaw:
    """alpha = c/lambda and gamma from forward co-integration with xbar.

    gamma matches the feedback's constant term,
    gamma = (-(c/lam) xbar - b/(2 lam) - xi_plus') / (xbar - xi_minus),
    and is clamped to min(gamma, 0) before xbar takes its Euler step.
    """
    if targets.epsilon <= 0:
        raise ConfigurationError("control law extraction needs epsilon > 0")

    times = grid.points
    _, b, c = sol.coefficients(times)
    xi_minus, xi_plus, xi_plus_slope = perturbed_grid(targets, times)

    alpha = np.maximum(c / lam, 0.0)
    gamma = np.zeros_like(times)
    xbar = np.empty_like(times)
    clamped = np.zeros(times.shape, dtype=bool)

    xbar[0] = xi_plus[0]
    for k in range(times.size):
        gap = xbar[k] - xi_minus[k]
        if abs(gap) < floor:
            raise SingularDenominatorError(k, float(times[k]), float(gap))
        candidate = (-(c[k] / lam) * xbar[k] - b[k] / (2.0 * lam) - xi_plus_slope[k]) / gap
        if candidate > 0:
            clamped[k] = True
            candidate = 0.0
        gamma[k] = candidate
        if k + 1 < times.size:
            xbar[k + 1] = xbar[k] + gamma[k] * gap * grid.dt + (xi_plus[k + 1] - xi_plus[k])

    if clamped.any():
        log_event("gamma_clamped", {
            "samples": int(clamped.sum()),
            "first_time": float(times[np.argmax(clamped)]),
            "interval": [grid.t0, grid.t1],
        }, level="debug")

    return ControlLaw(times=times, alpha=alpha, gamma=gamma, xbar=xbar, b=b, c=c,
                      clamped=clamped, lam=lam)
