# app/services/bank_models.py
# Drift of the banking system models and path simulation with default removal

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.exceptions import StateError
from app.schemas.model import ModelFamily, ModelSpec, Normalization
from app.services.sde_engine import NoiseBlock, TimeGrid, euler_step, path_noise_chunks
from app.services.trajectories import eval_sigma_grid, eval_xi, perturbed_grid

logger = logging.getLogger(__name__)

MAX_TRAJECTORY_POINTS = 2000
DEFAULT_BATCH_SIZE = 256


@dataclass(frozen=True)
class SystemState:
    """Log-monetary reserves of the active banks plus the default record."""
    time: float
    reserves: np.ndarray
    active_ids: Tuple[int, ...]
    defaults: Tuple[Tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        reserves = np.array(self.reserves, dtype=float)
        reserves.setflags(write=False)
        object.__setattr__(self, 'reserves', reserves)
        if reserves.shape != (len(self.active_ids),):
            raise StateError(
                f"{reserves.size} reserves given for {len(self.active_ids)} active banks"
            )
        defaulted = {bank for bank, _ in self.defaults}
        if defaulted & set(self.active_ids):
            raise StateError("a defaulted bank cannot be active")
        if any(when > self.time for _, when in self.defaults):
            raise StateError("default recorded after the state time")

    @property
    def n_active(self) -> int:
        return len(self.active_ids)

    @property
    def n_banks(self) -> int:
        return len(self.active_ids) + len(self.defaults)


@dataclass(frozen=True)
class PathResult:
    terminal_state: SystemState
    mean_barrier_hit: bool
    trajectory_times: Optional[np.ndarray] = None
    trajectory: Optional[np.ndarray] = None

    @property
    def n_defaults(self) -> int:
        return len(self.terminal_state.defaults)

    @property
    def default_times(self) -> List[float]:
        return [when for _, when in self.terminal_state.defaults]


@dataclass(frozen=True)
class EnsembleOutcome:
    """Per-path results of a Monte Carlo run, ordered by path index.

    default_steps holds the grid index at which each bank defaulted during the
    run, or -1. Banks already defaulted in the starting state are never counted.
    """
    grid: TimeGrid
    seed: int
    default_steps: np.ndarray
    mean_barrier_hit: np.ndarray
    terminal_reserves: np.ndarray
    trajectory_times: Optional[np.ndarray] = None
    trajectories: Optional[np.ndarray] = None

    @property
    def n_paths(self) -> int:
        return int(self.default_steps.shape[0])

    @property
    def n_banks(self) -> int:
        return int(self.default_steps.shape[1])

    @property
    def n_defaults(self) -> np.ndarray:
        return (self.default_steps >= 0).sum(axis=1)

    @property
    def default_times(self) -> np.ndarray:
        times = self.grid.t0 + self.default_steps * self.grid.dt
        return np.where(self.default_steps >= 0, times, np.nan)

    @property
    def terminal_mean(self) -> np.ndarray:
        alive = ~np.isnan(self.terminal_reserves)
        counts = alive.sum(axis=1)
        totals = np.where(alive, self.terminal_reserves, 0.0).sum(axis=1)
        with np.errstate(invalid='ignore', divide='ignore'):
            return np.where(counts > 0, totals / np.maximum(counts, 1), np.nan)

    @property
    def terminal_dispersion(self) -> np.ndarray:
        """Cross-sectional standard deviation of surviving reserves per path."""
        alive = ~np.isnan(self.terminal_reserves)
        counts = alive.sum(axis=1)
        centered = np.where(alive, self.terminal_reserves - self.terminal_mean[:, None], 0.0)
        variance = (centered ** 2).sum(axis=1) / np.maximum(counts, 1)
        return np.where(counts > 0, np.sqrt(variance), np.nan)


@dataclass(frozen=True)
class _Coefficients:
    """Model coefficients at the left endpoint of every step."""
    alpha: np.ndarray
    gamma: np.ndarray
    sigma: np.ndarray
    xi_minus: np.ndarray
    xi_plus_slope: np.ndarray


@dataclass
class _BatchResult:
    default_steps: np.ndarray
    mean_barrier_hit: np.ndarray
    terminal_reserves: np.ndarray
    trajectories: Optional[np.ndarray] = field(default=None)


def initial_state(spec: ModelSpec, t0: float) -> SystemState:
    """All banks active at the model's starting value."""
    if spec.initial_value is not None:
        value = spec.initial_value
    elif spec.family == ModelFamily.TWO_MECHANISM and spec.targets is not None:
        value = eval_xi(spec.targets.base, t0)[0] + spec.targets.epsilon
    else:
        value = 0.0
    return SystemState(
        time=t0,
        reserves=np.full(spec.n_banks, value),
        active_ids=tuple(range(spec.n_banks)),
    )


def empirical_mean(state: SystemState) -> float:
    """Arithmetic mean of the active reserves."""
    if state.n_active == 0:
        raise StateError("empirical mean of an empty banking system")
    return float(state.reserves.mean())


def _drift_terms(spec: ModelSpec, X: np.ndarray, active: np.ndarray, alpha: float,
                 gamma: float, xi_minus: float, xi_plus_slope: float) -> np.ndarray:
    """Drift of a [paths, banks] reserve matrix; zero for inactive entries."""
    if spec.family == ModelFamily.INDEPENDENT:
        return np.zeros_like(X)

    n_act = active.sum(axis=1)
    total = np.where(active, X, 0.0).sum(axis=1)
    mean = total / np.maximum(n_act, 1)
    if spec.normalization == Normalization.INITIAL:
        weight = n_act / spec.n_banks
        level = total / spec.n_banks
    else:
        weight = np.ones_like(mean)
        level = mean

    drift = alpha * weight[:, None] * (mean[:, None] - X)
    if spec.family == ModelFamily.TWO_MECHANISM:
        drift = drift + gamma * (level - xi_minus)[:, None] + xi_plus_slope
    return np.where(active, drift, 0.0)


def drift(spec: ModelSpec, state: SystemState, t: float,
          xi_plus_slope: Optional[float] = None) -> np.ndarray:
    """Drift vector over the active banks at time t.

    xi_plus_slope replaces the analytic derivative of xi_plus; the simulator
    passes the secant slope of the step.
    """
    if state.n_active == 0:
        raise StateError("drift requested for a system with no active banks")

    xi_minus = 0.0
    slope = 0.0
    if spec.family == ModelFamily.TWO_MECHANISM and spec.targets is not None:
        value, derivative = eval_xi(spec.targets.base, t)
        xi_minus = value - spec.targets.epsilon
        slope = derivative if xi_plus_slope is None else xi_plus_slope

    X = state.reserves[None, :]
    active = np.ones_like(X, dtype=bool)
    terms = _drift_terms(spec, X, active, spec.alpha.at(t), spec.gamma.at(t), xi_minus, slope)
    return terms[0]


def _coefficients(spec: ModelSpec, grid: TimeGrid) -> _Coefficients:
    points = grid.points
    left = points[:-1]
    zeros = np.zeros(grid.n_steps)
    if spec.family == ModelFamily.TWO_MECHANISM and spec.targets is not None:
        xi_minus, xi_plus, _ = perturbed_grid(spec.targets, points)
        xi_minus = xi_minus[:-1]
        xi_plus_slope = np.diff(xi_plus) / grid.dt
    else:
        xi_minus, xi_plus_slope = zeros, zeros
    return _Coefficients(
        alpha=spec.alpha.evaluate(left),
        gamma=spec.gamma.evaluate(left),
        sigma=eval_sigma_grid(spec.vol, left),
        xi_minus=xi_minus,
        xi_plus_slope=xi_plus_slope,
    )


def record_steps(n_steps: int, max_points: int) -> np.ndarray:
    """Grid indices kept when a path is decimated to at most max_points."""
    stride = max(1, math.ceil(n_steps / max(max_points - 2, 1)))
    steps = np.arange(0, n_steps + 1, stride)
    if steps[-1] != n_steps:
        steps = np.append(steps, n_steps)
    return steps


def _start_vectors(spec: ModelSpec, start: SystemState) -> Tuple[np.ndarray, np.ndarray]:
    reserves = np.zeros(spec.n_banks)
    active = np.zeros(spec.n_banks, dtype=bool)
    ids = np.asarray(start.active_ids, dtype=int)
    if ids.size and (ids.min() < 0 or ids.max() >= spec.n_banks):
        raise StateError(f"bank ids must lie in [0, {spec.n_banks})")
    reserves[ids] = start.reserves
    active[ids] = True
    return reserves, active


def _run_paths(spec: ModelSpec, grid: TimeGrid, start: SystemState,
               chunks: Iterable[np.ndarray], n_paths: int, record: bool,
               max_points: int = MAX_TRAJECTORY_POINTS) -> _BatchResult:
    """Simulate n_paths paths driven by [paths, rows, banks] noise chunks."""
    coeffs = _coefficients(spec, grid)
    D = spec.default_level
    start_reserves, start_active = _start_vectors(spec, start)

    X = np.tile(start_reserves, (n_paths, 1))
    active = np.tile(start_active, (n_paths, 1))
    default_steps = np.full(X.shape, -1, dtype=np.int64)

    n_act = active.sum(axis=1)
    mean = np.where(active, X, 0.0).sum(axis=1) / np.maximum(n_act, 1)
    mean_hit = (n_act > 0) & (mean <= D)
    at_barrier = active & (X <= D)
    default_steps[at_barrier] = 0
    active &= ~at_barrier

    recorded = record_steps(grid.n_steps, max_points) if record else np.array([], dtype=int)
    trajectories = None
    slot = 0
    if record:
        trajectories = np.full((n_paths, recorded.size, spec.n_banks), np.nan)
        trajectories[:, 0, :] = np.where(active | at_barrier, X, np.nan)
        slot = 1

    k = 0
    for chunk in chunks:
        if chunk.shape[0] != n_paths or chunk.shape[2] != spec.n_banks:
            raise ValueError(
                f"noise chunk shape {chunk.shape} does not match {n_paths} paths "
                f"of {spec.n_banks} banks"
            )
        for row in range(chunk.shape[1]):
            if k >= grid.n_steps:
                raise ValueError("noise has more steps than the time grid")
            step_drift = _drift_terms(spec, X, active, coeffs.alpha[k], coeffs.gamma[k],
                                      coeffs.xi_minus[k], coeffs.xi_plus_slope[k])
            stepped = euler_step(X, step_drift, float(coeffs.sigma[k]), chunk[:, row, :], grid.dt)
            X = np.where(active, stepped, X)

            n_act = active.sum(axis=1)
            mean = np.where(active, X, 0.0).sum(axis=1) / np.maximum(n_act, 1)
            mean_hit |= (n_act > 0) & (mean <= D)

            newly = active & (X <= D)
            default_steps[newly] = k + 1
            active &= ~newly
            k += 1

            if trajectories is not None and slot < recorded.size and recorded[slot] == k:
                trajectories[:, slot, :] = np.where(active | newly, X, np.nan)
                slot += 1

    if k != grid.n_steps:
        raise ValueError(f"noise covers {k} steps, grid has {grid.n_steps}")

    return _BatchResult(
        default_steps=default_steps,
        mean_barrier_hit=mean_hit,
        terminal_reserves=np.where(active, X, np.nan),
        trajectories=trajectories,
    )


def simulate_path(spec: ModelSpec, grid: TimeGrid, noise: NoiseBlock,
                  record_trajectory: bool = False,
                  start: Optional[SystemState] = None) -> PathResult:
    """Simulate one path; defaulted banks leave the system at the detection step."""
    if noise.n_steps != grid.n_steps or noise.n_banks != spec.n_banks:
        raise ValueError(
            f"noise block {noise.increments.shape} does not match grid steps "
            f"{grid.n_steps} and {spec.n_banks} banks"
        )
    start = start or initial_state(spec, grid.t0)
    chunks = [noise.increments[None, :, :]]
    result = _run_paths(spec, grid, start, chunks, 1, record_trajectory)

    steps = result.default_steps[0]
    new_defaults = sorted(
        ((int(bank), grid.time(int(steps[bank]))) for bank in np.flatnonzero(steps >= 0)),
        key=lambda item: (item[1], item[0]),
    )
    terminal = result.terminal_reserves[0]
    alive = np.flatnonzero(~np.isnan(terminal))
    terminal_state = SystemState(
        time=grid.t1,
        reserves=terminal[alive],
        active_ids=tuple(int(bank) for bank in alive),
        defaults=tuple(start.defaults) + tuple(new_defaults),
    )
    trajectory = None if result.trajectories is None else result.trajectories[0]
    times = None
    if record_trajectory:
        times = grid.t0 + record_steps(grid.n_steps, MAX_TRAJECTORY_POINTS) * grid.dt
    return PathResult(
        terminal_state=terminal_state,
        mean_barrier_hit=bool(result.mean_barrier_hit[0]),
        trajectory_times=times,
        trajectory=trajectory,
    )


def _batch_chunks(grid: TimeGrid, n_banks: int, seed: int,
                  path_indices: Sequence[int]) -> Iterator[np.ndarray]:
    streams = [path_noise_chunks(grid, n_banks, seed, p) for p in path_indices]
    for parts in zip(*streams):
        yield np.stack(parts)


def _simulate_batch(spec: ModelSpec, grid: TimeGrid, start: SystemState, seed: int,
                    first: int, count: int, record: bool, max_points: int) -> _BatchResult:
    indices = range(first, first + count)
    chunks = _batch_chunks(grid, spec.n_banks, seed, indices)
    return _run_paths(spec, grid, start, chunks, count, record, max_points)


def simulate_ensemble(spec: ModelSpec, grid: TimeGrid, n_paths: int, seed: int,
                      start: Optional[SystemState] = None, workers: int = 1,
                      batch_size: int = DEFAULT_BATCH_SIZE, record: bool = False,
                      max_points: int = MAX_TRAJECTORY_POINTS) -> EnsembleOutcome:
    """Simulate paths 0..n_paths-1 in batches, optionally across processes.

    Path p always uses the noise stream (seed, p), so the outcome does not
    depend on workers or batch_size.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be at least 1, got {n_paths}")
    start = start or initial_state(spec, grid.t0)
    batch_size = max(1, batch_size)
    batches = [(first, min(batch_size, n_paths - first)) for first in range(0, n_paths, batch_size)]

    logger.debug(
        f"Simulating {n_paths} paths of {spec.family.value} over [{grid.t0}, {grid.t1}] "
        f"in {len(batches)} batches on {workers} workers"
    )

    if workers > 1 and len(batches) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(batches))) as pool:
            futures = [
                pool.submit(_simulate_batch, spec, grid, start, seed, first, count, record, max_points)
                for first, count in batches
            ]
            results = [f.result() for f in futures]
    else:
        results = [
            _simulate_batch(spec, grid, start, seed, first, count, record, max_points)
            for first, count in batches
        ]

    trajectories = None
    times = None
    if record:
        trajectories = np.concatenate([r.trajectories for r in results if r.trajectories is not None])
        times = grid.t0 + record_steps(grid.n_steps, max_points) * grid.dt
    return EnsembleOutcome(
        grid=grid,
        seed=seed,
        default_steps=np.concatenate([r.default_steps for r in results]),
        mean_barrier_hit=np.concatenate([r.mean_barrier_hit for r in results]),
        terminal_reserves=np.concatenate([r.terminal_reserves for r in results]),
        trajectory_times=times,
        trajectories=trajectories,
    )
