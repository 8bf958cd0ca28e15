# app/services/sde_engine.py
# Time grids, seeded Wiener increments and the explicit Euler step

import logging
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from app.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

# Increments are always drawn in chunks of this many steps, so a path's noise
# does not depend on how the caller batches or slices the simulation.
NOISE_CHUNK_STEPS = 1024

# Relative tolerance when checking that dt divides the interval.
_DIVISIBILITY_TOL = 1e-6


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = t0 + k*dt, k = 0..n_steps."""
    t0: float
    t1: float
    dt: float
    n_steps: int

    def time(self, k: int) -> float:
        return self.t0 + k * self.dt

    @property
    def points(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_steps + 1, dtype=float) * self.dt

    @property
    def span(self) -> float:
        return self.t1 - self.t0


@dataclass(frozen=True)
class NoiseBlock:
    """Wiener increments for one path: one row per step, one column per bank."""
    increments: np.ndarray
    seed: int
    path_index: int

    def __post_init__(self) -> None:
        self.increments.setflags(write=False)

    @property
    def n_steps(self) -> int:
        return int(self.increments.shape[0])

    @property
    def n_banks(self) -> int:
        return int(self.increments.shape[1])


def make_grid(t0: float, t1: float, dt: float) -> TimeGrid:
    """Build a uniform time grid; dt must divide [t0, t1]."""
    for name, value in (('t0', t0), ('t1', t1), ('dt', dt)):
        if not math.isfinite(value):
            raise ConfigurationError(f"{name} must be finite, got {value}")
    if dt <= 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    if t1 <= t0:
        raise ConfigurationError(f"t1 must exceed t0, got [{t0}, {t1}]")

    span = t1 - t0
    n_steps = int(round(span / dt))
    if n_steps < 1:
        raise ConfigurationError(f"dt={dt} is larger than the interval [{t0}, {t1}]")
    if abs(n_steps * dt - span) > _DIVISIBILITY_TOL * span:
        raise ConfigurationError(f"dt={dt} does not divide the interval [{t0}, {t1}]")

    return TimeGrid(t0=float(t0), t1=float(t1), dt=span / n_steps, n_steps=n_steps)


def _check_seed(seed: int) -> None:
    if seed < 0:
        raise ConfigurationError(f"seed must be a non-negative integer, got {seed}")


def _zigzag(key: int) -> int:
    return 2 * key if key >= 0 else -2 * key - 1


def derive_seed(master_seed: int, *keys: int) -> int:
    """Child seed for a labelled sub-stream (quarter, candidate, evolution, ...)."""
    _check_seed(master_seed)
    sequence = np.random.SeedSequence(master_seed, spawn_key=tuple(_zigzag(int(k)) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based generator for one path, keyed by (seed, path_index)."""
    _check_seed(seed)
    sequence = np.random.SeedSequence(seed, spawn_key=(int(path_index),))
    return np.random.Generator(np.random.Philox(sequence))


def path_noise_chunks(grid: TimeGrid, n_banks: int, seed: int,
                      path_index: int) -> Iterator[np.ndarray]:
    """Yield the path's increments in chunks of NOISE_CHUNK_STEPS rows."""
    if n_banks < 1:
        raise ConfigurationError("n_banks must be at least 1")
    generator = path_generator(seed, path_index)
    scale = math.sqrt(grid.dt)
    for start in range(0, grid.n_steps, NOISE_CHUNK_STEPS):
        rows = min(NOISE_CHUNK_STEPS, grid.n_steps - start)
        yield generator.standard_normal((rows, n_banks)) * scale


def sample_noise(grid: TimeGrid, n_banks: int, seed: int, path_index: int) -> NoiseBlock:
    """Full increment block for one path; identical to the concatenated chunks."""
    chunks = list(path_noise_chunks(grid, n_banks, seed, path_index))
    increments = np.concatenate(chunks, axis=0)
    return NoiseBlock(increments=increments, seed=seed, path_index=path_index)


def euler_step(state: np.ndarray, drift: np.ndarray, sigma: float,
               dW: np.ndarray, dt: float) -> np.ndarray:
    """One explicit Euler step: state + drift*dt + sigma*dW."""
    state = np.asarray(state, dtype=float)
    drift = np.asarray(drift, dtype=float)
    dW = np.asarray(dW, dtype=float)
    if state.shape != drift.shape or state.shape != dW.shape:
        raise ValueError(
            f"Shape mismatch in euler_step: state {state.shape}, "
            f"drift {drift.shape}, dW {dW.shape}"
        )
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    return state + drift * dt + sigma * dW
