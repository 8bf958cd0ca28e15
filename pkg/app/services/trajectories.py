# app/services/trajectories.py
# Target trajectories, their epsilon perturbations and volatility schedules

import logging
from typing import Tuple

import numpy as np

from app.exceptions import ConfigurationError, DomainError
from app.schemas.trajectory import (
    CONTINUITY_TOL, PerturbedTargets, Segment, SegmentKind, TargetTrajectory, VolSchedule
)

logger = logging.getLogger(__name__)

# Points sampled per segment when bounding a sinusoid from below.
_MIN_SAMPLES = 4097


def constant_trajectory(value: float, start: float, end: float) -> TargetTrajectory:
    return TargetTrajectory(segments=(
        Segment(start=start, end=end, kind=SegmentKind.CONSTANT, value=value),
    ))


def linear_trajectory(slope: float, intercept: float, start: float, end: float) -> TargetTrajectory:
    return TargetTrajectory(segments=(
        Segment(start=start, end=end, kind=SegmentKind.LINEAR, slope=slope, intercept=intercept),
    ))


def sinusoid_trajectory(amplitude: float, frequency: float, start: float, end: float,
                        phase: float = 0.0, offset: float = 0.0) -> TargetTrajectory:
    return TargetTrajectory(segments=(
        Segment(start=start, end=end, kind=SegmentKind.SINUSOID, amplitude=amplitude,
                frequency=frequency, phase=phase, offset=offset),
    ))


def _segment_indices(traj: TargetTrajectory, times: np.ndarray) -> np.ndarray:
    lo, hi = traj.start, traj.end
    if times.size and (times.min() < lo - CONTINUITY_TOL or times.max() > hi + CONTINUITY_TOL):
        raise DomainError(
            f"time outside trajectory domain [{lo}, {hi}]: "
            f"[{float(times.min())}, {float(times.max())}]"
        )
    starts = np.array([seg.start for seg in traj.segments])
    # side='right' picks the segment starting at a boundary: right derivative
    index = np.searchsorted(starts, times, side='right') - 1
    return np.clip(index, 0, len(traj.segments) - 1)


def eval_xi_grid(traj: TargetTrajectory, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized (value, right derivative) of xi on an array of times."""
    times = np.asarray(times, dtype=float)
    index = _segment_indices(traj, times)
    values = np.empty_like(times)
    derivatives = np.empty_like(times)
    for i, segment in enumerate(traj.segments):
        mask = index == i
        if mask.any():
            values[mask] = segment.values(times[mask])
            derivatives[mask] = segment.derivatives(times[mask])
    return values, derivatives


def eval_xi(traj: TargetTrajectory, t: float) -> Tuple[float, float]:
    """Value and right derivative of xi at time t."""
    values, derivatives = eval_xi_grid(traj, np.array([t], dtype=float))
    return float(values[0]), float(derivatives[0])


def perturbed_grid(targets: PerturbedTargets,
                   times: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(xi_minus, xi_plus, xi_plus') on an array of times."""
    values, derivatives = eval_xi_grid(targets.base, times)
    return values - targets.epsilon, values + targets.epsilon, derivatives


def min_value(traj: TargetTrajectory) -> float:
    """Lower bound of xi over its whole domain."""
    lows = []
    for segment in traj.segments:
        ends = segment.values(np.array([segment.start, segment.end]))
        if segment.kind == SegmentKind.SINUSOID:
            grid = np.linspace(segment.start, segment.end, _MIN_SAMPLES)
            lows.append(float(segment.values(grid).min()))
        lows.append(float(ends.min()))
    return min(lows)


def validate_above(traj: TargetTrajectory, default_level: float) -> None:
    """Reject trajectories violating xi_t - D > 0."""
    lowest = min_value(traj)
    if lowest <= default_level:
        raise ConfigurationError(
            f"target trajectory reaches {lowest:.6g}, not above the default level {default_level}"
        )


def eval_sigma_grid(sched: VolSchedule, times: np.ndarray) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    starts = np.array([t for t, _ in sched.breakpoints])
    sigmas = np.array([s for _, s in sched.breakpoints])
    if times.size and times.min() < sched.start:
        raise DomainError(
            f"time {float(times.min())} before volatility schedule start {sched.start}"
        )
    # side='left' puts a breakpoint time in the earlier piece
    index = np.clip(np.searchsorted(starts, times, side='left') - 1, 0, len(starts) - 1)
    return sigmas[index]


def eval_sigma(sched: VolSchedule, t: float) -> float:
    """Volatility active at time t."""
    return float(eval_sigma_grid(sched, np.array([t], dtype=float))[0])


def sigma_schedule_constant(sigma: float, start: float = 0.0) -> VolSchedule:
    return VolSchedule(breakpoints=((start, sigma),))


def sigma_schedule_positive_shock() -> VolSchedule:
    """sigma = 1 on [0, 1], 1.5 on (1, 3]."""
    return VolSchedule(breakpoints=((0.0, 1.0), (1.0, 1.5)))


def sigma_schedule_two_shocks() -> VolSchedule:
    """sigma = 1 on [0, 0.8], 0.3 on (0.8, 1.2], 1.3 on (1.2, 3]."""
    return VolSchedule(breakpoints=((0.0, 1.0), (0.8, 0.3), (1.2, 1.3)))
