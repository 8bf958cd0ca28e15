from enum import Enum
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

# Tolerance for matching segment boundaries and values.
CONTINUITY_TOL = 1e-9


class SegmentKind(str, Enum):
    """Supported target trajectory pieces."""
    CONSTANT = "constant"
    LINEAR = "linear"
    SINUSOID = "sinusoid"


class Segment(BaseModel):
    """One piece of a target trajectory on [start, end].

    constant:  value
    linear:    intercept + slope * (t - start)
    sinusoid:  amplitude * sin(2*pi*frequency*t + phase) + offset
    """
    model_config = ConfigDict(frozen=True)

    start: float
    end: float
    kind: SegmentKind
    value: float = 0.0
    slope: float = 0.0
    intercept: float = 0.0
    amplitude: float = 0.0
    frequency: float = 0.0
    phase: float = 0.0
    offset: float = 0.0

    @model_validator(mode='after')
    def _check_interval(self) -> 'Segment':
        if not self.end > self.start:
            raise ValueError(f"segment end {self.end} must exceed start {self.start}")
        return self

    def values(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == SegmentKind.CONSTANT:
            return np.full_like(t, self.value)
        if self.kind == SegmentKind.LINEAR:
            return self.intercept + self.slope * (t - self.start)
        omega = 2.0 * np.pi * self.frequency
        return self.amplitude * np.sin(omega * t + self.phase) + self.offset

    def derivatives(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == SegmentKind.CONSTANT:
            return np.zeros_like(t)
        if self.kind == SegmentKind.LINEAR:
            return np.full_like(t, self.slope)
        omega = 2.0 * np.pi * self.frequency
        return self.amplitude * omega * np.cos(omega * t + self.phase)


class TargetTrajectory(BaseModel):
    """Continuous, piecewise differentiable ideal-bank log-reserve path."""
    model_config = ConfigDict(frozen=True)

    segments: Tuple[Segment, ...] = Field(..., min_length=1)

    @model_validator(mode='after')
    def _check_continuity(self) -> 'TargetTrajectory':
        for left, right in zip(self.segments, self.segments[1:]):
            if abs(left.end - right.start) > CONTINUITY_TOL:
                raise ValueError(
                    f"segments must be contiguous: {left.end} followed by {right.start}"
                )
            jump = float(left.values(np.array([left.end]))[0] - right.values(np.array([right.start]))[0])
            if abs(jump) > CONTINUITY_TOL:
                raise ValueError(f"trajectory jumps by {jump:.3e} at t={right.start}")
        return self

    @property
    def start(self) -> float:
        return self.segments[0].start

    @property
    def end(self) -> float:
        return self.segments[-1].end


class PerturbedTargets(BaseModel):
    """xi_minus = xi - epsilon and xi_plus = xi + epsilon around a base trajectory."""
    model_config = ConfigDict(frozen=True)

    base: TargetTrajectory
    epsilon: float = Field(..., ge=0.0)


class VolSchedule(BaseModel):
    """Piecewise constant volatility.

    Each (time, sigma) pair opens a piece that is left-open and right-closed,
    except the first piece, which also contains its start time. This is the
    [0,1], (1,3] convention of the shock schedules.
    """
    model_config = ConfigDict(frozen=True)

    breakpoints: Tuple[Tuple[float, float], ...] = Field(..., min_length=1)

    @model_validator(mode='after')
    def _check_breakpoints(self) -> 'VolSchedule':
        times = [t for t, _ in self.breakpoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("volatility breakpoint times must be strictly increasing")
        if any(sigma < 0 for _, sigma in self.breakpoints):
            raise ValueError("volatility values must be non-negative")
        return self

    @property
    def start(self) -> float:
        return self.breakpoints[0][0]
