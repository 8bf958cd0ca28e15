from enum import Enum
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.trajectory import PerturbedTargets, VolSchedule


class RateKind(str, Enum):
    CONSTANT = "constant"
    SAMPLED = "sampled"


class RateFunction(BaseModel):
    """A cooperation rate as a function of time.

    Sampled rates are linearly interpolated and held constant outside their
    sample range.
    """
    model_config = ConfigDict(frozen=True)

    kind: RateKind = RateKind.CONSTANT
    value: float = 0.0
    times: Tuple[float, ...] = ()
    values: Tuple[float, ...] = ()

    @model_validator(mode='after')
    def _check_samples(self) -> 'RateFunction':
        if self.kind == RateKind.SAMPLED:
            if len(self.times) == 0 or len(self.times) != len(self.values):
                raise ValueError("sampled rate needs equally many times and values")
            if any(b <= a for a, b in zip(self.times, self.times[1:])):
                raise ValueError("sampled rate times must be strictly increasing")
        return self

    @classmethod
    def constant(cls, value: float) -> 'RateFunction':
        return cls(kind=RateKind.CONSTANT, value=value)

    @classmethod
    def sampled(cls, times: np.ndarray, values: np.ndarray) -> 'RateFunction':
        return cls(kind=RateKind.SAMPLED,
                   times=tuple(float(t) for t in times),
                   values=tuple(float(v) for v in values))

    def evaluate(self, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if self.kind == RateKind.CONSTANT:
            return np.full_like(times, self.value)
        return np.interp(times, np.asarray(self.times), np.asarray(self.values))

    def at(self, t: float) -> float:
        return float(self.evaluate(np.array([t]))[0])

    @property
    def lowest(self) -> float:
        return self.value if self.kind == RateKind.CONSTANT else min(self.values)

    @property
    def highest(self) -> float:
        return self.value if self.kind == RateKind.CONSTANT else max(self.values)


class ModelFamily(str, Enum):
    """Banking system dynamics."""
    INDEPENDENT = "independent"
    FOUQUE_SUN = "fouque_sun"
    TWO_MECHANISM = "two_mechanism"


class Normalization(str, Enum):
    """Bank count used in the 1/N factors after removals."""
    ACTIVE = "active"
    INITIAL = "initial"


class ModelSpec(BaseModel):
    """Parameters of one banking system model."""
    model_config = ConfigDict(frozen=True)

    family: ModelFamily
    n_banks: int = Field(..., ge=1)
    alpha: RateFunction = Field(default_factory=lambda: RateFunction.constant(0.0))
    gamma: RateFunction = Field(default_factory=lambda: RateFunction.constant(0.0))
    vol: VolSchedule
    targets: Optional[PerturbedTargets] = None
    default_level: float
    initial_value: Optional[float] = None
    normalization: Normalization = Normalization.ACTIVE

    @model_validator(mode='after')
    def _check_model(self) -> 'ModelSpec':
        if self.alpha.lowest < 0:
            raise ValueError("alpha must be non-negative at every time")
        if self.gamma.highest > 0:
            raise ValueError("gamma must be non-positive at every time")
        if self.family != ModelFamily.INDEPENDENT and self.n_banks < 2:
            raise ValueError(f"{self.family.value} model needs at least 2 banks, got n_banks={self.n_banks}")
        if self.family == ModelFamily.TWO_MECHANISM and self.targets is None:
            raise ValueError("two_mechanism model needs perturbed targets")
        return self

    @property
    def interacting(self) -> bool:
        return self.family != ModelFamily.INDEPENDENT
