from enum import Enum
from typing import List

from pydantic import BaseModel, ConfigDict, Field, model_validator


class RiskDefinition(str, Enum):
    """Systemic event: at least M defaults, or the mean reserve touching D."""
    TYPE_M = "type_m"
    MEAN_BARRIER = "mean_barrier"
    BANK_DEFAULT = "bank_default"


class LossDistribution(BaseModel):
    """Histogram of the number of defaults per path, k = 0..N."""
    model_config = ConfigDict(frozen=True)

    counts: List[int]
    n_paths: int = Field(..., ge=1)

    @model_validator(mode='after')
    def _check_counts(self) -> 'LossDistribution':
        if sum(self.counts) != self.n_paths:
            raise ValueError(f"counts sum to {sum(self.counts)}, expected {self.n_paths}")
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be non-negative")
        return self

    @property
    def n_banks(self) -> int:
        return len(self.counts) - 1

    @property
    def probabilities(self) -> List[float]:
        return [c / self.n_paths for c in self.counts]


class RiskEstimate(BaseModel):
    """Bernoulli-mean estimate with its binomial standard error."""
    model_config = ConfigDict(frozen=True)

    probability: float = Field(..., ge=0.0, le=1.0)
    std_error: float = Field(..., ge=0.0)
    n_paths: int = Field(..., ge=1)
    definition: RiskDefinition


class RiskProfile(BaseModel):
    """Every estimator computed from one ensemble of paths."""
    model_config = ConfigDict(frozen=True)

    loss: LossDistribution
    type_m: RiskEstimate
    mean_barrier: RiskEstimate
    bank_default: RiskEstimate
    threshold: int
