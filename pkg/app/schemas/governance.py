from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.model import Normalization
from app.schemas.trajectory import TargetTrajectory, VolSchedule

# Slack when checking that the quarter length divides the decision span.
_GRID_TOL = 1e-9


class GovernanceConfig(BaseModel):
    """Parameters of the quarterly governance loop.

    Defaults are the first numerical experiment: N=10, xi0=1, epsilon=0.1,
    lambda=0.001, S1=0.03, S2=0.05, D=0.3, sigma=1.
    """
    model_config = ConfigDict(frozen=True)

    horizon: float = Field(3.0, gt=0.0)
    dtau: float = Field(0.25, gt=0.0)
    lookahead: float = Field(1.0, gt=0.0)
    s1: float = Field(0.03, gt=0.0, lt=1.0)
    s2: float = Field(0.05, gt=0.0, lt=1.0)
    lam: float = Field(0.001, gt=0.0)
    epsilon: float = Field(0.1, gt=0.0)
    xi0: float = 1.0
    n_paths: int = Field(10000, ge=1)
    dt_sim: float = Field(1e-4, gt=0.0)
    dt_ode: float = Field(1e-4, gt=0.0)
    seed: int = Field(20240601, ge=0)
    menu_slope_denominator: int = Field(8, ge=1)
    default_level: float = 0.3
    n_banks: int = Field(10, ge=2)
    vol: VolSchedule = Field(default_factory=lambda: VolSchedule(breakpoints=((0.0, 1.0),)))
    normalization: Normalization = Normalization.ACTIVE
    common_random_numbers: bool = True
    baseline_alpha: float = Field(20.0, ge=0.0)
    baseline_gamma: float = Field(-1.0, le=0.0)

    @model_validator(mode='after')
    def _check_loop(self) -> 'GovernanceConfig':
        if not self.s1 < self.s2:
            raise ValueError(f"thresholds must satisfy S1 < S2, got S1={self.s1}, S2={self.s2}")
        if self.lookahead > self.horizon:
            raise ValueError("lookahead window longer than the horizon")
        if self.dtau > self.lookahead:
            raise ValueError("quarter length dtau must not exceed the lookahead window")
        quarters = (self.horizon - self.lookahead) / self.dtau
        if abs(quarters - round(quarters)) > _GRID_TOL * max(1.0, quarters):
            raise ValueError("dtau must divide the decision span horizon - lookahead")
        return self

    @property
    def n_decisions(self) -> int:
        return int(round((self.horizon - self.lookahead) / self.dtau)) + 1

    @property
    def initial_reserves(self) -> float:
        return self.xi0 + self.epsilon


class CandidateTrajectory(BaseModel):
    """Menu item: slope n/denominator for one quarter, then a plateau."""
    model_config = ConfigDict(frozen=True)

    n: int
    trajectory: TargetTrajectory
    feasible: bool

    @property
    def tau1(self) -> float:
        return self.trajectory.start

    @property
    def tau2(self) -> float:
        return self.trajectory.end

    @property
    def plateau(self) -> float:
        last = self.trajectory.segments[-1]
        return float(last.values(np.array([last.end]))[0])


class CandidateEvaluation(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int
    probability: float
    std_error: float


class GovernanceRecord(BaseModel):
    """One decision time: what was evaluated, what was chosen, what happened next.

    collapsed marks quarters reached after every bank defaulted; they carry
    probability 1 and no mean reserves.
    """
    model_config = ConfigDict(frozen=True)

    j: int
    tau1: float
    anchor: float
    strategy: str
    candidates: List[CandidateEvaluation] = Field(default_factory=list)
    chosen_n: Optional[int] = None
    probability: float
    std_error: float
    fallback: bool = False
    n_active: int
    mean_reserves: Optional[float] = None
    collapsed: bool = False
    next_anchor: Optional[float] = None
    next_reserves: List[float] = Field(default_factory=list)


class ExperimentResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    governed: bool
    records: List[GovernanceRecord]

    @property
    def probabilities(self) -> List[float]:
        return [record.probability for record in self.records]
