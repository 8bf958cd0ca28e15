from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.trajectory import PerturbedTargets


class ControlProblem(BaseModel):
    """Quadratic tracking of the targets by a controlled mean bank on [t0, t1].

    lam weighs the squared control against the squared tracking error and
    sigma is the volatility frozen at the decision time.
    """
    model_config = ConfigDict(frozen=True)

    lam: float = Field(..., gt=0.0)
    t0: float = 0.0
    t1: float
    targets: PerturbedTargets
    sigma: float = Field(..., ge=0.0)

    @model_validator(mode='after')
    def _check_horizon(self) -> 'ControlProblem':
        if not self.t1 > self.t0:
            raise ValueError(f"horizon end {self.t1} must exceed start {self.t0}")
        return self

    @property
    def horizon(self) -> float:
        return self.t1 - self.t0
