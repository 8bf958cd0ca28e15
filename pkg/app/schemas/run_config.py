from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.schemas.control import ControlProblem
from app.schemas.governance import GovernanceConfig
from app.schemas.model import ModelFamily, ModelSpec, Normalization, RateFunction
from app.schemas.trajectory import PerturbedTargets, TargetTrajectory, VolSchedule
from app.services import trajectories


class TrajectoryKind(str, Enum):
    CONSTANT = "constant"
    LINEAR = "linear"
    SINUSOID = "sinusoid"


class VolKind(str, Enum):
    CONSTANT = "constant"
    POSITIVE_SHOCK = "positive_shock"
    TWO_SHOCKS = "two_shocks"
    CUSTOM = "custom"


class RunConfig(BaseModel):
    """Every parameter a subcommand can read from a configuration file.

    Defaults reproduce the first governance experiment.
    """
    model_config = ConfigDict(frozen=True, extra='forbid')

    # model
    model: ModelFamily = ModelFamily.TWO_MECHANISM
    n_banks: int = Field(10, ge=1)
    alpha: float = Field(20.0, ge=0.0)
    gamma: float = Field(-1.0, le=0.0)
    default_level: float = 0.3
    initial_value: Optional[float] = None
    normalization: Normalization = Normalization.ACTIVE
    m: Optional[int] = Field(None, ge=1)

    # target trajectory
    xi_kind: TrajectoryKind = TrajectoryKind.CONSTANT
    xi0: float = 1.0
    xi_slope: float = 0.0
    xi_amplitude: float = 0.5
    xi_frequency: float = 1.0
    xi_phase: float = 0.0
    epsilon: float = Field(0.1, ge=0.0)

    # volatility
    sigma: float = Field(1.0, ge=0.0)
    vol_schedule: VolKind = VolKind.CONSTANT
    vol_breakpoints: Optional[str] = None

    # simulation
    t0: float = 0.0
    t1: float = 1.0
    dt: float = Field(1e-4, gt=0.0)
    n_paths: int = Field(10000, ge=1)
    seed: int = Field(20240601, ge=0)
    record_paths: int = Field(5, ge=0)
    meanfield_paths: int = Field(1000, ge=1)

    # control
    lam: float = Field(0.001, gt=0.0)
    dt_ode: float = Field(1e-4, gt=0.0)

    # governance
    horizon: float = Field(3.0, gt=0.0)
    dtau: float = Field(0.25, gt=0.0)
    lookahead: float = Field(1.0, gt=0.0)
    s1: float = Field(0.03, gt=0.0, lt=1.0)
    s2: float = Field(0.05, gt=0.0, lt=1.0)
    menu_slope_denominator: int = Field(8, ge=1)
    common_random_numbers: bool = True
    baseline_alpha: float = Field(20.0, ge=0.0)
    baseline_gamma: float = Field(-1.0, le=0.0)

    quick: bool = False

    @field_validator('vol_breakpoints')
    @classmethod
    def _check_breakpoints(cls, value: Optional[str]) -> Optional[str]:
        if value is not None:
            VolSchedule(breakpoints=tuple(parse_breakpoints(value)))
        return value

    @model_validator(mode='after')
    def _check_run(self) -> 'RunConfig':
        if not self.s1 < self.s2:
            raise ValueError(f"thresholds must satisfy S1 < S2, got S1={self.s1}, S2={self.s2}")
        if not self.t1 > self.t0:
            raise ValueError(f"t1 must exceed t0, got [{self.t0}, {self.t1}]")
        if self.vol_schedule == VolKind.CUSTOM and self.vol_breakpoints is None:
            raise ValueError("vol_schedule = custom needs vol_breakpoints")
        return self

    def trajectory(self, start: float, end: float) -> TargetTrajectory:
        if self.xi_kind == TrajectoryKind.LINEAR:
            return trajectories.linear_trajectory(self.xi_slope, self.xi0, start, end)
        if self.xi_kind == TrajectoryKind.SINUSOID:
            return trajectories.sinusoid_trajectory(self.xi_amplitude, self.xi_frequency, start, end,
                                                    phase=self.xi_phase, offset=self.xi0)
        return trajectories.constant_trajectory(self.xi0, start, end)

    def targets(self, start: float, end: float) -> PerturbedTargets:
        return PerturbedTargets(base=self.trajectory(start, end), epsilon=self.epsilon)

    def vol(self) -> VolSchedule:
        if self.vol_schedule == VolKind.POSITIVE_SHOCK:
            return trajectories.sigma_schedule_positive_shock()
        if self.vol_schedule == VolKind.TWO_SHOCKS:
            return trajectories.sigma_schedule_two_shocks()
        if self.vol_schedule == VolKind.CUSTOM and self.vol_breakpoints is not None:
            return VolSchedule(breakpoints=tuple(parse_breakpoints(self.vol_breakpoints)))
        return trajectories.sigma_schedule_constant(self.sigma, start=min(self.t0, 0.0))

    def model_spec(self) -> ModelSpec:
        targets = None
        if self.model == ModelFamily.TWO_MECHANISM:
            targets = self.targets(self.t0, self.t1)
        return ModelSpec(
            family=self.model,
            n_banks=self.n_banks,
            alpha=RateFunction.constant(self.alpha),
            gamma=RateFunction.constant(self.gamma),
            vol=self.vol(),
            targets=targets,
            default_level=self.default_level,
            initial_value=self.initial_value,
            normalization=self.normalization,
        )

    def control_problem(self) -> ControlProblem:
        """Tracking problem on [t0, t1] with the volatility frozen at t0."""
        return ControlProblem(lam=self.lam, t0=self.t0, t1=self.t1,
                              targets=self.targets(self.t0, self.t1),
                              sigma=trajectories.eval_sigma(self.vol(), self.t0))

    def governance_config(self) -> GovernanceConfig:
        return GovernanceConfig(
            horizon=self.horizon,
            dtau=self.dtau,
            lookahead=self.lookahead,
            s1=self.s1,
            s2=self.s2,
            lam=self.lam,
            epsilon=self.epsilon,
            xi0=self.xi0,
            n_paths=self.n_paths,
            dt_sim=self.dt,
            dt_ode=self.dt_ode,
            seed=self.seed,
            menu_slope_denominator=self.menu_slope_denominator,
            default_level=self.default_level,
            n_banks=self.n_banks,
            vol=self.vol(),
            normalization=self.normalization,
            common_random_numbers=self.common_random_numbers,
            baseline_alpha=self.baseline_alpha,
            baseline_gamma=self.baseline_gamma,
        )


def parse_breakpoints(text: str) -> List[Tuple[float, float]]:
    """'0:1.0, 1:1.5' -> [(0.0, 1.0), (1.0, 1.5)]."""
    pairs = []
    for item in text.split(','):
        item = item.strip()
        if not item:
            continue
        time, sep, sigma = item.partition(':')
        if not sep:
            raise ValueError(f"breakpoint {item!r} must look like time:sigma")
        pairs.append((float(time), float(sigma)))
    if not pairs:
        raise ValueError("no breakpoints given")
    return pairs
