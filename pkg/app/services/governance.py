# app/services/governance.py
# Quarterly governance loop: menus of target trajectories, candidate search and experiments

import logging
from typing import Dict, List, Optional

import numpy as np

from app.exceptions import ConfigurationError, GovernanceError, StateError
from app.schemas.control import ControlProblem
from app.schemas.governance import (
    CandidateEvaluation, CandidateTrajectory, ExperimentResult, GovernanceConfig, GovernanceRecord
)
from app.schemas.model import ModelFamily, ModelSpec, RateFunction
from app.schemas.risk import RiskDefinition, RiskEstimate
from app.schemas.trajectory import PerturbedTargets, Segment, SegmentKind, TargetTrajectory, VolSchedule
from app.services.bank_models import (
    DEFAULT_BATCH_SIZE, SystemState, empirical_mean, simulate_path
)
from app.services.control import ControlLaw, derive_control_law, solve_riccati
from app.services.risk_estimation import systemic_risk_probability, systemic_threshold
from app.services.sde_engine import derive_seed, make_grid, sample_noise
from app.services.trajectories import (
    constant_trajectory, eval_sigma, eval_xi, sigma_schedule_constant
)
from app.utils import log_event

logger = logging.getLogger(__name__)

# Stream labels for derive_seed.
QUARTER_STREAM = 1
EVOLUTION_STREAM = 2

STRATEGY_KEEP = "keep"
STRATEGY_LOWER = "lower"
STRATEGY_RAISE = "raise"
STRATEGY_BASELINE = "baseline"
STRATEGY_COLLAPSED = "collapsed"


def decision_times(config: GovernanceConfig) -> np.ndarray:
    """tau1 of every quarter: 0, dtau, ..., horizon - lookahead."""
    return np.arange(config.n_decisions, dtype=float) * config.dtau


def build_menu(xi_anchor: float, tau1: float, dtau: float, D: float,
               lookahead: float = 1.0, denominator: int = 8) -> List[CandidateTrajectory]:
    """Candidates n = -denominator..denominator anchored at xi_anchor."""
    if xi_anchor <= D:
        raise ConfigurationError(f"anchor {xi_anchor} is not above the default level {D}")
    ramp_end = tau1 + dtau
    tau2 = tau1 + lookahead
    menu = []
    for n in range(-denominator, denominator + 1):
        ramp = Segment(start=tau1, end=ramp_end, kind=SegmentKind.LINEAR,
                       slope=n / denominator, intercept=xi_anchor)
        plateau_value = float(ramp.values(np.array([ramp_end]))[0])
        segments = [ramp]
        if tau2 > ramp_end:
            segments.append(Segment(start=ramp_end, end=tau2, kind=SegmentKind.CONSTANT,
                                    value=plateau_value))
        menu.append(CandidateTrajectory(
            n=n,
            trajectory=TargetTrajectory(segments=tuple(segments)),
            feasible=min(xi_anchor, plateau_value) > D,
        ))
    return menu


def control_law_for(candidate: CandidateTrajectory, config: GovernanceConfig,
                    sigma: float) -> ControlLaw:
    """Optimal cooperation rates for tracking the candidate over its window."""
    targets = PerturbedTargets(base=candidate.trajectory, epsilon=config.epsilon)
    problem = ControlProblem(lam=config.lam, t0=candidate.tau1, t1=candidate.tau2,
                             targets=targets, sigma=sigma)
    solution = solve_riccati(problem, config.dt_ode)
    grid = make_grid(candidate.tau1, candidate.tau2, config.dt_sim)
    return derive_control_law(solution, targets, config.lam, grid)


def candidate_model(candidate: CandidateTrajectory, law: ControlLaw,
                    config: GovernanceConfig, vol: VolSchedule) -> ModelSpec:
    """Two-mechanism model over the candidate's window driven by the law's rates."""
    return ModelSpec(
        family=ModelFamily.TWO_MECHANISM,
        n_banks=config.n_banks,
        alpha=law.alpha_rate(),
        gamma=law.gamma_rate(),
        vol=vol,
        targets=PerturbedTargets(base=candidate.trajectory, epsilon=config.epsilon),
        default_level=config.default_level,
        normalization=config.normalization,
    )


def baseline_model(config: GovernanceConfig, vol: VolSchedule) -> ModelSpec:
    """Ungoverned system: xi = xi0, alpha and gamma held at the baseline constants."""
    targets = PerturbedTargets(
        base=constant_trajectory(config.xi0, 0.0, config.horizon),
        epsilon=config.epsilon,
    )
    return ModelSpec(
        family=ModelFamily.TWO_MECHANISM,
        n_banks=config.n_banks,
        alpha=RateFunction.constant(config.baseline_alpha),
        gamma=RateFunction.constant(config.baseline_gamma),
        vol=vol,
        targets=targets,
        default_level=config.default_level,
        normalization=config.normalization,
    )


def active_threshold(state: SystemState) -> int:
    """Systemic threshold of the banks still active: int[N_act/2] + 1."""
    if state.n_active == 0:
        raise StateError("no active banks left to count defaults among")
    return systemic_threshold(state.n_active)


def _quarter_seed(config: GovernanceConfig, j: int, n: int) -> int:
    if config.common_random_numbers:
        return derive_seed(config.seed, QUARTER_STREAM, j)
    return derive_seed(config.seed, QUARTER_STREAM, j, n)


def _at_time(state: SystemState, t: float) -> SystemState:
    return SystemState(time=max(t, state.time), reserves=state.reserves,
                       active_ids=state.active_ids, defaults=state.defaults)


def evaluate_candidate(candidate: CandidateTrajectory, state: SystemState,
                       config: GovernanceConfig, seed: Optional[int] = None,
                       workers: int = 1, batch_size: int = DEFAULT_BATCH_SIZE) -> RiskEstimate:
    """Next-year type-M risk of following the candidate from the current state.

    Volatility is frozen at its value at the decision time. M is taken over
    the banks still active, int[N_act/2] + 1.
    """
    if not candidate.feasible:
        raise ConfigurationError(f"candidate n={candidate.n} violates the default level")
    sigma = eval_sigma(config.vol, candidate.tau1)
    law = control_law_for(candidate, config, sigma)
    frozen = sigma_schedule_constant(sigma, start=candidate.tau1)
    spec = candidate_model(candidate, law, config, frozen)
    grid = make_grid(candidate.tau1, candidate.tau2, config.dt_sim)
    seed = _quarter_seed(config, 0, candidate.n) if seed is None else seed
    return systemic_risk_probability(
        spec, grid, config.n_paths, seed,
        definition=RiskDefinition.TYPE_M,
        start=_at_time(state, candidate.tau1),
        m=active_threshold(state),
        workers=workers,
        batch_size=batch_size,
    )


def _band_distance(p: float, config: GovernanceConfig) -> float:
    return max(config.s1 - p, p - config.s2, 0.0)


def govern_quarter(state: SystemState, xi_anchor: float, config: GovernanceConfig, j: int,
                   workers: int = 1,
                   batch_size: int = DEFAULT_BATCH_SIZE) -> GovernanceRecord:
    """Choose the quarter's target trajectory.

    P_0 is evaluated first. Below the band the walk goes n = -1, -2, ...;
    above it n = +1, +2, ...; the first candidate inside [S1, S2] wins.
    """
    if state.n_active == 0:
        raise StateError(f"quarter {j}: no active banks left to govern")
    if xi_anchor <= config.default_level:
        raise GovernanceError(
            f"quarter {j}: anchor {xi_anchor} leaves no feasible candidate above D={config.default_level}"
        )

    tau1 = float(decision_times(config)[j])
    denominator = config.menu_slope_denominator
    menu = {c.n: c for c in build_menu(xi_anchor, tau1, config.dtau, config.default_level,
                                       config.lookahead, denominator)}
    estimates: Dict[int, RiskEstimate] = {}

    def evaluate(n: int) -> RiskEstimate:
        estimate = evaluate_candidate(menu[n], state, config, seed=_quarter_seed(config, j, n),
                                      workers=workers, batch_size=batch_size)
        estimates[n] = estimate
        logger.info(f"Quarter {j} (tau1={tau1:.2f}): P_{n} risk {estimate.probability:.4f}")
        return estimate

    def in_band(estimate: RiskEstimate) -> bool:
        return config.s1 <= estimate.probability <= config.s2

    first = evaluate(0)
    chosen: Optional[int] = None
    if in_band(first):
        strategy = STRATEGY_KEEP
        chosen = 0
    else:
        strategy = STRATEGY_LOWER if first.probability < config.s1 else STRATEGY_RAISE
        step = -1 if strategy == STRATEGY_LOWER else 1
        for n in range(step, step * (denominator + 1), step):
            if not menu[n].feasible:
                continue
            if in_band(evaluate(n)):
                chosen = n
                break

    fallback = chosen is None
    if chosen is None:
        if not estimates:
            raise GovernanceError(f"quarter {j}: no feasible candidate could be evaluated")
        chosen = min(estimates, key=lambda n: (_band_distance(estimates[n].probability, config), abs(n)))

    decision = estimates[chosen]
    log_event("governance_decision", {
        "quarter": j,
        "tau1": tau1,
        "strategy": strategy,
        "chosen_n": chosen,
        "probability": decision.probability,
        "evaluations": len(estimates),
        "fallback": fallback,
    }, level="warning" if fallback else "info")

    return GovernanceRecord(
        j=j,
        tau1=tau1,
        anchor=xi_anchor,
        strategy=strategy,
        candidates=[CandidateEvaluation(n=n, probability=e.probability, std_error=e.std_error)
                    for n, e in estimates.items()],
        chosen_n=chosen,
        probability=decision.probability,
        std_error=decision.std_error,
        fallback=fallback,
        n_active=state.n_active,
        mean_reserves=empirical_mean(state),
    )


def _evolve(spec: ModelSpec, state: SystemState, tau1: float, config: GovernanceConfig,
            j: int) -> SystemState:
    """One realization of the true system over [tau1, tau1 + dtau]."""
    grid = make_grid(tau1, tau1 + config.dtau, config.dt_sim)
    noise = sample_noise(grid, config.n_banks, derive_seed(config.seed, EVOLUTION_STREAM, j), 0)
    return simulate_path(spec, grid, noise, start=_at_time(state, tau1)).terminal_state


def run_experiment(config: GovernanceConfig, governed: bool = True, workers: int = 1,
                   batch_size: int = DEFAULT_BATCH_SIZE) -> ExperimentResult:
    """Run every quarter, governed by the search or held at the baseline model."""
    start_value = config.initial_reserves
    state = SystemState(time=0.0, reserves=np.full(config.n_banks, start_value),
                        active_ids=tuple(range(config.n_banks)))
    anchor = start_value
    baseline = baseline_model(config, config.vol)
    records: List[GovernanceRecord] = []

    log_event("experiment_start", {
        "governed": governed,
        "quarters": config.n_decisions,
        "n_paths": config.n_paths,
        "seed": config.seed,
    })

    for j, tau1 in enumerate(decision_times(config)):
        tau1 = float(tau1)
        if state.n_active == 0:
            records.append(_collapsed_record(j, tau1, anchor if governed else config.xi0))
            continue

        if governed:
            record = govern_quarter(state, anchor, config, j, workers, batch_size)
            chosen = next(c for c in build_menu(anchor, tau1, config.dtau, config.default_level,
                                                config.lookahead, config.menu_slope_denominator)
                          if c.n == record.chosen_n)
            law = control_law_for(chosen, config, eval_sigma(config.vol, tau1))
            true_model = candidate_model(chosen, law, config, config.vol)
            next_anchor = eval_xi(chosen.trajectory, tau1 + config.dtau)[0]
        else:
            estimate = _baseline_estimate(baseline, state, tau1, config, j, workers, batch_size)
            record = GovernanceRecord(
                j=j, tau1=tau1, anchor=config.xi0, strategy=STRATEGY_BASELINE,
                probability=estimate.probability, std_error=estimate.std_error,
                n_active=state.n_active, mean_reserves=empirical_mean(state),
            )
            true_model = baseline
            next_anchor = config.xi0

        state = _evolve(true_model, state, tau1, config, j)
        records.append(record.model_copy(update={
            "next_anchor": next_anchor,
            "next_reserves": [float(x) for x in state.reserves],
        }))
        anchor = next_anchor

    collapsed = sum(r.collapsed for r in records)
    if collapsed:
        log_event("system_collapsed", {
            "governed": governed,
            "first_quarter": next(r.j for r in records if r.collapsed),
            "quarters": collapsed,
        }, level="warning")
    log_event("experiment_finish", {
        "governed": governed,
        "probabilities": [r.probability for r in records],
        "fallbacks": sum(r.fallback for r in records),
        "collapsed": collapsed,
        "defaults": len(state.defaults),
    })
    return ExperimentResult(governed=governed, records=records)


def _collapsed_record(j: int, tau1: float, anchor: float) -> GovernanceRecord:
    """Quarter after every bank has defaulted: the systemic event already happened."""
    return GovernanceRecord(
        j=j, tau1=tau1, anchor=anchor, strategy=STRATEGY_COLLAPSED,
        probability=1.0, std_error=0.0, n_active=0, mean_reserves=None,
        collapsed=True, next_anchor=anchor,
    )


def _baseline_estimate(baseline: ModelSpec, state: SystemState, tau1: float,
                       config: GovernanceConfig, j: int, workers: int,
                       batch_size: int) -> RiskEstimate:
    sigma = eval_sigma(config.vol, tau1)
    myopic = baseline.model_copy(update={"vol": sigma_schedule_constant(sigma, start=tau1)})
    grid = make_grid(tau1, tau1 + config.lookahead, config.dt_sim)
    return systemic_risk_probability(
        myopic, grid, config.n_paths, _quarter_seed(config, j, 0),
        start=_at_time(state, tau1), m=active_threshold(state),
        workers=workers, batch_size=batch_size,
    )
