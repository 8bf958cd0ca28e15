# app/services/risk_estimation.py
# Monte Carlo default, loss-distribution and systemic-risk estimators

import logging
import math
from typing import Optional

import numpy as np

from app.exceptions import ConfigurationError
from app.schemas.model import ModelSpec
from app.schemas.risk import LossDistribution, RiskDefinition, RiskEstimate, RiskProfile
from app.services.bank_models import (
    DEFAULT_BATCH_SIZE, EnsembleOutcome, SystemState, simulate_ensemble
)
from app.services.sde_engine import TimeGrid
from app.utils import log_event

logger = logging.getLogger(__name__)


def systemic_threshold(n_banks: int) -> int:
    """M = int[N/2] + 1."""
    if n_banks < 1:
        raise ConfigurationError(f"N must be at least 1, got {n_banks}")
    return n_banks // 2 + 1


def bernoulli_estimate(hits: np.ndarray, definition: RiskDefinition) -> RiskEstimate:
    n = int(hits.size)
    p = float(np.count_nonzero(hits)) / n
    return RiskEstimate(
        probability=p,
        std_error=math.sqrt(p * (1.0 - p) / n),
        n_paths=n,
        definition=definition,
    )


def loss_distribution(outcome: EnsembleOutcome) -> LossDistribution:
    counts = np.bincount(outcome.n_defaults, minlength=outcome.n_banks + 1)
    return LossDistribution(counts=[int(c) for c in counts], n_paths=outcome.n_paths)


def tail_mass(loss: LossDistribution, k_min: int) -> float:
    """Probability of at least k_min defaults."""
    k_min = max(k_min, 0)
    return sum(loss.counts[k_min:]) / loss.n_paths


def _check_paths(n_paths: int) -> None:
    if n_paths < 1:
        raise ConfigurationError(f"n_paths must be at least 1, got {n_paths}")


def profile_from_outcome(outcome: EnsembleOutcome, m: Optional[int] = None) -> RiskProfile:
    threshold = systemic_threshold(outcome.n_banks) if m is None else m
    bank_hits = outcome.default_steps >= 0
    pooled = bernoulli_estimate(bank_hits.ravel(), RiskDefinition.BANK_DEFAULT)
    return RiskProfile(
        loss=loss_distribution(outcome),
        type_m=bernoulli_estimate(outcome.n_defaults >= threshold, RiskDefinition.TYPE_M),
        mean_barrier=bernoulli_estimate(outcome.mean_barrier_hit, RiskDefinition.MEAN_BARRIER),
        bank_default=pooled,
        threshold=threshold,
    )


def estimate_risk_profile(spec: ModelSpec, interval: TimeGrid, n_paths: int, seed: int,
                          start: Optional[SystemState] = None, m: Optional[int] = None,
                          workers: int = 1,
                          batch_size: int = DEFAULT_BATCH_SIZE) -> RiskProfile:
    """Loss distribution and all risk estimates from one ensemble."""
    _check_paths(n_paths)
    outcome = simulate_ensemble(spec, interval, n_paths, seed, start=start,
                                workers=workers, batch_size=batch_size)
    profile = profile_from_outcome(outcome, m)
    log_event("risk_profile", {
        "family": spec.family.value,
        "n_paths": n_paths,
        "seed": seed,
        "interval": [interval.t0, interval.t1],
        "type_m": profile.type_m.probability,
        "mean_barrier": profile.mean_barrier.probability,
        "bank_default": profile.bank_default.probability,
    }, level="debug")
    return profile


def estimate_loss_distribution(spec: ModelSpec, interval: TimeGrid, n_paths: int, seed: int,
                               workers: int = 1,
                               batch_size: int = DEFAULT_BATCH_SIZE) -> LossDistribution:
    _check_paths(n_paths)
    outcome = simulate_ensemble(spec, interval, n_paths, seed,
                                workers=workers, batch_size=batch_size)
    return loss_distribution(outcome)


def systemic_risk_probability(spec: ModelSpec, interval: TimeGrid, n_paths: int, seed: int,
                              definition: RiskDefinition = RiskDefinition.TYPE_M,
                              start: Optional[SystemState] = None, m: Optional[int] = None,
                              workers: int = 1,
                              batch_size: int = DEFAULT_BATCH_SIZE) -> RiskEstimate:
    """Probability of a systemic event in the interval.

    TYPE_M counts paths with at least M defaults (M = int[N/2] + 1 unless
    given); MEAN_BARRIER counts paths whose mean over active banks reaches D.
    """
    profile = estimate_risk_profile(spec, interval, n_paths, seed, start=start, m=m,
                                    workers=workers, batch_size=batch_size)
    if definition == RiskDefinition.MEAN_BARRIER:
        return profile.mean_barrier
    if definition == RiskDefinition.BANK_DEFAULT:
        return profile.bank_default
    return profile.type_m


def estimate_default_probability(spec: ModelSpec, interval: TimeGrid, n_paths: int, seed: int,
                                 workers: int = 1,
                                 batch_size: int = DEFAULT_BATCH_SIZE) -> RiskEstimate:
    """Per-bank default probability pooled over the exchangeable banks."""
    return systemic_risk_probability(spec, interval, n_paths, seed,
                                     definition=RiskDefinition.BANK_DEFAULT,
                                     workers=workers, batch_size=batch_size)
