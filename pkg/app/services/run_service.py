# app/services/run_service.py
# Service layer behind the CLI: runs one subcommand and writes its result files

import logging
import time
from typing import Callable, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from app.exceptions import ConfigurationError, RiskGovError
from app.schemas.model import ModelFamily, RateFunction
from app.schemas.run_config import RunConfig, VolKind
from app.services.bank_models import (
    MAX_TRAJECTORY_POINTS, record_steps, simulate_ensemble
)
from app.services.control import derive_control_law, solve_riccati
from app.services.export_service import ExportService
from app.services.governance import run_experiment
from app.services.mean_field import MeanFieldPath, simulate_meanfield_ou, simulate_meanfield_two
from app.services.risk_estimation import estimate_risk_profile
from app.services.sde_engine import derive_seed, make_grid, sample_noise
from app.services.trajectories import validate_above
from app.utils import log_event

logger = logging.getLogger(__name__)

SUBCOMMANDS = ('simulate', 'loss-dist', 'riccati', 'meanfield', 'govern')

# Stream label for mean-field noise.
MEANFIELD_STREAM = 3


def _ensemble_mean(trajectories: np.ndarray) -> np.ndarray:
    """Average over paths of the cross-sectional mean of surviving banks."""
    alive = ~np.isnan(trajectories)
    counts = alive.sum(axis=2)
    totals = np.where(alive, trajectories, 0.0).sum(axis=2)
    per_path = totals / np.maximum(counts, 1)
    paths_alive = (counts > 0).sum(axis=0)
    summed = np.where(counts > 0, per_path, 0.0).sum(axis=0)
    return np.where(paths_alive > 0, summed / np.maximum(paths_alive, 1), np.nan)


class RunService:
    """Runs the simulation subcommands for one configuration class."""

    def __init__(self, config_class, output_dir: Optional[str] = None,
                 threads: Optional[int] = None):
        self.config_class = config_class
        self.output_dir = output_dir or config_class.OUTPUT_DIR
        self.workers = config_class.worker_count(threads)
        self.batch_size = config_class.BATCH_SIZE
        self._handlers: Dict[str, Callable[..., None]] = {
            'simulate': self._simulate,
            'loss-dist': self._loss_dist,
            'riccati': self._riccati,
            'meanfield': self._meanfield,
            'govern': self._govern,
        }

    def _check_targets(self, cfg: RunConfig) -> None:
        if cfg.model == ModelFamily.TWO_MECHANISM:
            validate_above(cfg.trajectory(cfg.t0, cfg.t1), cfg.default_level)

    def _simulate(self, cfg: RunConfig, export: ExportService) -> None:
        self._check_targets(cfg)
        spec = cfg.model_spec()
        grid = make_grid(cfg.t0, cfg.t1, cfg.dt)
        outcome = simulate_ensemble(spec, grid, cfg.n_paths, cfg.seed,
                                    workers=self.workers, batch_size=self.batch_size)
        export.write_paths(outcome)
        if cfg.record_paths > 0:
            recorded = simulate_ensemble(spec, grid, min(cfg.record_paths, cfg.n_paths), cfg.seed,
                                         batch_size=self.batch_size, record=True)
            if recorded.trajectories is not None and recorded.trajectory_times is not None:
                export.write_trajectories(recorded.trajectory_times, recorded.trajectories)

    def _loss_dist(self, cfg: RunConfig, export: ExportService) -> None:
        self._check_targets(cfg)
        spec = cfg.model_spec()
        grid = make_grid(cfg.t0, cfg.t1, cfg.dt)
        profile = estimate_risk_profile(spec, grid, cfg.n_paths, cfg.seed, m=cfg.m,
                                        workers=self.workers, batch_size=self.batch_size)
        export.write_loss_distribution(profile.loss)
        export.write_risk(profile)

    def _riccati(self, cfg: RunConfig, export: ExportService) -> None:
        problem = cfg.control_problem()
        if cfg.vol_schedule != VolKind.CONSTANT:
            logger.info(f"riccati: volatility frozen at its t0 value sigma = {problem.sigma}")
        solution = solve_riccati(problem, cfg.dt_ode)
        export.write_riccati(solution)
        if cfg.epsilon > 0:
            grid = make_grid(cfg.t0, cfg.t1, cfg.dt)
            law = derive_control_law(solution, problem.targets, cfg.lam, grid,
                                     floor=self.config_class.DENOMINATOR_FLOOR)
            export.write_control_law(law)
        else:
            logger.warning("epsilon = 0: control law extraction skipped, control_law.csv not written")

    def _meanfield(self, cfg: RunConfig, export: ExportService) -> None:
        self._check_targets(cfg)
        grid = make_grid(cfg.t0, cfg.t1, cfg.dt)
        noise = sample_noise(grid, cfg.meanfield_paths, derive_seed(cfg.seed, MEANFIELD_STREAM), 0)
        if cfg.model == ModelFamily.TWO_MECHANISM:
            path = simulate_meanfield_two(cfg.targets(cfg.t0, cfg.t1), RateFunction.constant(cfg.alpha),
                                          RateFunction.constant(cfg.gamma), cfg.vol(), grid, noise)
        else:
            alpha = cfg.alpha if cfg.model == ModelFamily.FOUQUE_SUN else 0.0
            start = cfg.initial_value if cfg.initial_value is not None else 0.0
            x = simulate_meanfield_ou(alpha, cfg.vol(), grid, noise, start=start)
            zeros = np.zeros(grid.n_steps + 1)
            path = MeanFieldPath(times=grid.points, x=x, xbar=zeros, xi=zeros)

        steps = record_steps(grid.n_steps, MAX_TRAJECTORY_POINTS)
        system_mean = None
        if cfg.record_paths > 0:
            recorded = simulate_ensemble(cfg.model_spec(), grid, cfg.record_paths, cfg.seed,
                                         batch_size=self.batch_size, record=True)
            if recorded.trajectories is not None and recorded.trajectory_times is not None:
                system_mean = _ensemble_mean(recorded.trajectories)
                export.write_trajectories(recorded.trajectory_times, recorded.trajectories)
        export.write_meanfield(path, steps, system_mean)

    def _govern(self, cfg: RunConfig, export: ExportService, governed: bool = True) -> None:
        """Governed runs also write the baseline series on the same seed and evolution noise."""
        config = cfg.governance_config()
        modes = (True, False) if governed else (False,)
        results = [run_experiment(config, governed=mode, workers=self.workers,
                                  batch_size=self.batch_size)
                   for mode in modes]
        export.write_governance(results)

    def run(self, subcommand: str, cfg: RunConfig, governed: bool = True) -> List[str]:
        """Run one subcommand; returns the files written.

        governed=False runs the govern subcommand on the fixed baseline model.
        """
        if subcommand not in self._handlers:
            raise ValueError(f"unknown subcommand {subcommand}")
        export = ExportService(self.output_dir)
        started = time.perf_counter()
        log_event("run_start", {
            "subcommand": subcommand,
            "seed": cfg.seed,
            "n_paths": cfg.n_paths,
            "quick": cfg.quick,
            "workers": self.workers,
            "output_dir": self.output_dir,
        })

        if subcommand == 'govern':
            self._govern(cfg, export, governed)
        else:
            self._handlers[subcommand](cfg, export)

        wall_time = time.perf_counter() - started
        export.write_manifest(subcommand, cfg.model_dump(mode='json'), cfg.seed, wall_time,
                              cfg.quick, self.workers, governed=governed)
        log_event("run_finish", {
            "subcommand": subcommand,
            "wall_time": wall_time,
            "files": export.written,
        })
        return export.written


def run_subcommand(service: RunService, subcommand: str, cfg: RunConfig,
                   governed: bool = True) -> int:
    """Run and map failures to exit codes: 1 validation, 2 runtime, 3 I/O."""
    try:
        service.run(subcommand, cfg, governed)
    except RiskGovError as e:
        logger.error(f"{subcommand} failed: {e}")
        log_event("run_failed", {"subcommand": subcommand, "error": str(e),
                                 "exit_code": e.exit_code}, level="error")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"{subcommand} failed: invalid configuration: {e}")
        return ConfigurationError.exit_code
    except OSError as e:
        logger.error(f"{subcommand} failed on I/O: {e}")
        return 3
    return 0
