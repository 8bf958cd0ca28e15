# app/services/export_service.py
# CSV and JSON result files with fixed headers

import json
import logging
import os
import platform
from importlib import metadata
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from app.exceptions import OutputError
from app.schemas.governance import ExperimentResult
from app.schemas.risk import LossDistribution, RiskProfile
from app.services.bank_models import EnsembleOutcome
from app.services.control import ControlLaw, RiccatiSolution
from app.services.mean_field import MeanFieldPath
from app.utils import stable_hash

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'

PATHS_HEADER = ['path', 'n_defaults', 'mean_barrier_hit', 'terminal_mean', 'terminal_dispersion']
TRAJECTORIES_HEADER = ['path', 't', 'bank', 'reserves']
LOSS_HEADER = ['k', 'count', 'probability']
RISK_HEADER = ['definition', 'probability', 'std_error', 'n_paths', 'threshold']
RICCATI_HEADER = ['t', 'a', 'b', 'c', 'c_exact']
CONTROL_LAW_HEADER = ['t', 'alpha', 'gamma', 'xbar', 'b', 'c', 'clamped']
MEANFIELD_HEADER = ['t', 'xi', 'xbar', 'meanfield_x', 'meanfield_mean', 'system_mean']
CANDIDATES_HEADER = ['j', 'tau1', 'n', 'probability', 'std_error', 'chosen', 'fallback']
SERIES_HEADER = ['mode', 'j', 'tau1', 'strategy', 'chosen_n', 'probability', 'std_error',
                 'fallback', 'collapsed', 'anchor', 'next_anchor', 'n_active', 'mean_reserves']

_VERSIONED_PACKAGES = ('numpy', 'scipy', 'pandas', 'pydantic', 'click')


def package_versions() -> Dict[str, str]:
    versions = {'python': platform.python_version()}
    for name in _VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = 'not installed'
    return versions


class ExportService:
    """Writes one run's result files into an output directory."""

    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        self.written: List[str] = []

    def _path(self, name: str) -> str:
        try:
            os.makedirs(self.output_dir, exist_ok=True)
        except OSError as e:
            raise OutputError(f"cannot create output directory {self.output_dir}: {e}") from e
        return os.path.join(self.output_dir, name)

    def write_frame(self, name: str, frame: pd.DataFrame, header: Sequence[str]) -> str:
        path = self._path(name)
        try:
            frame.to_csv(path, columns=list(header), index=False, float_format=FLOAT_FORMAT)
        except OSError as e:
            raise OutputError(f"cannot write {path}: {e}") from e
        self.written.append(name)
        logger.info(f"Wrote {len(frame)} rows to {path}")
        return path

    def write_json(self, name: str, payload: Dict[str, Any]) -> str:
        path = self._path(name)
        try:
            with open(path, 'w', encoding='utf-8') as handle:
                json.dump(payload, handle, indent=2, sort_keys=True, default=str)
                handle.write('\n')
        except OSError as e:
            raise OutputError(f"cannot write {path}: {e}") from e
        self.written.append(name)
        return path

    # --- simulate ---

    def write_paths(self, outcome: EnsembleOutcome) -> str:
        frame = pd.DataFrame({
            'path': np.arange(outcome.n_paths),
            'n_defaults': outcome.n_defaults,
            'mean_barrier_hit': outcome.mean_barrier_hit.astype(int),
            'terminal_mean': outcome.terminal_mean,
            'terminal_dispersion': outcome.terminal_dispersion,
        })
        return self.write_frame('paths.csv', frame, PATHS_HEADER)

    def write_trajectories(self, times: np.ndarray, trajectories: np.ndarray) -> str:
        """Long format; points after a bank's default are omitted."""
        n_paths, n_points, n_banks = trajectories.shape
        frame = pd.DataFrame({
            'path': np.repeat(np.arange(n_paths), n_points * n_banks),
            't': np.tile(np.repeat(times, n_banks), n_paths),
            'bank': np.tile(np.arange(n_banks), n_paths * n_points),
            'reserves': trajectories.reshape(-1),
        })
        frame = frame.dropna(subset=['reserves'])
        return self.write_frame('trajectories.csv', frame, TRAJECTORIES_HEADER)

    # --- loss-dist ---

    def write_loss_distribution(self, loss: LossDistribution) -> str:
        frame = pd.DataFrame({
            'k': np.arange(len(loss.counts)),
            'count': loss.counts,
            'probability': loss.probabilities,
        })
        return self.write_frame('loss_distribution.csv', frame, LOSS_HEADER)

    def write_risk(self, profile: RiskProfile) -> str:
        rows = []
        for estimate in (profile.type_m, profile.mean_barrier, profile.bank_default):
            rows.append({
                'definition': estimate.definition.value,
                'probability': estimate.probability,
                'std_error': estimate.std_error,
                'n_paths': estimate.n_paths,
                'threshold': profile.threshold,
            })
        return self.write_frame('risk.csv', pd.DataFrame(rows), RISK_HEADER)

    # --- riccati ---

    def write_riccati(self, sol: RiccatiSolution) -> str:
        points = sol.grid.points
        root = np.sqrt(sol.lam)
        frame = pd.DataFrame({
            't': points,
            'a': sol.a,
            'b': sol.b,
            'c': sol.c,
            'c_exact': root * np.tanh((sol.grid.t1 - points) / root),
        })
        return self.write_frame('riccati.csv', frame, RICCATI_HEADER)

    def write_control_law(self, law: ControlLaw) -> str:
        frame = pd.DataFrame({
            't': law.times,
            'alpha': law.alpha,
            'gamma': law.gamma,
            'xbar': law.xbar,
            'b': law.b,
            'c': law.c,
            'clamped': law.clamped.astype(int),
        })
        return self.write_frame('control_law.csv', frame, CONTROL_LAW_HEADER)

    # --- meanfield ---

    def write_meanfield(self, path: MeanFieldPath, steps: np.ndarray,
                        system_mean: Optional[np.ndarray] = None) -> str:
        """Mean-field curves at the given grid steps, beside the system's average mean."""
        frame = pd.DataFrame({
            't': path.times[steps],
            'xi': path.xi[steps],
            'xbar': path.xbar[steps],
            'meanfield_x': path.x[steps, 0],
            'meanfield_mean': path.x[steps].mean(axis=1),
            'system_mean': system_mean if system_mean is not None else np.nan,
        })
        return self.write_frame('meanfield.csv', frame, MEANFIELD_HEADER)

    # --- govern ---

    def write_governance(self, results: Sequence[ExperimentResult]) -> List[str]:
        candidates = []
        series = []
        for result in results:
            mode = mode_name(result)
            for record in result.records:
                for evaluation in record.candidates:
                    candidates.append({
                        'j': record.j,
                        'tau1': record.tau1,
                        'n': evaluation.n,
                        'probability': evaluation.probability,
                        'std_error': evaluation.std_error,
                        'chosen': int(evaluation.n == record.chosen_n),
                        'fallback': int(record.fallback and evaluation.n == record.chosen_n),
                    })
                series.append({
                    'mode': mode,
                    'j': record.j,
                    'tau1': record.tau1,
                    'strategy': record.strategy,
                    'chosen_n': record.chosen_n,
                    'probability': record.probability,
                    'std_error': record.std_error,
                    'fallback': int(record.fallback),
                    'collapsed': int(record.collapsed),
                    'anchor': record.anchor,
                    'next_anchor': record.next_anchor,
                    'n_active': record.n_active,
                    'mean_reserves': record.mean_reserves,
                })
        paths = [
            self.write_frame('governance_candidates.csv',
                             pd.DataFrame(candidates, columns=CANDIDATES_HEADER), CANDIDATES_HEADER),
            self.write_frame('governance_series.csv',
                             pd.DataFrame(series, columns=SERIES_HEADER), SERIES_HEADER),
        ]
        summary = {
            mode_name(result): {
                'probabilities': result.probabilities,
                'chosen_n': [r.chosen_n for r in result.records],
                'fallbacks': sum(r.fallback for r in result.records),
                'collapsed_quarters': sum(r.collapsed for r in result.records),
                'survivors': len(result.records[-1].next_reserves) if result.records else None,
            }
            for result in results
        }
        paths.append(self.write_json('summary.json', summary))
        return paths

    # --- manifest ---

    def write_manifest(self, subcommand: str, config: Dict[str, Any], seed: int,
                       wall_time: float, quick: bool, workers: int, **extra: Any) -> str:
        manifest: Dict[str, Any] = {
            'subcommand': subcommand,
            'config': config,
            'config_hash': stable_hash(config),
            'seed': seed,
            'quick': quick,
            'workers': workers,
            'versions': package_versions(),
            'wall_time_seconds': round(wall_time, 3),
            'files': sorted(self.written),
        }
        manifest.update(extra)
        return self.write_json('manifest.json', manifest)


def mode_name(result: ExperimentResult) -> str:
    return 'governed' if result.governed else 'ungoverned'
