import json
import math
import os

import numpy as np
import pandas as pd
import pytest

from app.exceptions import OutputError
from app.schemas.control import ControlProblem
from app.schemas.governance import CandidateEvaluation, ExperimentResult, GovernanceRecord
from app.schemas.risk import LossDistribution
from app.schemas.trajectory import PerturbedTargets
from app.services.bank_models import simulate_ensemble
from app.services.control import derive_control_law, solve_riccati
from app.services.export_service import ExportService
from app.services.mean_field import MeanFieldPath
from app.services.risk_estimation import estimate_risk_profile
from app.services.sde_engine import make_grid
from app.services.trajectories import constant_trajectory


def _header(path):
    with open(path, encoding='utf-8') as handle:
        return handle.readline().strip().split(',')


def _record(j, chosen, fallback=False):
    return GovernanceRecord(
        j=j, tau1=0.25 * j, anchor=1.1, strategy='keep' if chosen == 0 else 'raise',
        candidates=[CandidateEvaluation(n=n, probability=p, std_error=0.002)
                    for n, p in ((0, 0.07), (1, 0.04))][:abs(chosen) + 1],
        chosen_n=chosen, probability=0.04, std_error=0.002, fallback=fallback,
        n_active=10, mean_reserves=1.1, next_anchor=1.1, next_reserves=[1.0] * 9,
    )


@pytest.fixture
def export(tmp_path):
    return ExportService(str(tmp_path / 'out'))


class TestSimulationFiles:
    """paths.csv and trajectories.csv."""

    def test_paths_header_and_rows(self, export, independent_spec, coarse_grid):
        outcome = simulate_ensemble(independent_spec, coarse_grid, 20, 5)
        path = export.write_paths(outcome)
        assert _header(path) == ['path', 'n_defaults', 'mean_barrier_hit', 'terminal_mean', 'terminal_dispersion']
        frame = pd.read_csv(path)
        assert len(frame) == 20
        assert frame['path'].tolist() == list(range(20))
        assert set(frame['mean_barrier_hit']) <= {0, 1}

    def test_trajectories_skip_defaulted_points(self, export):
        times = np.array([0.0, 0.5, 1.0])
        trajectories = np.array([[[1.0, 2.0], [0.5, np.nan], [0.4, np.nan]]])
        path = export.write_trajectories(times, trajectories)
        assert _header(path) == ['path', 't', 'bank', 'reserves']
        frame = pd.read_csv(path)
        assert len(frame) == 4
        assert frame[frame['bank'] == 1]['t'].tolist() == [0.0]


class TestRiskFiles:
    """loss_distribution.csv and risk.csv."""

    def test_loss_probabilities_sum_to_one(self, export):
        path = export.write_loss_distribution(LossDistribution(counts=[6, 3, 1], n_paths=10))
        assert _header(path) == ['k', 'count', 'probability']
        frame = pd.read_csv(path)
        assert frame['k'].tolist() == [0, 1, 2]
        assert math.fsum(frame['probability']) == pytest.approx(1.0)

    def test_risk_rows(self, export, independent_spec, coarse_grid):
        profile = estimate_risk_profile(independent_spec, coarse_grid, 40, 2)
        path = export.write_risk(profile)
        assert _header(path) == ['definition', 'probability', 'std_error', 'n_paths', 'threshold']
        frame = pd.read_csv(path)
        assert frame['definition'].tolist() == ['type_m', 'mean_barrier', 'bank_default']
        assert set(frame['threshold']) == {6}


class TestControlFiles:
    """riccati.csv with the closed form beside it."""

    def test_riccati_columns(self, export):
        targets = PerturbedTargets(base=constant_trajectory(0.0, 0.0, 1.0), epsilon=0.1)
        problem = ControlProblem(lam=0.01, t0=0.0, t1=1.0, sigma=1.0, targets=targets)
        path = export.write_riccati(solve_riccati(problem, 1e-3))
        assert _header(path) == ['t', 'a', 'b', 'c', 'c_exact']
        frame = pd.read_csv(path)
        assert len(frame) == 1001
        np.testing.assert_allclose(frame['c'], frame['c_exact'], atol=1e-6)

    def test_control_law_columns(self, export):
        targets = PerturbedTargets(base=constant_trajectory(1.0, 0.0, 1.0), epsilon=0.1)
        problem = ControlProblem(lam=0.01, t0=0.0, t1=1.0, sigma=1.0, targets=targets)
        law = derive_control_law(solve_riccati(problem, 1e-3), targets, 0.01, make_grid(0.0, 1.0, 0.01))
        path = export.write_control_law(law)
        assert _header(path) == ['t', 'alpha', 'gamma', 'xbar', 'b', 'c', 'clamped']
        frame = pd.read_csv(path)
        assert len(frame) == 101
        assert (frame['gamma'] <= 0.0).all()
        assert set(frame['clamped']) <= {0, 1}


class TestMeanFieldFiles:
    """meanfield.csv."""

    def test_meanfield_columns(self, export):
        times = np.linspace(0.0, 1.0, 5)
        path = MeanFieldPath(times=times, x=np.column_stack([times, 3.0 * times]),
                             xbar=np.ones(5), xi=np.ones(5))
        written = export.write_meanfield(path, np.array([0, 2, 4]))
        assert _header(written) == ['t', 'xi', 'xbar', 'meanfield_x', 'meanfield_mean', 'system_mean']
        frame = pd.read_csv(written)
        assert frame['t'].tolist() == [0.0, 0.5, 1.0]
        assert frame['meanfield_mean'].tolist() == [0.0, 1.0, 2.0]
        assert frame['system_mean'].isna().all()


class TestGovernanceFiles:
    """Candidate table, series and summary."""

    def test_three_files(self, export):
        result = ExperimentResult(governed=True, records=[_record(0, 0), _record(1, 1, fallback=True)])
        paths = export.write_governance([result])
        assert [os.path.basename(p) for p in paths] == [
            'governance_candidates.csv', 'governance_series.csv', 'summary.json']
        assert _header(paths[0]) == ['j', 'tau1', 'n', 'probability', 'std_error', 'chosen', 'fallback']
        assert _header(paths[1]) == [
            'mode', 'j', 'tau1', 'strategy', 'chosen_n', 'probability', 'std_error', 'fallback',
            'collapsed', 'anchor', 'next_anchor', 'n_active', 'mean_reserves']

        candidates = pd.read_csv(paths[0])
        assert len(candidates) == 3
        assert candidates['chosen'].sum() == 2
        assert candidates['fallback'].sum() == 1

        with open(paths[2], encoding='utf-8') as handle:
            summary = json.load(handle)
        assert summary['governed']['chosen_n'] == [0, 1]
        assert summary['governed']['fallbacks'] == 1
        assert summary['governed']['survivors'] == 9

    def test_baseline_series(self, export):
        record = GovernanceRecord(j=0, tau1=0.0, anchor=1.0, strategy='baseline', probability=0.2,
                                  std_error=0.01, n_active=10, mean_reserves=1.1)
        paths = export.write_governance([ExperimentResult(governed=False, records=[record])])
        series = pd.read_csv(paths[1])
        assert series['mode'].tolist() == ['ungoverned']
        assert pd.isna(series['chosen_n'][0])
        assert len(pd.read_csv(paths[0])) == 0

    def test_collapsed_quarters(self, export):
        alive = GovernanceRecord(j=0, tau1=0.0, anchor=1.0, strategy='baseline', probability=0.9,
                                 std_error=0.01, n_active=3, mean_reserves=0.5, next_reserves=[])
        dead = GovernanceRecord(j=1, tau1=0.25, anchor=1.0, strategy='collapsed', probability=1.0,
                                std_error=0.0, n_active=0, collapsed=True)
        paths = export.write_governance([ExperimentResult(governed=False, records=[alive, dead])])
        series = pd.read_csv(paths[1])
        assert series['collapsed'].tolist() == [0, 1]
        assert series['n_active'].tolist() == [3, 0]
        assert pd.isna(series['mean_reserves'][1])
        with open(paths[2], encoding='utf-8') as handle:
            summary = json.load(handle)
        assert summary['ungoverned']['collapsed_quarters'] == 1
        assert summary['ungoverned']['survivors'] == 0
        assert summary['ungoverned']['probabilities'] == [0.9, 1.0]


class TestManifest:
    """manifest.json and output errors."""

    def test_manifest_keys(self, export):
        export.write_loss_distribution(LossDistribution(counts=[1], n_paths=1))
        path = export.write_manifest('loss-dist', {'seed': 1, 'n_paths': 1}, 1, 0.5, True, 2,
                                     governed=True)
        with open(path, encoding='utf-8') as handle:
            manifest = json.load(handle)
        assert manifest['files'] == ['loss_distribution.csv']
        assert manifest['quick'] is True
        assert manifest['governed'] is True
        assert manifest['workers'] == 2
        assert 'numpy' in manifest['versions']
        assert len(manifest['config_hash']) > 0

    def test_config_hash_is_stable(self, tmp_path):
        first = ExportService(str(tmp_path / 'a'))
        second = ExportService(str(tmp_path / 'b'))
        hashes = []
        for service, config in ((first, {'a': 1, 'b': 2}), (second, {'b': 2, 'a': 1})):
            with open(service.write_manifest('riccati', config, 0, 0.1, False, 1), encoding='utf-8') as handle:
                hashes.append(json.load(handle)['config_hash'])
        assert hashes[0] == hashes[1]

    def test_output_dir_is_a_file(self, tmp_path):
        blocker = tmp_path / 'blocker'
        blocker.write_text('x')
        with pytest.raises(OutputError) as excinfo:
            ExportService(str(blocker)).write_loss_distribution(LossDistribution(counts=[1], n_paths=1))
        assert excinfo.value.exit_code == 3
