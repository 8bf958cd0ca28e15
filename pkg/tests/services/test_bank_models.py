import numpy as np
import pytest
from pydantic import ValidationError

from app.exceptions import StateError
from app.schemas.model import ModelFamily, ModelSpec, Normalization, RateFunction
from app.services.bank_models import (
    SystemState, drift, empirical_mean, initial_state, record_steps, simulate_ensemble,
    simulate_path
)
from app.services.sde_engine import NoiseBlock, make_grid, sample_noise
from app.services.trajectories import sigma_schedule_constant


def _state(reserves, active_ids=None, defaults=(), time=0.0):
    ids = tuple(range(len(reserves))) if active_ids is None else tuple(active_ids)
    return SystemState(time=time, reserves=np.asarray(reserves, dtype=float),
                       active_ids=ids, defaults=tuple(defaults))


def _zero_noise(grid, n_banks):
    return NoiseBlock(increments=np.zeros((grid.n_steps, n_banks)), seed=0, path_index=0)


class TestSystemState:
    """State validation."""

    def test_length_mismatch(self):
        with pytest.raises(StateError):
            SystemState(time=0.0, reserves=np.zeros(3), active_ids=(0, 1))

    def test_defaulted_bank_cannot_be_active(self):
        with pytest.raises(StateError):
            _state([0.0, 1.0], defaults=[(1, 0.0)])

    def test_default_after_state_time(self):
        with pytest.raises(StateError):
            _state([0.0], active_ids=[0], defaults=[(1, 0.6)], time=0.5)

    def test_counts(self):
        state = _state([1.0, 2.0], active_ids=[0, 2], defaults=[(1, 0.1)], time=0.5)
        assert state.n_active == 2
        assert state.n_banks == 3


class TestModelSpec:
    """Sign and size constraints on model parameters."""

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValidationError):
            ModelSpec(family=ModelFamily.FOUQUE_SUN, n_banks=4,
                      alpha=RateFunction.sampled(np.array([0.0, 1.0]), np.array([1.0, -0.5])),
                      vol=sigma_schedule_constant(1.0), default_level=-0.7)

    def test_positive_gamma_rejected(self, make_two_mechanism):
        spec = make_two_mechanism()
        with pytest.raises(ValidationError):
            ModelSpec(**{**spec.model_dump(), 'gamma': RateFunction.constant(0.5)})

    def test_interacting_needs_two_banks(self):
        with pytest.raises(ValidationError):
            ModelSpec(family=ModelFamily.FOUQUE_SUN, n_banks=1,
                      vol=sigma_schedule_constant(1.0), default_level=-0.7)

    def test_two_mechanism_needs_targets(self):
        with pytest.raises(ValidationError):
            ModelSpec(family=ModelFamily.TWO_MECHANISM, n_banks=4,
                      vol=sigma_schedule_constant(1.0), default_level=0.3)

    def test_single_independent_bank_allowed(self):
        spec = ModelSpec(family=ModelFamily.INDEPENDENT, n_banks=1,
                         vol=sigma_schedule_constant(1.0), default_level=-0.7)
        assert not spec.interacting


class TestDrift:
    """Drift of the three model families."""

    def test_fouque_sun_pair(self, make_fouque_sun):
        np.testing.assert_allclose(drift(make_fouque_sun(2.0, n_banks=2), _state([1.0, 0.0]), 0.0),
                                   [-1.0, 1.0])

    def test_mechanisms_off(self, make_two_mechanism):
        spec = make_two_mechanism(alpha=0.0, gamma=0.0)
        np.testing.assert_array_equal(drift(spec, _state(np.linspace(0.5, 2.0, 10)), 0.3),
                                      np.zeros(10))

    def test_single_active_bank(self, make_two_mechanism):
        """The alpha sum vanishes; gamma pulls toward xi_minus."""
        spec = make_two_mechanism(alpha=50.0, gamma=-1.0, xi=1.0, epsilon=0.1, n_banks=2)
        state = _state([1.5], active_ids=[0], defaults=[(1, 0.2)], time=0.5)
        np.testing.assert_allclose(drift(spec, state, 0.5), [-0.6])

    def test_independent_is_zero(self, independent_spec):
        np.testing.assert_array_equal(drift(independent_spec, _state(np.arange(10.0)), 0.0),
                                      np.zeros(10))

    def test_defaulted_bank_excluded(self, make_fouque_sun):
        spec = make_fouque_sun(2.0, n_banks=3)
        state = _state([1.0, 0.0], active_ids=[0, 2], defaults=[(1, 0.1)], time=0.2)
        np.testing.assert_allclose(drift(spec, state, 0.2), [-1.0, 1.0])

    def test_initial_normalization(self, make_fouque_sun):
        spec = make_fouque_sun(2.0, n_banks=4).model_copy(update={'normalization': Normalization.INITIAL})
        state = _state([1.0, 0.0], active_ids=[0, 1], defaults=[(2, 0.1), (3, 0.1)], time=0.2)
        np.testing.assert_allclose(drift(spec, state, 0.2), [-0.5, 0.5])

    def test_secant_slope_override(self, make_two_mechanism):
        spec = make_two_mechanism(alpha=0.0, gamma=0.0)
        np.testing.assert_allclose(drift(spec, _state(np.ones(10)), 0.0, xi_plus_slope=0.25),
                                   np.full(10, 0.25))

    def test_empty_system(self, make_fouque_sun):
        state = _state([], active_ids=[], defaults=[(0, 0.1), (1, 0.1)], time=0.2)
        with pytest.raises(StateError):
            drift(make_fouque_sun(1.0, n_banks=2), state, 0.2)


class TestEmpiricalMean:
    """Mean of the active reserves."""

    @pytest.mark.parametrize('reserves, expected', [
        ([1.0, 0.0], 0.5),
        ([0.7], 0.7),
        ([1.0, 2.0, 3.0, 4.0], 2.5),
    ])
    def test_mean(self, reserves, expected):
        assert empirical_mean(_state(reserves)) == pytest.approx(expected)

    def test_empty(self):
        with pytest.raises(StateError):
            empirical_mean(_state([], active_ids=[], defaults=[(0, 0.0)]))


class TestInitialState:
    """Starting values of each family."""

    def test_independent_starts_at_zero(self, independent_spec):
        state = initial_state(independent_spec, 0.0)
        np.testing.assert_array_equal(state.reserves, np.zeros(10))
        assert state.active_ids == tuple(range(10))

    def test_two_mechanism_starts_at_xi_plus(self, make_two_mechanism):
        state = initial_state(make_two_mechanism(xi=1.0, epsilon=0.1), 0.0)
        np.testing.assert_allclose(state.reserves, np.full(10, 1.1))

    def test_explicit_initial_value(self, independent_spec):
        spec = independent_spec.model_copy(update={'initial_value': 0.4})
        np.testing.assert_array_equal(initial_state(spec, 0.0).reserves, np.full(10, 0.4))


class TestSimulatePath:
    """Single-path simulation with default removal."""

    def test_no_noise_no_drift(self, independent_spec, coarse_grid):
        spec = independent_spec.model_copy(update={'vol': sigma_schedule_constant(0.0)})
        result = simulate_path(spec, coarse_grid, sample_noise(coarse_grid, 10, 1, 0))
        assert result.n_defaults == 0
        np.testing.assert_array_equal(result.terminal_state.reserves, np.zeros(10))
        assert result.terminal_state.time == 1.0

    def test_fixed_point_at_xi_plus(self, make_two_mechanism, unit_grid):
        spec = make_two_mechanism(gamma=0.0, sigma=0.0)
        result = simulate_path(spec, unit_grid, sample_noise(unit_grid, 10, 1, 0))
        np.testing.assert_allclose(result.terminal_state.reserves, np.full(10, 1.1), atol=1e-12)

    def test_deterministic_gamma_relaxation(self, make_two_mechanism, unit_grid):
        """Mean relaxes as xi_minus + 2 eps exp(gamma t)."""
        spec = make_two_mechanism(gamma=-1.0, sigma=0.0)
        result = simulate_path(spec, unit_grid, _zero_noise(unit_grid, 10))
        expected = 0.9 + 0.2 * np.exp(-1.0)
        np.testing.assert_allclose(result.terminal_state.reserves, expected, atol=1e-3)

    def test_bank_at_default_level_defaults_at_start(self, independent_spec, coarse_grid):
        spec = independent_spec.model_copy(update={'initial_value': -0.7})
        result = simulate_path(spec, coarse_grid, _zero_noise(coarse_grid, 10))
        assert result.n_defaults == 10
        assert result.default_times == [0.0] * 10
        assert result.terminal_state.n_active == 0

    def test_defaulted_bank_leaves_the_system(self, make_fouque_sun, coarse_grid):
        """A shock kills bank 0 at step 4; the survivors never feel its pull."""
        spec = make_fouque_sun(1.0, n_banks=3)
        increments = np.zeros((coarse_grid.n_steps, 3))
        increments[3, 0] = -1.0
        noise = NoiseBlock(increments=increments, seed=0, path_index=0)
        result = simulate_path(spec, coarse_grid, noise, record_trajectory=True)

        terminal = result.terminal_state
        assert terminal.defaults == ((0, pytest.approx(0.4)),)
        assert terminal.active_ids == (1, 2)
        np.testing.assert_array_equal(terminal.reserves, [0.0, 0.0])

        assert result.trajectory.shape == (11, 3)
        assert result.trajectory[4, 0] == pytest.approx(-1.0)
        assert np.all(np.isnan(result.trajectory[5:, 0]))
        np.testing.assert_allclose(result.trajectory_times, coarse_grid.points)

    def test_existing_defaults_are_kept(self, make_fouque_sun, coarse_grid):
        spec = make_fouque_sun(1.0, n_banks=3)
        start = _state([0.5, 0.5], active_ids=[1, 2], defaults=[(0, 0.0)], time=0.0)
        result = simulate_path(spec, coarse_grid, _zero_noise(coarse_grid, 3), start=start)
        assert result.terminal_state.defaults == ((0, 0.0),)
        np.testing.assert_allclose(result.terminal_state.reserves, [0.5, 0.5])

    def test_noise_mismatch(self, independent_spec, coarse_grid):
        with pytest.raises(ValueError):
            simulate_path(independent_spec, coarse_grid, sample_noise(coarse_grid, 9, 1, 0))
        with pytest.raises(ValueError):
            simulate_path(independent_spec, coarse_grid, sample_noise(make_grid(0.0, 2.0, 0.1), 10, 1, 0))

    def test_permutation_equivariance(self, make_fouque_sun, unit_grid):
        spec = make_fouque_sun(5.0, n_banks=4, default_level=-10.0)
        noise = sample_noise(unit_grid, 4, 3, 0)
        perm = np.array([2, 0, 3, 1])
        permuted = NoiseBlock(increments=noise.increments[:, perm].copy(), seed=3, path_index=0)
        start = _state([0.1, 0.2, 0.3, 0.4])
        start_permuted = _state(start.reserves[perm])

        original = simulate_path(spec, unit_grid, noise, start=start).terminal_state.reserves
        shuffled = simulate_path(spec, unit_grid, permuted, start=start_permuted).terminal_state.reserves
        np.testing.assert_allclose(shuffled, original[perm], atol=1e-12)

    def test_decimated_recording(self, independent_spec):
        grid = make_grid(0.0, 1.0, 1e-4)
        result = simulate_path(independent_spec, grid, sample_noise(grid, 10, 2, 0), record_trajectory=True)
        assert result.trajectory.shape[0] <= 2000
        assert result.trajectory.shape == (result.trajectory_times.size, 10)
        assert result.trajectory_times[0] == 0.0
        assert result.trajectory_times[-1] == pytest.approx(1.0)


class TestRecordSteps:
    """Decimation of recorded grid indices."""

    def test_keeps_every_step_when_short(self):
        np.testing.assert_array_equal(record_steps(10, 2000), np.arange(11))

    def test_bounded_and_includes_ends(self):
        steps = record_steps(10000, 2000)
        assert steps.size <= 2000
        assert steps[0] == 0
        assert steps[-1] == 10000
        assert np.all(np.diff(steps) > 0)


class TestSimulateEnsemble:
    """Batched, optionally parallel Monte Carlo ensembles."""

    def test_batching_does_not_change_results(self, make_fouque_sun):
        spec = make_fouque_sun(10.0)
        grid = make_grid(0.0, 0.5, 1e-3)
        small = simulate_ensemble(spec, grid, 40, 99, batch_size=7)
        large = simulate_ensemble(spec, grid, 40, 99, batch_size=64)
        np.testing.assert_array_equal(small.default_steps, large.default_steps)
        np.testing.assert_array_equal(small.terminal_reserves, large.terminal_reserves)
        np.testing.assert_array_equal(small.mean_barrier_hit, large.mean_barrier_hit)

    def test_workers_do_not_change_results(self, make_fouque_sun):
        spec = make_fouque_sun(10.0)
        grid = make_grid(0.0, 0.5, 1e-3)
        serial = simulate_ensemble(spec, grid, 30, 5, batch_size=8, workers=1)
        parallel = simulate_ensemble(spec, grid, 30, 5, batch_size=8, workers=2)
        np.testing.assert_array_equal(serial.default_steps, parallel.default_steps)
        np.testing.assert_array_equal(serial.terminal_reserves, parallel.terminal_reserves)

    def test_path_zero_matches_simulate_path(self, make_fouque_sun):
        spec = make_fouque_sun(10.0)
        grid = make_grid(0.0, 0.5, 1e-3)
        outcome = simulate_ensemble(spec, grid, 3, 21)
        single = simulate_path(spec, grid, sample_noise(grid, 10, 21, 0))
        alive = np.flatnonzero(~np.isnan(outcome.terminal_reserves[0]))
        assert tuple(alive) == single.terminal_state.active_ids
        np.testing.assert_array_equal(outcome.terminal_reserves[0, alive], single.terminal_state.reserves)
        assert outcome.n_defaults[0] == single.n_defaults

    def test_outcome_shapes(self, independent_spec, unit_grid):
        outcome = simulate_ensemble(independent_spec, unit_grid, 12, 3, record=True)
        assert outcome.n_paths == 12
        assert outcome.n_banks == 10
        assert outcome.trajectories.shape == (12, unit_grid.n_steps + 1, 10)
        assert outcome.trajectory_times.size == unit_grid.n_steps + 1
        times = outcome.default_times
        assert np.all(np.isnan(times) == (outcome.default_steps < 0))
        assert np.all(times[~np.isnan(times)] <= 1.0)

    def test_default_count_bound(self, independent_spec, unit_grid):
        outcome = simulate_ensemble(independent_spec, unit_grid, 50, 8)
        assert np.all(outcome.n_defaults <= 10)
        survivors = (~np.isnan(outcome.terminal_reserves)).sum(axis=1)
        np.testing.assert_array_equal(survivors + outcome.n_defaults, 10)

    def test_rejects_empty_ensemble(self, independent_spec, unit_grid):
        with pytest.raises(ValueError):
            simulate_ensemble(independent_spec, unit_grid, 0, 1)

    def test_swarming_with_alpha(self, make_fouque_sun, unit_grid):
        """Cross-sectional spread at T shrinks as alpha grows."""
        spreads = []
        for alpha in (1.0, 10.0, 100.0):
            outcome = simulate_ensemble(make_fouque_sun(alpha), unit_grid, 200, 2024)
            spreads.append(np.nanmean(outcome.terminal_dispersion))
        assert spreads[0] > spreads[1] > spreads[2]
