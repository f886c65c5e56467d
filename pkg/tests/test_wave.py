#!/usr/bin/env python3
"""
Tests for the leapfrog integrator, energies, boundary traces and closed-form modal solutions.
"""

import logging

import numpy as np
import pytest

from src.coeff import Domain, Grid, constant_tensor, sample_epsilon
from src.errors import InstabilityError
from src.fem import as_operator, laplacian_operator, l2_norm
from src.spectral import FilteredData, eigenpairs, homogenized_sine_basis, synthesize
from src.wave import (
    BoundarySeries,
    WaveState,
    boundary_gradient_integral,
    conormal_trace,
    energy,
    integrate,
    max_time_step,
    modal_coefficients,
    modal_trajectory,
    stable_time_step,
    step_count,
    trajectory_table,
)


def _modal_state(basis, a, b):
    fd = FilteredData(float(basis.eigenvalues.max()), np.asarray(a, float), np.asarray(b, float), basis, np.arange(basis.size))
    u, v = synthesize(fd)
    return fd, WaveState(0.0, u, v)


@pytest.fixture(scope="module")
def oscillating_operator(cosine_field):
    grid = Grid.for_domain(Domain((1.0,)), 128)
    return as_operator(sample_epsilon(cosine_field, 1 / 8, grid))


def test_stable_time_step_divides_T(interval_grid):
    op = laplacian_operator(interval_grid)
    dt = stable_time_step(op, 1.0)
    assert dt <= max_time_step(op) * (1 + 1e-12)
    assert step_count(1.0, dt) * dt == pytest.approx(1.0)


def test_cfl_violation_raises(interval_grid):
    op = laplacian_operator(interval_grid)
    state = WaveState.zero(interval_grid)
    with pytest.raises(ValueError, match="stability"):
        integrate(op, state, 1.0, 2.0 * max_time_step(op))


def test_energy_conserved_to_second_order(oscillating_operator):
    basis = eigenpairs(oscillating_operator, count=2)
    _, state = _modal_state(basis, [1.0, 0.5], [0.0, 2.0])
    drifts = []
    for cfl in (0.5, 0.25):
        dt = stable_time_step(oscillating_operator, 4.0, cfl)
        traj = integrate(oscillating_operator, state, 4.0, dt, sample_stride=1000)
        drifts.append(np.max(np.abs(traj.energies - traj.energies[0])) / traj.energies[0])
    assert drifts[0] <= 1e-3
    assert drifts[0] / drifts[1] >= 3.0
    assert energy(state, oscillating_operator) == pytest.approx(traj.energies[0], rel=1e-2)


def test_integration_is_time_reversible(oscillating_operator):
    basis = eigenpairs(oscillating_operator, count=4)
    _, state = _modal_state(basis, [1.0, -0.5, 0.25, 0.1], [0.3, 0.0, -1.0, 0.5])
    T = 0.5
    dt = stable_time_step(oscillating_operator, T)
    final = integrate(oscillating_operator, state, T, dt).final_state
    grid = oscillating_operator.grid
    back = integrate(oscillating_operator, WaveState.from_arrays(grid, final.u.values, -final.v.values), T, dt).final_state
    scale = np.max(np.abs(state.u.values))
    np.testing.assert_allclose(back.u.values, state.u.values, atol=1e-10 * scale)
    np.testing.assert_allclose(-back.v.values, state.v.values, atol=1e-10 * max(scale, 1.0))


def test_integrator_matches_discrete_modal_solution(oscillating_operator):
    basis = eigenpairs(oscillating_operator, count=2)
    fd, state = _modal_state(basis, [1.0, -0.3], [0.5, 0.0])
    dt = stable_time_step(oscillating_operator, 1.0)
    traj = integrate(oscillating_operator, state, 1.0, dt, sample_stride=16)
    reference = modal_trajectory(basis, fd, 1.0, dt, sample_stride=16, record_traces=False)
    np.testing.assert_array_equal(traj.sample_indices, reference.sample_indices)
    grid = basis.grid
    errors = [l2_norm(u - w, grid) for u, w in zip(traj.displacements, reference.displacements)]
    assert max(errors) <= 1e-3


def test_zero_state_stays_zero(interval_grid):
    op = laplacian_operator(interval_grid)
    traj = integrate(op, WaveState.zero(interval_grid), 0.5, stable_time_step(op, 0.5))
    np.testing.assert_array_equal(traj.energies, 0.0)
    assert boundary_gradient_integral(traj) == 0.0


def test_blow_up_is_reported(interval_grid):
    op = laplacian_operator(interval_grid)
    rng = np.random.default_rng(0)
    u = rng.standard_normal(interval_grid.shape)
    u[[0, -1]] = 0.0
    state = WaveState.from_arrays(interval_grid, u)
    with pytest.raises(InstabilityError):
        integrate(op, state, 1.0, 5.0 * max_time_step(op), cfl=5.0)


def test_inconsistent_boundary_data_is_overwritten(interval_grid, caplog):
    op = laplacian_operator(interval_grid)
    with caplog.at_level(logging.WARNING):
        traj = integrate(op, WaveState.zero(interval_grid), 0.25, stable_time_step(op, 0.25), boundary=1.0)
    assert "overwriting" in caplog.text
    np.testing.assert_allclose(traj.displacements[-1][[0, -1]], 1.0)


def test_boundary_series_shape_checked(interval_grid):
    op = laplacian_operator(interval_grid)
    with pytest.raises(ValueError, match="does not match"):
        integrate(op, WaveState.zero(interval_grid), 0.25, stable_time_step(op, 0.25), boundary=np.zeros((3, 2)))


def test_partial_boundary_needs_known_faces(interval_grid):
    op = laplacian_operator(interval_grid)
    with pytest.raises(ValueError, match="Unknown boundary faces"):
        integrate(op, WaveState.zero(interval_grid), 0.25, stable_time_step(op, 0.25), gamma=("north",))


def test_closed_form_trace_of_first_mode(unit_interval):
    grid = Grid.for_domain(unit_interval, 64)
    basis = homogenized_sine_basis([[1.0]], unit_interval, grid, count=1)
    fd = FilteredData(basis.eigenvalues[0], np.ones(1), np.zeros(1), basis, np.arange(1))
    T = 2.0
    traj = modal_trajectory(basis, fd, T, stable_time_step(constant_tensor([[1.0]], grid), T), gamma=("right",))
    # int_0^2 cos^2(pi t) dt = 1 and |psi'|^2 = 2 pi^2 at each end
    assert boundary_gradient_integral(traj) == pytest.approx(4 * np.pi**2, rel=1e-4)
    assert boundary_gradient_integral(traj, partial=True) == pytest.approx(2 * np.pi**2, rel=1e-4)
    np.testing.assert_allclose(traj.energies, traj.energies[0], rtol=1e-12)


def test_conormal_trace_and_reflection(unit_interval):
    grid = Grid.for_domain(unit_interval, 64)
    op = as_operator(constant_tensor([[0.5]], grid))
    basis = eigenpairs(op, count=1)
    fd, state = _modal_state(basis, [1.0], [0.0])
    traj = modal_trajectory(basis, fd, 1.0, stable_time_step(op, 1.0))
    series = conormal_trace(traj, op)
    assert series.values.shape == (len(traj.times), 2)
    # the first mode has equal and opposite slopes, so equal conormal derivatives at both ends
    np.testing.assert_allclose(series.values[:, 0], series.values[:, 1], rtol=1e-8, atol=1e-10)
    back = series.reflected().reflected()
    np.testing.assert_array_equal(back.values, series.values)
    np.testing.assert_allclose(back.times, series.times, atol=1e-14)
    doubled = series + series
    np.testing.assert_allclose(doubled.values, (series * 2.0).values)


def test_conormal_trace_needs_recorded_traces(interval_grid):
    op = laplacian_operator(interval_grid)
    traj = integrate(op, WaveState.zero(interval_grid), 0.25, stable_time_step(op, 0.25))
    with pytest.raises(ValueError, match="record_traces"):
        conormal_trace(traj, op)


def test_modal_coefficients_closed_form(laplacian_basis_small):
    fd = FilteredData(100.0, np.array([1.0]), np.array([2.0]), laplacian_basis_small, np.array([0]))
    omega = np.sqrt(laplacian_basis_small.eigenvalues[0])
    c, dc = modal_coefficients(fd, np.array([0.0, 0.3]))
    assert c[0, 0] == pytest.approx(1.0)
    assert dc[0, 0] == pytest.approx(2.0)
    assert c[1, 0] == pytest.approx(np.cos(0.3 * omega) + 2.0 / omega * np.sin(0.3 * omega))


@pytest.fixture
def laplacian_basis_small(interval_grid):
    return eigenpairs(laplacian_operator(interval_grid), count=2)


def test_trajectory_table_columns(interval_grid):
    op = laplacian_operator(interval_grid)
    traj = integrate(op, WaveState.zero(interval_grid), 0.25, stable_time_step(op, 0.25), gamma=("left",))
    assert list(trajectory_table(traj).columns) == ["t", "energy", "boundary_grad_sq", "gamma_grad_sq"]


def test_boundary_series_total_time(interval_grid):
    series = BoundarySeries(np.linspace(0.0, 2.0, 5), np.zeros((5, 2)), np.zeros((1, 2)), np.ones(2))
    assert series.T == 2.0
