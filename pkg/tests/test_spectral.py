#!/usr/bin/env python3
"""
Tests for discrete eigenpairs, the closed-form homogenized basis and spectral filtering.
"""

import logging

import numpy as np
import pytest

from src.cell import HomogenizedTensor
from src.coeff import Domain, Grid, ScalarField, build_field, constant_tensor
from src.fem import laplacian_operator
from src.scenario import Scenario
from src.spectral import (
    eigen_table,
    eigenpairs,
    filtered_energy,
    frequency_threshold,
    homogenized_sine_basis,
    project,
    random_filtered_data,
    synthesize,
)


@pytest.fixture(scope="module")
def laplacian_basis():
    grid = Grid.for_domain(Domain((1.0,)), 128)
    return eigenpairs(laplacian_operator(grid), count=8)


def test_discrete_laplacian_eigenvalues(laplacian_basis):
    exact = (np.arange(1, 4) * np.pi) ** 2
    np.testing.assert_allclose(laplacian_basis.eigenvalues[:3], exact, rtol=1e-3)
    assert np.all(np.diff(laplacian_basis.eigenvalues) > 0)


def test_eigenbasis_is_mass_orthonormal(laplacian_basis):
    assert laplacian_basis.orthonormality_defect < 1e-9
    assert laplacian_basis.residual < 1e-6
    np.testing.assert_array_equal(laplacian_basis.modes[:, [0, -1]], 0.0)


def test_eigenpairs_count_limit(interval_grid):
    op = laplacian_operator(interval_grid)
    with pytest.raises(ValueError, match="trusted"):
        eigenpairs(op, count=40)
    with pytest.raises(ValueError):
        eigenpairs(op, count=2, threshold=10.0)


def test_threshold_mode_keeps_one_mode_above(interval_grid):
    basis = eigenpairs(laplacian_operator(interval_grid), threshold=50.0)
    # pi^2 and 4 pi^2 lie below 50, 9 pi^2 is the first one above
    assert basis.size == 3
    assert basis.eigenvalues[-1] > 50.0
    assert basis.truncate(50.0).size == 2
    with pytest.raises(ValueError):
        basis.truncate(200.0)


def test_threshold_beyond_trusted_modes_raises(interval_grid):
    with pytest.raises(ValueError, match="refine the grid"):
        eigenpairs(laplacian_operator(interval_grid), threshold=1e7)


def test_closed_form_basis_matches_discrete_modes(unit_square):
    grid = Grid.for_domain(unit_square, 32)
    ahat = np.diag([0.5, 1.0])
    closed = homogenized_sine_basis(ahat, unit_square, grid, count=4)
    expected = sorted(0.5 * (m * np.pi) ** 2 + (n * np.pi) ** 2 for m in range(1, 5) for n in range(1, 5))[:4]
    np.testing.assert_allclose(closed.eigenvalues, expected, rtol=1e-12)
    assert closed.analytic and closed.hessians is not None
    assert closed.orthonormality_defect < 1e-10
    discrete = eigenpairs(constant_tensor(ahat, grid), count=4)
    np.testing.assert_allclose(discrete.eigenvalues, closed.eigenvalues, rtol=1e-2)


def test_closed_form_basis_rejects_full_tensor(unit_square):
    grid = Grid.for_domain(unit_square, 16)
    with pytest.raises(ValueError, match="diagonal"):
        homogenized_sine_basis(np.array([[1.0, 0.3], [0.3, 1.0]]), unit_square, grid, count=2)


def _cell_tensor(off: float, resolution: int) -> HomogenizedTensor:
    matrix = np.array([[0.5, off], [off, 0.5]])
    return HomogenizedTensor(matrix, np.linalg.eigvalsh(matrix), 0.0, (resolution, resolution))


def test_closed_form_basis_drops_cell_grid_off_diagonal(unit_square, caplog):
    grid = Grid.for_domain(unit_square, 16)
    # 2.4e-3 relative: within O(h^2) of a cell grid with 8 nodes per side, far outside it with 256
    with caplog.at_level(logging.WARNING):
        basis = homogenized_sine_basis(_cell_tensor(1.2e-3, 8), unit_square, grid, count=2)
    assert "Dropping off-diagonal" in caplog.text
    assert basis.eigenvalues[0] == pytest.approx(0.5 * 2 * np.pi**2)
    with pytest.raises(ValueError, match="diagonal"):
        homogenized_sine_basis(_cell_tensor(1.2e-3, 256), unit_square, grid, count=2)


def test_closed_form_basis_of_smooth_checker(unit_square):
    scenario = Scenario(build_field("2D-smooth-checker"), unit_square)
    ahat = scenario.homogenized_for(0.25)
    basis = homogenized_sine_basis(ahat, unit_square, scenario.grid_for(0.25), modes=[[1, 1]])
    assert basis.size == 1
    assert basis.eigenvalues[0] == pytest.approx(np.pi**2 * np.trace(ahat.matrix), rel=1e-10)


def test_closed_form_modes_certify_enumerated_spectrum(unit_interval, unit_square):
    line = homogenized_sine_basis([[1.0]], unit_interval, Grid.for_domain(unit_interval, 32), modes=[[1], [2]])
    assert line.complete_below == pytest.approx(4 * np.pi**2)
    zero = np.zeros(line.grid.shape)
    assert project((zero, zero), line, 3 * np.pi**2).size == 1
    assert project((zero, zero), line, 4 * np.pi**2 * (1 + 1e-13)).size == 2

    gap = homogenized_sine_basis([[2.0]], unit_interval, Grid.for_domain(unit_interval, 32), modes=[[2]])
    assert gap.complete_below == 0.0

    # (1, 2) and (2, 1) share an eigenvalue; only the first mode is fully enumerated
    square = homogenized_sine_basis(np.eye(2), unit_square, Grid.for_domain(unit_square, 16), modes=[[1, 1], [1, 2]])
    assert square.complete_below == pytest.approx(2 * np.pi**2)


def test_closed_form_mode_must_be_representable(unit_interval):
    grid = Grid.for_domain(unit_interval, 8)
    with pytest.raises(ValueError, match="not representable"):
        homogenized_sine_basis([[1.0]], unit_interval, grid, modes=[[8]])


def test_boundary_trace_of_sine_modes(unit_interval):
    grid = Grid.for_domain(unit_interval, 64)
    basis = homogenized_sine_basis([[1.0]], unit_interval, grid, count=3)
    # |psi_k'|^2 = 2 k^2 pi^2 at each end
    np.testing.assert_allclose(basis.boundary_grad_sq, 4.0 * basis.eigenvalues, rtol=1e-12)


def test_frequency_threshold():
    assert frequency_threshold(1 / 8, 1.0) == pytest.approx(4.0)
    assert frequency_threshold(1 / 8, 8.0, C0=2.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        frequency_threshold(0.0, 1.0)


def test_project_and_synthesize_recover_filtered_data(laplacian_basis):
    grid = laplacian_basis.grid
    u = 0.7 * laplacian_basis.modes[0] - 0.2 * laplacian_basis.modes[2]
    v = 1.5 * laplacian_basis.modes[1]
    fd = project((u, ScalarField(grid, v)), laplacian_basis, 100.0)
    assert fd.size == 3
    np.testing.assert_allclose(fd.a, [0.7, 0.0, -0.2], atol=1e-12)
    np.testing.assert_allclose(fd.b, [0.0, 1.5, 0.0], atol=1e-12)
    u_back, v_back = synthesize(fd)
    np.testing.assert_allclose(u_back.values, u, atol=1e-12)
    np.testing.assert_allclose(v_back.values, v, atol=1e-12)


def test_project_beyond_basis_raises(laplacian_basis):
    zero = np.zeros(laplacian_basis.grid.shape)
    with pytest.raises(ValueError, match="recompute"):
        project((zero, zero), laplacian_basis, 1e6)


def test_random_filtered_data_is_normalized_and_seeded(laplacian_basis):
    first = random_filtered_data(laplacian_basis, 100.0, np.random.default_rng(3))
    second = random_filtered_data(laplacian_basis, 100.0, np.random.default_rng(3))
    assert filtered_energy(first) == pytest.approx(1.0, rel=1e-10)
    np.testing.assert_array_equal(first.a, second.a)
    with pytest.raises(ValueError):
        random_filtered_data(laplacian_basis, 1.0, np.random.default_rng(0))


def test_eigen_table_columns(laplacian_basis):
    table = eigen_table(laplacian_basis, epsilon=0.1)
    assert list(table.columns) == ["k", "lambda", "boundary_grad_sq", "eps_lambda"]
    np.testing.assert_allclose(table["eps_lambda"], 0.1 * laplacian_basis.eigenvalues)
