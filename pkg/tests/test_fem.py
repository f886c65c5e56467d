#!/usr/bin/env python3
"""
Tests for P1 assembly, boundary recovery and the CG wrapper.
"""

import numpy as np
import pytest

from src.coeff import Domain, Grid, constant_tensor, sample_epsilon
from src.errors import SolverError
from src.fem import (
    as_operator,
    boundary_operator,
    conjugate_gradient,
    gradient_norm,
    inner,
    l2_norm,
    laplacian_operator,
    periodic_laplacian,
)


def test_stiffness_is_symmetric_and_annihilates_constants(laminate_field, unit_square):
    grid = Grid.for_domain(unit_square, 16)
    op = as_operator(sample_epsilon(laminate_field, 0.5, grid))
    difference = op.stiffness - op.stiffness.T
    assert abs(difference).max() < 1e-12
    np.testing.assert_allclose(op.stiffness @ np.ones(grid.size), 0.0, atol=1e-10)


def test_gradient_norm_of_linear_function(unit_square):
    grid = Grid.for_domain(unit_square, 8)
    x = np.asarray(grid.coordinates)
    assert gradient_norm(2.0 * x[0] + x[1], grid) == pytest.approx(np.sqrt(5.0))


def test_norms_and_inner_product(interval_grid):
    x = np.asarray(interval_grid.coordinates)[0]
    u = np.sin(np.pi * x)
    assert l2_norm(u, interval_grid) == pytest.approx(np.sqrt(0.5), rel=1e-12)
    assert inner(u, u, interval_grid) == pytest.approx(0.5, rel=1e-12)


def test_boundary_weights_and_normals(unit_square):
    grid = Grid.for_domain(unit_square, 8)
    bop = boundary_operator(grid)
    assert bop.size == 32
    assert np.sum(bop.weights) == pytest.approx(4.0)
    assert np.sum(bop.subset_weights(("east",))) == pytest.approx(1.0)
    corners = np.all(np.isin(bop.multi_index, (0, 8)), axis=0)
    np.testing.assert_array_equal(bop.normals[corners], 0.0)


def test_boundary_gradients_exact_for_quadratics(unit_square):
    grid = Grid.for_domain(unit_square, 8)
    x = np.asarray(grid.coordinates)
    u = x[0] ** 2 + 3.0 * x[0] * x[1]
    bop = boundary_operator(grid)
    bx, by = bop.coordinates
    expected = np.stack([2.0 * bx + 3.0 * by, 3.0 * bx], axis=1)
    np.testing.assert_allclose(bop.gradients(u), expected, atol=1e-10)


def test_conormal_weights_use_outward_normal(interval_grid):
    op = as_operator(constant_tensor([[0.5]], interval_grid))
    np.testing.assert_allclose(op.conormal_weights[:, 0], [-0.5, 0.5])


def test_cell_grid_has_no_boundary():
    with pytest.raises(ValueError):
        boundary_operator(Grid.cell(8, 1))


def test_as_operator_rejects_other_types():
    with pytest.raises(TypeError):
        as_operator(np.eye(2))


def test_conjugate_gradient_solves_dirichlet_laplacian(interval_grid):
    op = laplacian_operator(interval_grid)
    rhs = np.ones(len(op.interior))
    solution = conjugate_gradient(op.interior_stiffness, rhs, tol=1e-12)
    np.testing.assert_allclose(op.interior_stiffness @ solution, rhs, atol=1e-9)


def test_conjugate_gradient_mean_free_on_torus():
    grid = Grid.cell(32, 1)
    x = np.asarray(grid.coordinates)[0]
    rhs = np.cos(2 * np.pi * x) + 5.0
    solution = conjugate_gradient(periodic_laplacian(grid), rhs, tol=1e-12, mean_free=True)
    assert abs(solution.mean()) < 1e-12


def test_conjugate_gradient_reports_non_convergence():
    grid = Grid.for_domain(Domain((1.0,)), 256)
    op = laplacian_operator(grid)
    rhs = np.random.default_rng(0).standard_normal(len(op.interior))
    with pytest.raises(SolverError) as info:
        conjugate_gradient(op.interior_stiffness, rhs, tol=1e-14, maxiter=2)
    assert info.value.residual > 0
