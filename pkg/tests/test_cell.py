#!/usr/bin/env python3
"""
Tests for the periodic cell problems and the homogenized tensor.
"""

import numpy as np
import pytest

from src.cell import cell_solution, dump_cell_results, homogenize, solve_correctors
from src.coeff import Grid, build_field, expression_field
from src.results_io import load_array_file


@pytest.fixture(scope="module")
def cosine_cell():
    return cell_solution(build_field("1D-cosine"), 256)


@pytest.fixture(scope="module")
def laminate_cell():
    return cell_solution(build_field("2D-laminate"), 64)


def test_cosine_homogenizes_to_harmonic_mean(cosine_cell):
    # harmonic mean of 1 / (2 + cos) is 1/2
    assert cosine_cell.homogenized.matrix[0, 0] == pytest.approx(0.5, abs=1e-4)


def test_laminate_homogenized_tensor(laminate_cell):
    np.testing.assert_allclose(laminate_cell.homogenized.matrix, np.diag([0.5, 1.0]), atol=1e-3)
    assert laminate_cell.homogenized.is_diagonal


def test_correctors_are_mean_free_and_converged(laminate_cell):
    correctors = laminate_cell.correctors
    for chi in correctors.chi:
        assert abs(chi.mean()) < 1e-10
    assert np.all(correctors.residuals <= 1e-8)
    # the second column of the laminate is already divergence free
    assert correctors.sup_norms[1] == 0.0


def test_constant_field_has_zero_correctors():
    field = build_field({"preset": "constant", "dimension": 2, "value": 2.0})
    solution = cell_solution(field, 16)
    np.testing.assert_array_equal(solution.correctors.chi, 0.0)
    np.testing.assert_allclose(solution.homogenized.matrix, 2.0 * np.eye(2), atol=1e-12)


def test_homogenized_spectrum_within_ellipticity_bounds():
    field = build_field("2D-smooth-checker")
    solution = cell_solution(field, 32)
    eigenvalues = solution.homogenized.eigenvalues
    assert eigenvalues.min() >= field.mu - 1e-8
    assert eigenvalues.max() <= 1.0 / field.mu + 1e-8
    assert solution.homogenized.asymmetry < 1e-8


def test_flux_field_has_zero_mean(laminate_cell):
    flux = laminate_cell.flux
    means = flux.values.reshape(2, 2, -1).mean(axis=2)
    np.testing.assert_allclose(means, 0.0, atol=1e-12)
    assert flux.divergence_residual < 1e-6


def test_flux_corrector_is_antisymmetric(laminate_cell):
    phi = laminate_cell.flux_corrector.phi
    np.testing.assert_array_equal(phi, -np.swapaxes(phi, 0, 1))


def test_homogenized_tensor_is_translation_invariant():
    entry = "1/(2+cos(2*pi*y1)*cos(2*pi*y2))"
    shifted = "1/(2+cos(2*pi*(y1 + 1/4))*cos(2*pi*(y2 + 3/8)))"
    base = cell_solution(expression_field([[entry, "0"], ["0", entry]], mu=1 / 3), 32).homogenized
    moved = cell_solution(expression_field([[shifted, "0"], ["0", shifted]], mu=1 / 3), 32).homogenized
    np.testing.assert_allclose(moved.matrix, base.matrix, atol=1e-10)


def test_flux_corrector_reconstruction_is_second_order():
    field = build_field("2D-smooth-checker")
    residuals = [cell_solution(field, n).flux_corrector.relative_residual for n in (16, 32, 64)]
    assert np.all(np.diff(residuals) < 0)
    orders = np.log2(np.array(residuals[:-1]) / np.array(residuals[1:]))
    assert np.all(orders >= 1.5)


def test_homogenize_rejects_foreign_correctors(cosine_cell):
    other = build_field("1D-two-phase")
    with pytest.raises(ValueError, match="different coefficient"):
        homogenize(other, cosine_cell.correctors)


def test_solve_correctors_needs_cell_grid(unit_interval):
    with pytest.raises(ValueError):
        solve_correctors(build_field("1D-cosine"), Grid.for_domain(unit_interval, 16))


def test_dump_cell_results(tmp_path, laminate_cell):
    fields_path, ahat_path = dump_cell_results(tmp_path / "cell_fields.txt", laminate_cell)
    assert ahat_path.name == "cell_fields_ahat.txt"
    header, arrays = load_array_file(fields_path)
    assert header["resolution"] == (64, 64)
    assert {"chi1", "chi2", "b11", "phi121"} <= set(arrays)
    _, ahat = load_array_file(ahat_path)
    np.testing.assert_allclose(ahat["ahat"], laminate_cell.homogenized.matrix, rtol=1e-15)
