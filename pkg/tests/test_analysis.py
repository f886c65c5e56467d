#!/usr/bin/env python3
"""
Tests for rate sweeps, observability ratios, boundary-trace tables and the Rellich check.
"""

import numpy as np
import pytest

from src.analysis import (
    ModalData,
    determinant_table,
    eigen_trace_table,
    fit_loglog,
    observability_ratios,
    observability_time_sweep,
    observe_trial,
    rate_sweep,
    rellich_refinement,
    rellich_residual,
)
from src.coeff import Domain, Grid, constant_tensor, sample_epsilon
from src.fem import laplacian_operator
from src.scenario import Scenario
from src.spectral import eigenpairs, homogenized_sine_basis, random_filtered_data
from src.wave import modal_trajectory, stable_time_step


def test_fit_loglog_recovers_power_law():
    epsilons = [1 / 8, 1 / 16, 1 / 32]
    fit = fit_loglog(epsilons, [3.0 * e for e in epsilons])
    assert fit.slope == pytest.approx(1.0)
    assert fit.intercept == pytest.approx(np.log(3.0))
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.passes()


def test_fit_loglog_with_zero_value_is_undefined():
    fit = fit_loglog([0.1, 0.05], [1.0, 0.0])
    assert np.isnan(fit.slope)
    assert not fit.passes()


def test_modal_data_from_dict():
    data = ModalData.from_dict({"modes": [[1], [2]], "a": [1.0, 0.5]})
    assert data.modes == ((1,), (2,))
    assert data.b == (0.0, 0.0)
    with pytest.raises(ValueError):
        ModalData(((1,),), (1.0, 2.0), (0.0,))


def test_rate_sweep_rejects_increasing_epsilons(constant_1d):
    with pytest.raises(ValueError, match="strictly decreasing"):
        rate_sweep(constant_1d, [1 / 16, 1 / 8], ModalData.from_dict({"modes": [[1]]}), 0.5)


def test_constant_coefficient_rate_is_at_the_floor(constant_1d):
    rates = rate_sweep(constant_1d, [1 / 4, 1 / 8], ModalData.from_dict({"modes": [[1]]}), 0.5)
    assert rates.floor
    errors = rates.values("energy_error")
    assert list(errors.index) == [0.25, 0.125]
    assert np.isnan(rates.slope("energy_error"))
    assert set(rates.rows["metric"]) >= {"energy_error", "estimate_ratio", "data_mismatch"}


def test_oscillating_rate_is_first_order(cosine_scenario):
    data = ModalData.from_dict({"modes": [[1], [2]], "a": [1.0, 0.5]})
    rates = rate_sweep(cosine_scenario, [1 / 8, 1 / 16, 1 / 32, 1 / 64], data, 1.0)
    assert not rates.floor
    fit = rates.fit("energy_error")
    assert fit.slope >= 0.8
    assert fit.r_squared >= 0.9
    errors = rates.values("energy_error").to_numpy()
    assert np.all(np.diff(errors) < 0)


def test_eigen_trace_ratio_for_constant_coefficient(unit_interval):
    grid = Grid.for_domain(unit_interval, 256)
    basis = eigenpairs(laplacian_operator(grid), count=8)
    epsilon = 1 / 16
    table = eigen_trace_table(basis, epsilon)
    # boundary trace of the k-th mode is 4 lambda_k, so ratio (1 + eps lambda) = 4
    np.testing.assert_allclose(table["ratio"] * (1 + epsilon * table["lambda"]), 4.0, rtol=2e-2)
    assert table["in_range"].iloc[0]


def test_observability_ratios_independent_of_eps_for_constant_coefficient(constant_1d):
    report = observability_ratios(
        constant_1d, [1 / 4, 1 / 8], T=2.0, trials=2, seed=5, fixed_threshold=50.0, include_high_mode=False
    )
    oscillating = report.ratios()
    assert len(oscillating) == 4
    assert report.lower_spread() == pytest.approx(1.0, abs=1e-12)
    assert report.upper_spread() == pytest.approx(1.0, abs=1e-12)
    assert set(report.rows["operator"]) == {"oscillating", "homogenized"}
    assert np.all(report.rows["upper_ratio"] > 0)
    summary = report.summary()
    assert len(summary) == 2


def test_upper_spread_takes_largest_ratio_per_epsilon(cosine_scenario):
    report = observability_ratios(
        cosine_scenario, [1 / 8, 1 / 16], T=2.0, trials=3, seed=1, fixed_threshold=50.0, include_high_mode=False
    )
    rows = report.ratios()
    best = [rows[rows["epsilon"] == e]["upper_ratio"].max() for e in (1 / 8, 1 / 16)]
    assert report.upper_spread() == pytest.approx(max(best) / min(best), rel=1e-12)
    assert 1.0 <= report.upper_spread() <= 10.0
    assert 1.0 <= report.lower_spread() <= 10.0


def test_observability_ratio_is_scale_invariant(cosine_scenario):
    epsilon, T = 1 / 8, 2.0
    op = cosine_scenario.operator_for(epsilon)
    N = 50.0
    basis = eigenpairs(op, threshold=N)
    fd = random_filtered_data(basis, N, np.random.default_rng([0, 0]))
    dt = cosine_scenario.time_step(epsilon, T)
    base = observe_trial(op, fd, T, dt)
    tripled = observe_trial(op, fd.scaled(3.0), T, dt)
    assert tripled["initial_energy"] == pytest.approx(9.0 * base["initial_energy"], rel=1e-12)
    assert tripled["upper_ratio"] == pytest.approx(base["upper_ratio"], rel=1e-10)
    assert tripled["lower_ratio"] == pytest.approx(base["lower_ratio"], rel=1e-10)


def test_observability_ratios_with_high_mode(constant_1d):
    report = observability_ratios(constant_1d, [1 / 8], T=1.0, trials=1, fixed_threshold=20.0)
    high = report.rows[report.rows["operator"] == "high-mode"]
    assert len(high) == 1
    assert high["trial"].iloc[0] == -1


def test_observability_time_sweep_grows_with_T(constant_1d):
    table, fit = observability_time_sweep(constant_1d, [1.0, 2.0, 4.0], 1 / 8, 50.0, trials=2)
    assert len(table) == 6
    assert fit.slope > 0
    with pytest.raises(ValueError):
        observability_time_sweep(constant_1d, [], 1 / 8, 50.0)


def test_determinant_table_within_bound(cosine_scenario):
    table = determinant_table(cosine_scenario, [1 / 8, 1 / 16])
    assert list(table["epsilon"]) == [0.125, 0.0625]
    assert table["within_bound"].all()
    assert (table["min_abs_det"] > 0).all()


def test_rellich_identity_converges_under_refinement(constant_1d):
    # T = 0.7 keeps the time integrands non-periodic, so the quadrature error is visible
    table, orders = rellich_refinement(constant_1d, [16, 32, 64], T=0.7, epsilon=1 / 8)
    assert list(table["operator"].unique()) == ["homogenized"]
    residuals = table["residual"].to_numpy()
    assert np.all(np.diff(residuals) < 0)
    assert orders.iloc[0]["order"] >= 1.5


def test_rellich_refinement_validates_levels(constant_1d):
    with pytest.raises(ValueError, match="strictly increasing"):
        rellich_refinement(constant_1d, [32, 16], T=1.0, epsilon=1 / 8)


def test_rellich_refinement_oscillating_rows(cosine_field):
    scenario = Scenario(cosine_field, Domain((1.0,)))
    table, orders = rellich_refinement(scenario, [128, 256], T=0.5, epsilon=1 / 8)
    assert set(table["operator"]) == {"homogenized", "oscillating"}
    assert len(orders) == 2
    finest = table[(table["operator"] == "oscillating") & (table["level"] == 256)]
    assert finest["residual"].iloc[0] < 0.1


def test_rellich_residual_of_closed_form_mode(unit_interval, cosine_field):
    grid = Grid.for_domain(unit_interval, 64)
    tensor = constant_tensor([[1.0]], grid)
    basis = homogenized_sine_basis([[1.0]], unit_interval, grid, count=1)
    fd = ModalData(((1,),), (1.0,), (0.0,)).on(basis)
    traj = modal_trajectory(basis, fd, 0.7, stable_time_step(tensor, 0.7))
    assert rellich_residual(traj, tensor, mode="homogenized") < 1e-2
    with pytest.raises(ValueError, match="constant"):
        rellich_residual(traj, sample_epsilon(cosine_field, 1 / 8, grid), mode="homogenized")
    with pytest.raises(ValueError, match="mode"):
        rellich_residual(traj, tensor, mode="partial")
