#!/usr/bin/env python3
import sys
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from src.run_config import ExperimentConfig
from src.errors import ConfigError, NumericalFailure
from src.scenario import Scenario
from src.results_io import utc_timestamp, write_json, write_manifest, write_table

from src.cell import cell_solution, dump_cell_results
from src.spectral import eigen_table, eigenpairs, frequency_threshold
from src.analysis import (
    ModalData,
    determinant_table,
    eigen_trace_table,
    l2_rate,
    observability_ratios,
    observability_time_sweep,
    rate_sweep,
    rellich_refinement,
)
from src.hum import build_control_problem, control_sweep, control_table, duality_check, solve_control

DEFAULT_CELL_RESOLUTION = {1: 256, 2: 64}
TRACE_MODES = 24


@dataclass
class RunOutput:
    """Tables, summary values and extra files produced by one command."""

    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    files: list = field(default_factory=list)


# —————————————————————————————————————————————————————————————————————————
# COMMANDS
# —————————————————————————————————————————————————————————————————————————

def run_cell(config: ExperimentConfig, scenario: Scenario) -> RunOutput:
    """Correctors, A_hat, flux and flux corrector on the unit cell."""
    d = scenario.dimension
    resolution = config.cell_resolution or DEFAULT_CELL_RESOLUTION[d]
    solution = cell_solution(scenario.field, resolution, config.tol, threads=config.threads)
    ahat = solution.homogenized
    logging.info(f"   A_hat = {np.array2string(ahat.matrix, precision=8)}")
    table = pd.DataFrame(
        [{"i": i + 1, "j": j + 1, "value": ahat.matrix[i, j]} for i in range(d) for j in range(d)],
        columns=["i", "j", "value"],
    )
    diagnostics = pd.DataFrame(
        [
            ("cell_resolution", float(resolution)),
            ("ahat_asymmetry", ahat.asymmetry),
            ("ahat_eigen_min", float(ahat.eigenvalues.min())),
            ("ahat_eigen_max", float(ahat.eigenvalues.max())),
            ("corrector_sup", float(np.max(solution.correctors.sup_norms))),
            ("corrector_residual", float(np.max(solution.correctors.residuals))),
            ("flux_mean_max", float(np.max(np.abs(solution.flux.means)))),
            ("flux_divergence_residual", solution.flux.divergence_residual),
            ("flux_corrector_sup", solution.flux_corrector.sup_norm),
            ("flux_reconstruction_residual", solution.flux_corrector.reconstruction_residual),
        ],
        columns=["quantity", "value"],
    )
    files = dump_cell_results(config.get_array_path("fields"), solution)
    return RunOutput({"ahat": table, "diagnostics": diagnostics}, {"ahat": ahat.as_dict()}, files)


def run_correctors(config: ExperimentConfig, scenario: Scenario) -> RunOutput:
    """Dirichlet corrector bound and boundary determinant per eps."""
    table = determinant_table(scenario, config.epsilons)
    summary = {
        "min_abs_det": float(table["min_abs_det"].min()),
        "all_within_bound": bool(table["within_bound"].all()),
    }
    return RunOutput({"determinants": table}, summary)


def run_rate(config: ExperimentConfig, scenario: Scenario) -> RunOutput:
    rates = rate_sweep(scenario, config.epsilons, ModalData.from_dict(config.data), config.T, config.threads)
    return RunOutput(
        {"rows": rates.rows, "fits": rates.fits},
        {"floor": rates.floor, "slope": None if rates.floor else rates.slope("energy_error"), **rates.metadata},
    )


def run_l2rate(config: ExperimentConfig, scenario: Scenario) -> RunOutput:
    rates = l2_rate(scenario, config.epsilons, ModalData.from_dict(config.data), config.T, threads=config.threads)
    return RunOutput(
        {"rows": rates.rows, "fits": rates.fits},
        {"floor": rates.floor, "slope": None if rates.floor else rates.slope("l2_error"), **rates.metadata},
    )


def run_observe(config: ExperimentConfig, scenario: Scenario) -> RunOutput:
    report = observability_ratios(
        scenario, config.epsilons, config.T, config.C0, config.trials, config.seed,
        fixed_threshold=config.fixed_threshold, threads=config.threads,
    )
    summary_table = report.summary()
    summary_table.columns = ["_".join(c for c in col if c) for col in summary_table.columns]
    output = RunOutput(
        {"rows": report.rows, "summary": summary_table},
        {
            "T": report.T, "C0": report.C0,
            "lower_spread": report.lower_spread(), "upper_spread": report.upper_spread(),
        },
    )
    if config.T_sweep:
        epsilon = config.epsilons[0]
        N = config.fixed_threshold or frequency_threshold(epsilon, config.T, config.C0)
        table, fit = observability_time_sweep(scenario, config.T_sweep, epsilon, N, seed=config.seed)
        output.tables["time_sweep"] = table
        output.summary["time_sweep_fit"] = {"slope": fit.slope, "intercept": fit.intercept, "r_squared": fit.r_squared}
    return output


def run_traces(config: ExperimentConfig, scenario: Scenario) -> RunOutput:
    """Eigenvalues and boundary traces of the eps operators."""
    traces, eigen = [], []
    for epsilon in config.epsilons:
        basis = eigenpairs(scenario.operator_for(epsilon), count=TRACE_MODES, tol=config.tol)
        traces.append(eigen_trace_table(basis, epsilon).assign(epsilon=epsilon))
        eigen.append(eigen_table(basis, epsilon).assign(epsilon=epsilon))
        logging.info(f"   eps={epsilon:.6g}: lambda in [{basis.eigenvalues.min():.6g}, {basis.eigenvalues.max():.6g}]")
    trace_table = pd.concat(traces, ignore_index=True)
    ratios = trace_table[trace_table["in_range"]]["ratio"]
    spread = float(ratios.max() / ratios.min()) if len(ratios) else float("nan")
    return RunOutput(
        {"traces": trace_table, "eigen": pd.concat(eigen, ignore_index=True)},
        {"ratio_spread": spread, "modes_per_epsilon": TRACE_MODES},
    )


def run_control(config: ExperimentConfig, scenario: Scenario) -> RunOutput:
    """HUM control at the first eps (homogenized when configured) and, for several eps, the norm sweep."""
    theta0 = config.targets.get("theta0")
    theta1 = config.targets.get("theta1")
    epsilon = config.epsilons[0]
    problem = build_control_problem(
        scenario, epsilon, theta0, theta1, config.T, N=config.fixed_threshold, C0=config.C0,
        homogenized=config.homogenized,
    )
    result = solve_control(problem, config.method, config.tol, config.threads)
    defect = duality_check(result, problem, np.random.default_rng(config.seed))
    summary = {**result.summary(), "duality_defect": defect, "epsilon": epsilon, "N": problem.N,
               "regime_ok": problem.regime_ok, "homogenized": config.homogenized}
    output = RunOutput({"control": control_table(result)}, summary)
    if len(config.epsilons) > 1 and not config.homogenized:
        table, constants = control_sweep(
            scenario, config.epsilons, theta0, theta1, config.T, config.C0, config.method, config.tol, config.threads
        )
        output.tables["sweep"] = table
        output.summary["norm_equivalence"] = constants
    return output


def run_rellich(config: ExperimentConfig, scenario: Scenario) -> RunOutput:
    table, orders = rellich_refinement(scenario, config.levels, config.T, config.epsilons[0])
    return RunOutput(
        {"residuals": table, "orders": orders},
        {row["operator"]: row["order"] for _, row in orders.iterrows()},
    )


COMMANDS = {
    "cell": run_cell,
    "correctors": run_correctors,
    "rate": run_rate,
    "l2rate": run_l2rate,
    "observe": run_observe,
    "traces": run_traces,
    "control": run_control,
    "rellich": run_rellich,
}


# —————————————————————————————————————————————————————————————————————————
# MAIN
# —————————————————————————————————————————————————————————————————————————

def _finish(config: ExperimentConfig, started: str, clock: float, artifacts: list, status: str,
            failures: list | None = None, summary: dict | None = None) -> dict:
    manifest_path = config.get_manifest_path()
    write_manifest(manifest_path, config.as_dict(), artifacts, status, started,
                   time.perf_counter() - clock, failures, summary)
    return {
        "status": status, "started": started, "failures": failures or [], "summary": summary or {},
        "config": {k: v for k, v in config.as_dict().items() if not isinstance(v, (dict, list))},
    }


def main(config: ExperimentConfig, progress_callback=None) -> int:
    """
    Run one experiment and write its artifacts.

    Args:
        config: ExperimentConfig describing the run
        progress_callback: Optional callback function to update progress (0-100)

    Returns:
        Exit status: 0 success, 2 configuration error, 3 numerical failure.
    """
    started = utc_timestamp()
    clock = time.perf_counter()
    output_folder = config.get_output_folder()
    output_folder.mkdir(parents=True, exist_ok=True)
    artifacts: list[str] = []

    # --- Step 1: Build the scenario ---
    logging.info(f"1. Building scenario for command '{config.command}'...")
    try:
        scenario = Scenario.from_config(config)
    except (ConfigError, ValueError) as e:
        logging.error(f"Invalid scenario: {e}")
        _finish(config, started, clock, artifacts, "config-error", [str(e)])
        return 2
    logging.info(f"   Coefficient {scenario.field.name}, d={scenario.dimension}, extents {scenario.domain.extents}")
    if progress_callback:
        progress_callback(10)

    # --- Step 2: Run the command ---
    logging.info(f"2. Running {config.command} over eps = {config.epsilons}...")
    try:
        output = COMMANDS[config.command](config, scenario)
    except NumericalFailure as e:
        logging.error(f"Numerical failure: {e}")
        if isinstance(e.partial, pd.DataFrame) and not e.partial.empty:
            artifacts.append(write_table(e.partial, config.get_table_path("partial")).name)
            logging.warning(f"   Partial results kept in {config.get_table_path('partial').name}")
        _finish(config, started, clock, artifacts, "numerical-failure", [str(e)])
        return 3
    except (ConfigError, ValueError) as e:
        logging.error(f"Invalid experiment: {e}")
        _finish(config, started, clock, artifacts, "config-error", [str(e)])
        return 2
    if progress_callback:
        progress_callback(70)

    # --- Step 3: Write tables and summary ---
    logging.info(f"3. Writing artifacts to {output_folder}...")
    for name, table in output.tables.items():
        artifacts.append(write_table(table, config.get_table_path(name)).name)
    artifacts.append(write_json({"command": config.command, **output.summary}, config.get_summary_path()).name)
    artifacts.extend(p.name for p in output.files)
    if progress_callback:
        progress_callback(85)

    # --- Step 4: Manifest ---
    logging.info("4. Writing manifest...")
    if config.report:
        artifacts.append(config.get_report_path().name)
    manifest = _finish(config, started, clock, artifacts + ["manifest.json"], "success", summary=output.summary)

    # --- Step 5: Optional report ---
    if config.report:
        logging.info("5. Generating PDF report...")
        from src.report import generate_report_pdf

        generate_report_pdf(manifest, output.tables, config.get_report_path())
    logging.info("Run completed successfully!")
    if progress_callback:
        progress_callback(100)
    return 0


if __name__ == "__main__":
    # For command line usage, use the CLI implementation
    from src.cli import main as cli_main
    sys.exit(cli_main())
