#!/usr/bin/env python3
"""
Periodic cell problem: correctors chi_j, the homogenized tensor, the flux b_ij
and the antisymmetric flux corrector phi_kij.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from src.coeff import Grid, PeriodicCoefficientField, TensorField, sample_cell
from src.errors import HomogenizationError
from src.fem import (
    assemble_flux_load,
    assemble_stiffness,
    conjugate_gradient,
    element_gradients,
    element_measure,
    periodic_laplacian,
)
from src.results_io import dump_array_file

# Right sides below this fraction of their natural scale are treated as exact zeros.
ZERO_LOAD = 1e-13


@dataclass(frozen=True, eq=False)
class CorrectorSet:
    grid: Grid
    chi: np.ndarray
    sup_norms: np.ndarray
    residuals: np.ndarray
    tensor: TensorField
    stiffness: sp.csr_matrix

    @property
    def dimension(self) -> int:
        return self.grid.dimension


@dataclass(frozen=True)
class HomogenizedTensor:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    asymmetry: float
    resolution: tuple[int, ...]

    @property
    def is_diagonal(self) -> bool:
        off = self.matrix - np.diag(np.diag(self.matrix))
        return bool(np.max(np.abs(off)) <= 1e-10 * np.max(np.abs(self.matrix)))

    def as_dict(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "asymmetry": self.asymmetry,
            "cell_resolution": list(self.resolution),
        }


@dataclass(frozen=True, eq=False)
class FluxField:
    grid: Grid
    values: np.ndarray
    divergence_residual: float
    means: np.ndarray


@dataclass(frozen=True, eq=False)
class FluxCorrector:
    grid: Grid
    phi: np.ndarray
    sup_norm: float
    reconstruction_residual: float
    relative_residual: float


@dataclass(frozen=True, eq=False)
class CellSolution:
    correctors: CorrectorSet
    homogenized: HomogenizedTensor
    flux: FluxField
    flux_corrector: FluxCorrector


def _load_scale(tensor: TensorField) -> float:
    grid = tensor.grid
    return float(np.max(np.abs(tensor.values))) * min(grid.spacing) ** (grid.dimension - 1) * np.sqrt(grid.size)


def _column_load(tensor: TensorField, j: int) -> np.ndarray:
    """Weak divergence of the column A e_j."""
    return assemble_flux_load(tensor.grid, [elements[:, j] for elements in tensor.element_values])


def _central_difference(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(u, -1, axis=axis) - np.roll(u, 1, axis=axis)) / (2.0 * h)


def solve_correctors(
    field: PeriodicCoefficientField, grid: Grid, tol: float = 1e-10, threads: int = 1
) -> CorrectorSet:
    """
    Solve div(A grad chi_j) = div(A e_j) on the torus for j = 1..d.

    Args:
        field: periodic coefficient field.
        grid: periodic cell grid.
        tol: relative residual tolerance of the CG solves.
        threads: number of concurrent corrector solves.

    Returns:
        CorrectorSet with zero-mean correctors and their residuals.
    """
    if not grid.periodic:
        raise ValueError("solve_correctors needs a cell grid")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    tensor = sample_cell(field, grid)
    stiffness = assemble_stiffness(grid, tensor.element_values)
    scale = _load_scale(tensor)
    d = grid.dimension

    def solve(j: int) -> tuple[np.ndarray, float]:
        rhs = -_column_load(tensor, j)
        rhs -= rhs.mean()
        norm = np.linalg.norm(rhs)
        if norm <= ZERO_LOAD * scale:
            return np.zeros(grid.size), 0.0
        chi = conjugate_gradient(stiffness, rhs, tol, mean_free=True, label=f"cell problem j={j + 1}")
        return chi, float(np.linalg.norm(stiffness @ chi - rhs) / norm)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve, range(d)))
    else:
        results = [solve(j) for j in range(d)]

    chi = np.stack([r[0].reshape(grid.shape) for r in results])
    residuals = np.array([r[1] for r in results])
    sup_norms = np.max(np.abs(chi.reshape(d, -1)), axis=1)
    logging.info(
        f"Cell correctors on {grid.describe()}: sup |chi| = {np.round(sup_norms, 6).tolist()}, "
        f"max residual {residuals.max():.2e}"
    )
    return CorrectorSet(grid, chi, sup_norms, residuals, tensor, stiffness)


def homogenize(
    field: PeriodicCoefficientField, correctors: CorrectorSet, tol: float = 1e-8
) -> HomogenizedTensor:
    """a_hat_ij = cell average of (A (e_j + grad chi_j))_i, symmetrized."""
    grid = correctors.grid
    d = grid.dimension
    tensor = correctors.tensor
    if tensor.source is not field:
        raise ValueError("Correctors were computed for a different coefficient field")
    measure = element_measure(grid)
    matrix = np.zeros((d, d))
    for j in range(d):
        grads = element_gradients(grid, correctors.chi[j])
        for coefficients, grad in zip(tensor.element_values, grads):
            column = grad.copy()
            column[j] += 1.0
            flux = np.einsum("ik...,k...->i...", coefficients, column)
            matrix[:, j] += measure * flux.reshape(d, -1).sum(axis=1)
    asymmetry = float(np.max(np.abs(matrix - matrix.T)))
    matrix = 0.5 * (matrix + matrix.T)
    eigenvalues = np.linalg.eigvalsh(matrix)
    mu = field.mu
    if eigenvalues[0] < mu - tol or eigenvalues[-1] > 1.0 / mu + tol:
        raise HomogenizationError(
            f"Homogenized eigenvalues {eigenvalues} leave [{mu:.6g}, {1 / mu:.6g}]; refine the cell grid"
        )
    logging.info(f"Homogenized tensor: {np.array2string(matrix, precision=8)} (asymmetry {asymmetry:.1e})")
    return HomogenizedTensor(matrix, eigenvalues, asymmetry, grid.resolution)


def flux_field(field: PeriodicCoefficientField, correctors: CorrectorSet) -> FluxField:
    """Nodal b_ij = a_ij + a_ik d_k chi_j with the cell mean removed per entry."""
    grid = correctors.grid
    d = grid.dimension
    tensor = correctors.tensor
    grad_chi = np.stack([
        np.stack([_central_difference(correctors.chi[j], k, grid.spacing[k]) for k in range(d)])
        for j in range(d)
    ])  # (j, k, ...)
    values = tensor.values + np.einsum("ik...,jk...->ij...", tensor.values, grad_chi)
    means = values.reshape(d, d, -1).mean(axis=2)
    values = values - means.reshape((d, d) + (1,) * d)

    scale = _load_scale(tensor)
    residual = 0.0
    for j in range(d):
        column = _column_load(tensor, j)
        divergence = column + correctors.stiffness @ correctors.chi[j].ravel()
        reference = max(np.linalg.norm(column), scale)
        residual = max(residual, float(np.linalg.norm(divergence - divergence.mean()) / reference))
    logging.info(f"Flux field: discrete divergence residual {residual:.2e}")
    return FluxField(grid, values, residual, means)


def flux_corrector(b: FluxField, tol: float = 1e-10) -> FluxCorrector:
    """
    phi_kij = d_k f_ij - d_i f_kj with Laplace f_ij = b_ij, f_ij mean-free.

    Antisymmetry in (k, i) holds exactly by construction.
    """
    grid = b.grid
    d = grid.dimension
    laplacian = periodic_laplacian(grid)
    weight = float(np.prod(grid.spacing))
    scale = float(np.max(np.abs(b.values))) if b.values.size else 0.0

    f = np.zeros((d, d) + grid.shape)
    for i in range(d):
        for j in range(d):
            entry = b.values[i, j]
            if np.max(np.abs(entry)) <= ZERO_LOAD * max(scale, 1.0):
                continue
            solution = conjugate_gradient(
                laplacian, -weight * entry.ravel(), tol, mean_free=True, label=f"flux potential f{i + 1}{j + 1}"
            )
            f[i, j] = solution.reshape(grid.shape)

    phi = np.zeros((d, d, d) + grid.shape)
    for k in range(d):
        for i in range(d):
            for j in range(d):
                phi[k, i, j] = _central_difference(f[i, j], k, grid.spacing[k]) - _central_difference(f[k, j], i, grid.spacing[i])
    phi -= phi.reshape(d, d, d, -1).mean(axis=3).reshape((d, d, d) + (1,) * d)

    residual = 0.0
    for i in range(d):
        for j in range(d):
            divergence = sum(_central_difference(phi[k, i, j], k, grid.spacing[k]) for k in range(d))
            residual = max(residual, float(np.sqrt(weight * np.sum((divergence - b.values[i, j]) ** 2))))
    b_norm = float(np.sqrt(weight * np.sum(b.values ** 2)))
    relative = residual / b_norm if b_norm > 0 else 0.0
    sup_norm = float(np.max(np.abs(phi))) if phi.size else 0.0
    logging.info(f"Flux corrector: sup |phi| = {sup_norm:.6g}, reconstruction residual {residual:.3e}")
    return FluxCorrector(grid, phi, sup_norm, residual, relative)


def cell_solution(
    field: PeriodicCoefficientField, resolution: int, tol: float = 1e-10, threads: int = 1
) -> CellSolution:
    grid = Grid.cell(resolution, field.dimension)
    correctors = solve_correctors(field, grid, tol, threads=threads)
    homogenized = homogenize(field, correctors)
    flux = flux_field(field, correctors)
    return CellSolution(correctors, homogenized, flux, flux_corrector(flux, tol))


def dump_cell_results(output_path: Path, solution: CellSolution) -> list[Path]:
    """Dump chi, b and phi on the cell grid plus a_hat to array files."""
    d = solution.correctors.dimension
    arrays = {f"chi{j + 1}": solution.correctors.chi[j] for j in range(d)}
    arrays.update({f"b{i + 1}{j + 1}": solution.flux.values[i, j] for i in range(d) for j in range(d)})
    arrays.update({
        f"phi{k + 1}{i + 1}{j + 1}": solution.flux_corrector.phi[k, i, j]
        for k in range(d) for i in range(d) for j in range(d)
    })
    fields_path = dump_array_file(output_path, arrays, solution.correctors.grid.shape)
    ahat_path = output_path.with_name(f"{output_path.stem}_ahat{output_path.suffix}")
    dump_array_file(ahat_path, {"ahat": solution.homogenized.matrix}, (d, d))
    return [fields_path, ahat_path]
