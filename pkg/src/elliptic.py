#!/usr/bin/env python3
"""
Dirichlet problems -div(a grad u) = F, u = g on the boundary; Dirichlet
correctors; matching of initial data between the oscillating and the
homogenized operator; H^-1 norms through the Dirichlet Laplacian.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from src.cell import HomogenizedTensor
from src.coeff import (
    Domain,
    Grid,
    PeriodicCoefficientField,
    ScalarField,
    TensorField,
    constant_tensor,
    sample_epsilon,
)
from src.fem import DomainOperator, as_operator, boundary_operator, conjugate_gradient, gradient_norm, laplacian_operator

Load = Union[ScalarField, np.ndarray, Callable[[np.ndarray], np.ndarray], None]
BoundaryData = Union[np.ndarray, Callable[[np.ndarray], np.ndarray], float, None]


@dataclass(frozen=True, eq=False)
class DirichletCorrector:
    epsilon: float
    grid: Grid
    phi: np.ndarray
    deviation: np.ndarray
    boundary_gradients: np.ndarray
    determinant: np.ndarray
    bound: Optional[np.ndarray] = None

    @property
    def min_abs_determinant(self) -> float:
        return float(np.min(np.abs(self.determinant)))

    def within_bound(self, slack: float = 1e-6) -> bool:
        if self.bound is None:
            raise ValueError("No corrector bound recorded; pass corrector_sup to dirichlet_correctors")
        return bool(np.all(self.deviation <= self.bound + slack))


# —————————————————————————————————————————————————————————————————————————
# GENERIC SOLVE
# —————————————————————————————————————————————————————————————————————————

def load_vector(F: Load, op: DomainOperator) -> np.ndarray:
    grid = op.grid
    if F is None:
        return np.zeros(grid.size)
    if isinstance(F, ScalarField):
        if F.grid != grid:
            raise ValueError("Forcing lives on a different grid than the operator")
        if F.kind == "functional":
            return F.values.ravel().copy()
        return op.mass * F.values.ravel()
    if callable(F):
        F = F(np.asarray(grid.coordinates))
    F = np.asarray(F, dtype=float)
    if F.shape != grid.shape:
        raise ValueError(f"Forcing shape {F.shape} does not match grid shape {grid.shape}")
    return op.mass * F.ravel()


def boundary_values(g: BoundaryData, op: DomainOperator) -> np.ndarray:
    """Values of g at the boundary nodes (callable of coordinates, boundary vector, full field or scalar)."""
    bop = op.boundary
    if g is None:
        return np.zeros(bop.size)
    if callable(g):
        return np.asarray(g(bop.coordinates), dtype=float).reshape(bop.size)
    g = np.asarray(g, dtype=float)
    if g.ndim == 0:
        return np.full(bop.size, float(g))
    if g.shape == op.grid.shape:
        return g.ravel()[bop.nodes]
    if g.shape == (bop.size,):
        return g
    raise ValueError(f"Boundary data of shape {g.shape} matches neither the grid nor its {bop.size} boundary nodes")


def solve_dirichlet(
    a: Union[TensorField, DomainOperator],
    F: Load = None,
    g: BoundaryData = None,
    tol: float = 1e-10,
    x0: Optional[np.ndarray] = None,
) -> ScalarField:
    """
    Solve -div(a grad u) = F in the domain with u = g at boundary nodes.

    Args:
        a: coefficient tensor on a domain grid (or its assembled operator).
        F: nodal forcing (ScalarField, array, callable of coordinates) or a functional
            (ScalarField with kind="functional").
        g: boundary values.
        tol: relative CG tolerance.
        x0: optional initial guess on the full grid.

    Returns:
        ScalarField with the boundary values set exactly.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    op = as_operator(a)
    grid = op.grid
    load = load_vector(F, op)
    gb = boundary_values(g, op)
    rhs = load[op.interior] - op.coupling @ gb
    guess = None if x0 is None else np.asarray(x0, dtype=float).ravel()[op.interior]
    u = np.zeros(grid.size)
    u[op.boundary.nodes] = gb
    u[op.interior] = conjugate_gradient(op.interior_stiffness, rhs, tol, x0=guess, label="Dirichlet problem")
    tag = "dirichlet-given" if np.any(gb != 0) else "dirichlet-zero"
    return ScalarField(grid, u.reshape(grid.shape), tag)


def apply_operator(a: Union[TensorField, DomainOperator], u) -> ScalarField:
    """Discrete L u as a functional on interior test functions."""
    op = as_operator(a)
    values = u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)
    load = op.apply(values)
    load[op.boundary.nodes] = 0.0
    return ScalarField(op.grid, load.reshape(op.grid.shape), "dirichlet-zero", kind="functional")


# —————————————————————————————————————————————————————————————————————————
# DIRICHLET CORRECTORS
# —————————————————————————————————————————————————————————————————————————

def dirichlet_correctors(
    field: PeriodicCoefficientField,
    epsilon: float,
    domain: Domain,
    grid: Grid,
    tol: float = 1e-10,
    corrector_sup: Optional[np.ndarray] = None,
    operator: Optional[DomainOperator] = None,
) -> DirichletCorrector:
    """Phi_j with L_eps Phi_j = 0 in the domain and Phi_j = x_j on the boundary, j = 1..d."""
    if grid.lengths != domain.extents:
        raise ValueError(f"Grid lengths {grid.lengths} do not match domain extents {domain.extents}")
    op = operator if operator is not None else as_operator(sample_epsilon(field, epsilon, grid))
    coords = np.asarray(grid.coordinates)
    d = grid.dimension
    phi = np.stack([
        solve_dirichlet(op, g=coords[j], tol=tol, x0=coords[j]).values for j in range(d)
    ])
    deviation = np.max(np.abs((phi - coords).reshape(d, -1)), axis=1)

    bop = boundary_operator(grid)
    gradients = np.stack([bop.gradients(phi[j]) for j in range(d)], axis=1)
    determinant = np.linalg.det(gradients) if d > 1 else gradients[:, 0, 0]
    if np.any(determinant <= 0):
        worst = int(np.argmin(determinant))
        logging.warning(
            f"det(grad Phi_eps) <= 0 at boundary node {worst} "
            f"(x={bop.coordinates[:, worst].round(6).tolist()}, det={determinant[worst]:.4g}), eps={epsilon:.4g}"
        )
    bound = None if corrector_sup is None else 2.0 * epsilon * np.asarray(corrector_sup, dtype=float)
    logging.info(
        f"Dirichlet correctors eps={epsilon:.4g}: sup |Phi - x| = {np.round(deviation, 8).tolist()}, "
        f"min |det| on boundary = {np.min(np.abs(determinant)):.4g}"
    )
    return DirichletCorrector(float(epsilon), grid, phi, deviation, gradients, determinant, bound)


# —————————————————————————————————————————————————————————————————————————
# INITIAL DATA MATCHING
# —————————————————————————————————————————————————————————————————————————

def _operators(field, epsilon: float, ahat, grid: Grid) -> tuple[DomainOperator, DomainOperator]:
    if isinstance(field, PeriodicCoefficientField):
        oscillating = as_operator(sample_epsilon(field, epsilon, grid))
    else:
        oscillating = as_operator(field)
    matrix = ahat.matrix if isinstance(ahat, HomogenizedTensor) else np.atleast_2d(ahat)
    homogenized = as_operator(constant_tensor(matrix, grid))
    return oscillating, homogenized


def _check_zero_boundary(u: ScalarField, op: DomainOperator) -> None:
    boundary = u.values.ravel()[op.boundary.nodes]
    scale = max(float(np.max(np.abs(u.values))), 1.0)
    if np.max(np.abs(boundary)) > 1e-12 * scale:
        raise ValueError("Initial data must vanish at the boundary nodes")


def _transfer(u: ScalarField, source: DomainOperator, target: DomainOperator, tol: float, label: str) -> ScalarField:
    _check_zero_boundary(u, source)
    load = apply_operator(source, u)
    result = solve_dirichlet(target, F=load, tol=tol, x0=u.values)
    rhs = load.values.ravel()[source.interior]
    residual = np.linalg.norm(target.apply(result.values)[target.interior] - rhs)
    reference = np.linalg.norm(rhs)
    logging.info(f"{label}: relative residual {residual / reference if reference else 0.0:.2e}")
    return result


def match_initial_data(
    phi_eps0: ScalarField, field, epsilon: float, ahat, tol: float = 1e-10
) -> ScalarField:
    """phi_0 vanishing on the boundary with L_0 phi_0 = L_eps phi_eps0 (discretely)."""
    oscillating, homogenized = _operators(field, epsilon, ahat, phi_eps0.grid)
    return _transfer(phi_eps0, oscillating, homogenized, tol, "Initial data matching")


def oscillating_initial_data(
    phi0: ScalarField, field, epsilon: float, ahat, tol: float = 1e-10
) -> ScalarField:
    """phi_eps0 vanishing on the boundary with L_eps phi_eps0 = L_0 phi0; inverse of match_initial_data."""
    oscillating, homogenized = _operators(field, epsilon, ahat, phi0.grid)
    return _transfer(phi0, homogenized, oscillating, tol, "Oscillating initial data")


# —————————————————————————————————————————————————————————————————————————
# H^-1 NORM
# —————————————————————————————————————————————————————————————————————————

def h_minus1_norm(f: ScalarField, domain: Optional[Domain] = None, tol: float = 1e-10) -> float:
    """||grad z||_{L2} where -Laplace z = f, z = 0 on the boundary."""
    grid = f.grid
    if domain is not None and grid.lengths != domain.extents:
        raise ValueError(f"Field grid {grid.lengths} does not match domain extents {domain.extents}")
    op = laplacian_operator(grid)
    functional = f if f.kind == "functional" else ScalarField(grid, f.values * np.asarray(grid.weights), kind="functional")
    z = solve_dirichlet(op, F=functional, tol=tol)
    return gradient_norm(z.values, grid)
