#!/usr/bin/env python3
"""
Dirichlet eigenpairs, the filtered space A_N and the projection P_N.

All inner products use the trapezoid weights of the grid (the lumped mass),
which is also the quadrature that normalizes the eigenfields.
"""
import itertools
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from src.cell import HomogenizedTensor
from src.coeff import Domain, Grid, ScalarField, TensorField
from src.errors import SolverError
from src.fem import DomainOperator, as_operator, boundary_operator, gradient_norm, l2_norm

DENSE_LIMIT = 1500
SPECTRUM_FRACTION = 0.25
EIGEN_RESIDUAL_LIMIT = 1e-6
OFF_DIAGONAL_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class EigenBasis:
    grid: Grid
    eigenvalues: np.ndarray
    modes: np.ndarray
    gradients: np.ndarray
    boundary_grad_sq: np.ndarray
    orthonormality_defect: float
    residual: float
    complete_below: float
    analytic: bool = False
    hessians: Optional[np.ndarray] = None
    indices: Optional[tuple[tuple[int, ...], ...]] = None
    epsilon: Optional[float] = None
    name: str = ""

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    def select(self, keep: np.ndarray) -> "EigenBasis":
        keep = np.asarray(keep, dtype=int)
        return replace(
            self,
            eigenvalues=self.eigenvalues[keep],
            modes=self.modes[keep],
            gradients=self.gradients[keep],
            boundary_grad_sq=self.boundary_grad_sq[keep],
            hessians=None if self.hessians is None else self.hessians[keep],
            indices=None if self.indices is None else tuple(self.indices[i] for i in keep),
        )

    def truncate(self, N: float) -> "EigenBasis":
        """Modes with eigenvalue <= N; the result stays complete up to N."""
        if N > self.complete_below:
            raise ValueError(f"Threshold {N:.6g} exceeds the certified range {self.complete_below:.6g} of this basis")
        return replace(self.select(np.flatnonzero(self.eigenvalues <= N)), complete_below=float(N))


@dataclass(frozen=True, eq=False)
class FilteredData:
    threshold: float
    a: np.ndarray
    b: np.ndarray
    basis: EigenBasis
    indices: np.ndarray

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.basis.eigenvalues[self.indices]

    def with_coefficients(self, a: np.ndarray, b: np.ndarray) -> "FilteredData":
        return FilteredData(self.threshold, np.asarray(a, dtype=float), np.asarray(b, dtype=float), self.basis, self.indices)

    def scaled(self, factor: float) -> "FilteredData":
        return self.with_coefficients(factor * self.a, factor * self.b)


# —————————————————————————————————————————————————————————————————————————
# DISCRETE EIGENPAIRS
# —————————————————————————————————————————————————————————————————————————

def _lowest(op: DomainOperator, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Lowest k eigenpairs of K_II psi = lambda M_I psi, mass-orthonormal."""
    scale = 1.0 / np.sqrt(op.interior_mass)
    symmetric = sp.diags(scale) @ op.interior_stiffness @ sp.diags(scale)
    n = symmetric.shape[0]
    if n <= DENSE_LIMIT:
        values, vectors = scipy.linalg.eigh(symmetric.toarray(), subset_by_index=[0, k - 1])
    else:
        lu = splu(symmetric.tocsc())
        inverse = LinearOperator((n, n), matvec=lu.solve, dtype=float)
        try:
            values, vectors = eigsh(symmetric, k=k, sigma=0.0, which="LM", OPinv=inverse)
        except ArpackNoConvergence as e:
            raise SolverError(f"Shift-invert eigensolver did not converge for {k} modes: {e}") from e
    order = np.argsort(values)
    return values[order], scale[:, None] * vectors[:, order]


def _finish_basis(
    op: DomainOperator, values: np.ndarray, interior_vectors: np.ndarray, complete_below: float
) -> EigenBasis:
    grid = op.grid
    count = len(values)
    modes = np.zeros((count, grid.size))
    modes[:, op.interior] = interior_vectors.T
    for mode in modes:
        significant = np.flatnonzero(np.abs(mode) > 1e-6 * np.max(np.abs(mode)))
        if significant.size and mode[significant[0]] < 0:
            mode *= -1.0

    weights = op.mass
    gram = (modes * weights) @ modes.T
    defect = float(np.max(np.abs(gram - np.eye(count)))) if count else 0.0
    residual = 0.0
    for value, mode in zip(values, modes):
        interior = mode[op.interior]
        lhs = op.interior_stiffness @ interior
        rhs = value * op.interior_mass * interior
        residual = max(residual, float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs)))
    if residual > EIGEN_RESIDUAL_LIMIT:
        raise SolverError(f"Eigenpair residual {residual:.3e} above {EIGEN_RESIDUAL_LIMIT}", residual=residual)

    shaped = modes.reshape((count,) + grid.shape)
    if count:
        gradients = np.stack([np.stack(np.gradient(m, *grid.spacing, edge_order=2)) for m in shaped])
    else:
        gradients = np.zeros((0, grid.dimension) + grid.shape)
    bop = op.boundary
    boundary_grad_sq = np.array([float(np.sum(bop.weights * np.sum(bop.gradients(m) ** 2, axis=1))) for m in modes])
    return EigenBasis(
        grid=grid,
        eigenvalues=np.asarray(values, dtype=float),
        modes=shaped,
        gradients=gradients,
        boundary_grad_sq=boundary_grad_sq,
        orthonormality_defect=defect,
        residual=residual,
        complete_below=float(complete_below),
        epsilon=op.epsilon,
        name=op.tensor.name,
    )


def eigenpairs(
    a: Union[TensorField, DomainOperator],
    domain: Optional[Domain] = None,
    grid: Optional[Grid] = None,
    count: Optional[int] = None,
    threshold: Optional[float] = None,
    tol: float = 1e-10,
) -> EigenBasis:
    """
    Lowest Dirichlet eigenpairs of the discrete operator.

    Args:
        a: coefficient tensor on a domain grid (or its operator).
        domain: optional consistency check of the grid extents.
        grid: optional consistency check of the operator grid.
        count: number of modes.
        threshold: alternatively, all modes with eigenvalue <= threshold plus the first one above it.
        tol: orthonormality tolerance reported against.

    Returns:
        EigenBasis of the discrete operator (not the continuum), mass-orthonormal.
    """
    op = as_operator(a)
    if grid is not None and grid != op.grid:
        raise ValueError("Operator and grid differ")
    if domain is not None and op.grid.lengths != domain.extents:
        raise ValueError(f"Grid {op.grid.lengths} does not match domain {domain.extents}")
    if (count is None) == (threshold is None):
        raise ValueError("Pass exactly one of count or threshold")
    limit = int(math.floor(SPECTRUM_FRACTION * len(op.interior)))
    if limit < 1:
        raise ValueError("Grid too coarse for any eigenpair")

    if count is not None:
        if count < 1 or count > limit:
            raise ValueError(f"Requested {count} modes; at most {limit} (0.25 x interior nodes) are trusted")
        values, vectors = _lowest(op, count)
        basis = _finish_basis(op, values, vectors, values[-1])
    else:
        k = min(8, limit)
        while True:
            values, vectors = _lowest(op, k)
            if values[-1] > threshold or k == limit:
                break
            k = min(2 * k, limit)
        if values[-1] <= threshold:
            raise ValueError(
                f"Threshold {threshold:.6g} reaches beyond the {limit} trusted modes (largest {values[-1]:.6g}); refine the grid"
            )
        keep = int(np.searchsorted(values, threshold, side="right")) + 1
        basis = _finish_basis(op, values[:keep], vectors[:, :keep], values[keep - 1])

    if basis.orthonormality_defect > max(tol, 1e-9):
        logging.warning(f"Eigenbasis orthonormality defect {basis.orthonormality_defect:.2e}")
    logging.info(
        f"Eigenpairs on {op.grid.describe()}: {basis.size} modes, "
        f"lambda in [{basis.eigenvalues[0]:.6g}, {basis.eigenvalues[-1]:.6g}], residual {basis.residual:.1e}"
    )
    return basis


# —————————————————————————————————————————————————————————————————————————
# CLOSED-FORM HOMOGENIZED BASIS
# —————————————————————————————————————————————————————————————————————————

def _off_diagonal_tolerance(ahat) -> float:
    """Cell-grid values of A_hat carry O(h^2) off-diagonal artifacts even when the exact tensor is diagonal."""
    if isinstance(ahat, HomogenizedTensor) and ahat.resolution:
        return max(OFF_DIAGONAL_TOL, 1.0 / min(ahat.resolution) ** 2)
    return OFF_DIAGONAL_TOL


def diagonal_part(ahat) -> np.ndarray:
    """Diagonal of A_hat used by the closed-form basis; raises when the tensor is genuinely anisotropic off-axis."""
    matrix = ahat.matrix if isinstance(ahat, HomogenizedTensor) else np.atleast_2d(np.asarray(ahat, dtype=float))
    off = matrix - np.diag(np.diag(matrix))
    relative = float(np.max(np.abs(off)) / np.max(np.abs(matrix)))
    tolerance = _off_diagonal_tolerance(ahat)
    if relative > tolerance:
        raise ValueError(
            f"Closed-form sine basis needs a diagonal tensor (off-diagonal ratio {relative:.2e} > {tolerance:.2e})"
        )
    if relative > 1e-10:
        logging.warning(f"Dropping off-diagonal homogenized entries of relative size {relative:.2e}")
    return np.diag(matrix).copy()


def _sine_eigenvalue(index, diagonal, lengths) -> float:
    return float(sum(a * (m * math.pi / L) ** 2 for m, a, L in zip(index, diagonal, lengths)))


def _enumerated_below(indices, diagonal, lengths) -> float:
    """Largest eigenvalue of the chosen modes below which every sine mode is among them."""
    eigenvalues = [_sine_eigenvalue(m, diagonal, lengths) for m in indices]
    if not eigenvalues:
        return 0.0
    top = max(eigenvalues)
    bounds = [int(L / math.pi * math.sqrt(top / a)) + 1 for a, L in zip(diagonal, lengths)]
    chosen = set(indices)
    missing = [
        _sine_eigenvalue(m, diagonal, lengths)
        for m in itertools.product(*[range(1, b + 1) for b in bounds])
        if m not in chosen and _sine_eigenvalue(m, diagonal, lengths) <= top * (1 + 1e-12)
    ]
    if not missing:
        return top
    gap = min(missing)
    return max((lam for lam in eigenvalues if lam < gap * (1 - 1e-12)), default=0.0)


def homogenized_sine_basis(
    ahat,
    domain: Domain,
    grid: Grid,
    count: Optional[int] = None,
    threshold: Optional[float] = None,
    modes: Optional[Sequence[Sequence[int]]] = None,
) -> EigenBasis:
    """Closed-form eigenpairs of -div(A_hat grad) for diagonal A_hat with exact gradients and Hessians."""
    if grid.lengths != domain.extents:
        raise ValueError(f"Grid {grid.lengths} does not match domain {domain.extents}")
    diagonal = diagonal_part(ahat)
    d = grid.dimension
    lengths = grid.lengths
    if modes is not None:
        indices = [tuple(int(m) for m in index) for index in modes]
    else:
        if (count is None) == (threshold is None):
            raise ValueError("Pass exactly one of count, threshold or modes")
        if threshold is not None:
            bounds = [int(L / math.pi * math.sqrt(threshold / a)) + 1 for a, L in zip(diagonal, lengths)]
        else:
            bounds = [count] * d
        candidates = itertools.product(*[range(1, b + 1) for b in bounds])
        ordered = sorted(candidates, key=lambda m: (_sine_eigenvalue(m, diagonal, lengths), m))
        if threshold is not None:
            inside = [m for m in ordered if _sine_eigenvalue(m, diagonal, lengths) <= threshold]
            indices = inside + ordered[len(inside):len(inside) + 1]
        else:
            indices = ordered[:count]
    for index in indices:
        if len(index) != d or any(m < 1 or m >= n for m, n in zip(index, grid.resolution)):
            raise ValueError(f"Mode index {index} not representable on {grid.describe()}")

    x = np.asarray(grid.coordinates)
    count = len(indices)
    eigenvalues = np.array([_sine_eigenvalue(m, diagonal, lengths) for m in indices])
    shaped = np.empty((count,) + grid.shape)
    gradients = np.empty((count, d) + grid.shape)
    hessians = np.empty((count, d, d) + grid.shape)
    for p, index in enumerate(indices):
        kappa = [m * math.pi / L for m, L in zip(index, lengths)]
        norm = [math.sqrt(2.0 / L) for L in lengths]
        s = [norm[k] * np.sin(kappa[k] * x[k]) for k in range(d)]
        c = [norm[k] * kappa[k] * np.cos(kappa[k] * x[k]) for k in range(d)]
        ss = [-kappa[k] ** 2 * s[k] for k in range(d)]
        shaped[p] = np.prod(s, axis=0)
        for k in range(d):
            gradients[p, k] = np.prod([c[j] if j == k else s[j] for j in range(d)], axis=0)
            for l in range(d):
                if k == l:
                    factors = [ss[j] if j == k else s[j] for j in range(d)]
                else:
                    factors = [c[j] if j in (k, l) else s[j] for j in range(d)]
                hessians[p, k, l] = np.prod(factors, axis=0)

    weights = np.asarray(grid.weights)
    flat = shaped.reshape(count, -1)
    gram = (flat * weights.ravel()) @ flat.T
    defect = float(np.max(np.abs(gram - np.eye(count)))) if count else 0.0
    bop = boundary_operator(grid)
    boundary_grad_sq = np.array([
        float(np.sum(bop.weights * np.sum(gradients[p].reshape(d, -1)[:, bop.nodes] ** 2, axis=0)))
        for p in range(count)
    ])
    return EigenBasis(
        grid=grid,
        eigenvalues=eigenvalues,
        modes=shaped,
        gradients=gradients,
        boundary_grad_sq=boundary_grad_sq,
        orthonormality_defect=defect,
        residual=0.0,
        complete_below=(
            _enumerated_below(indices, diagonal, lengths) if modes is not None else float(eigenvalues.max(initial=0.0))
        ),
        analytic=True,
        hessians=hessians,
        indices=tuple(indices),
        name="homogenized (closed form)",
    )


# —————————————————————————————————————————————————————————————————————————
# FILTERING
# —————————————————————————————————————————————————————————————————————————

def frequency_threshold(epsilon: float, T: float, C0: float = 1.0) -> float:
    """N = C0 * T^(-2/3) * eps^(-2/3)."""
    if epsilon <= 0 or T <= 0 or C0 <= 0:
        raise ValueError(f"epsilon, T and C0 must be positive (got {epsilon}, {T}, {C0})")
    return C0 * T ** (-2.0 / 3.0) * epsilon ** (-2.0 / 3.0)


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)


def project(data, basis: EigenBasis, N: float) -> FilteredData:
    """Coefficients <u, psi_k>, <v, psi_k> for all modes with lambda_k <= N."""
    u, v = data
    u, v = _values(u), _values(v)
    if u.shape != basis.grid.shape or v.shape != basis.grid.shape:
        raise ValueError("Data does not live on the basis grid")
    if N > basis.complete_below * (1 + 1e-12):
        raise ValueError(
            f"N={N:.6g} exceeds the largest computed eigenvalue {basis.complete_below:.6g}; recompute a larger basis"
        )
    indices = np.flatnonzero(basis.eigenvalues <= N)
    weights = np.asarray(basis.grid.weights)
    modes = basis.modes[indices].reshape(len(indices), -1)
    a = modes @ (weights * u).ravel()
    b = modes @ (weights * v).ravel()
    return FilteredData(float(N), a, b, basis, indices)


def synthesize(fd: FilteredData) -> tuple[ScalarField, ScalarField]:
    grid = fd.basis.grid
    modes = fd.basis.modes[fd.indices].reshape(fd.size, -1)
    u = (fd.a @ modes).reshape(grid.shape) if fd.size else np.zeros(grid.shape)
    v = (fd.b @ modes).reshape(grid.shape) if fd.size else np.zeros(grid.shape)
    return ScalarField(grid, u), ScalarField(grid, v)


def filtered_energy(fd: FilteredData) -> float:
    """||grad phi0||^2 + ||phi1||^2 of the synthesized data."""
    u, v = synthesize(fd)
    return gradient_norm(u.values, fd.basis.grid) ** 2 + l2_norm(v.values, fd.basis.grid) ** 2


def random_filtered_data(basis: EigenBasis, N: float, rng: np.random.Generator, energy: float = 1.0) -> FilteredData:
    """i.i.d. standard normal coefficients over the modes with lambda <= N, scaled to the given initial energy."""
    indices = np.flatnonzero(basis.eigenvalues <= N)
    if indices.size == 0:
        raise ValueError(f"No modes with eigenvalue <= {N:.6g}")
    draft = FilteredData(float(N), rng.standard_normal(indices.size), rng.standard_normal(indices.size), basis, indices)
    return draft.scaled(math.sqrt(energy / filtered_energy(draft)))


def eigen_table(basis: EigenBasis, epsilon: Optional[float] = None) -> pd.DataFrame:
    eps = epsilon if epsilon is not None else (basis.epsilon or 0.0)
    return pd.DataFrame({
        "k": np.arange(1, basis.size + 1),
        "lambda": basis.eigenvalues,
        "boundary_grad_sq": basis.boundary_grad_sq,
        "eps_lambda": eps * basis.eigenvalues,
    })
