#!/usr/bin/env python3
"""
P1 finite elements on uniform interval and rectangle grids.

The discrete operator is K = sum_T |T| G_T^T A_T G_T with A sampled at element
centroids, so K is symmetric for any symmetric A. The mass matrix is lumped
(trapezoid weights), which also serves as the discrete L2 inner product.
"""
import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from src.coeff import FACE_NAMES, Grid, TensorField, constant_tensor
from src.errors import SolverError


class ElementType(NamedTuple):
    offsets: tuple[tuple[int, ...], ...]
    gradients: np.ndarray  # reference gradients, one row per vertex, in units of 1/h per axis


ELEMENT_TYPES = {
    1: (ElementType(((0,), (1,)), np.array([[-1.0], [1.0]])),),
    2: (
        ElementType(((0, 0), (1, 0), (0, 1)), np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])),
        ElementType(((1, 1), (0, 1), (1, 0)), np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])),
    ),
}


def element_measure(grid: Grid) -> float:
    volume = float(np.prod(grid.spacing))
    return volume if grid.dimension == 1 else 0.5 * volume


def _physical_gradients(grid: Grid, element: ElementType) -> np.ndarray:
    return element.gradients / np.asarray(grid.spacing)[None, :]


def _vertex_indices(grid: Grid, offset: tuple[int, ...]) -> np.ndarray:
    index = np.indices(grid.resolution)
    shifted = index + np.asarray(offset).reshape((-1,) + (1,) * grid.dimension)
    if grid.periodic:
        shifted = shifted % np.asarray(grid.resolution).reshape((-1,) + (1,) * grid.dimension)
    return np.ravel_multi_index(tuple(shifted), grid.shape).ravel()


# —————————————————————————————————————————————————————————————————————————
# ASSEMBLY
# —————————————————————————————————————————————————————————————————————————

def assemble_stiffness(grid: Grid, element_tensors) -> sp.csr_matrix:
    """Stiffness matrix over all grid nodes (periodic wrap on cell grids)."""
    d = grid.dimension
    measure = element_measure(grid)
    rows, cols, vals = [], [], []
    for element, tensor in zip(ELEMENT_TYPES[d], element_tensors):
        grads = _physical_gradients(grid, element)
        coefficients = np.asarray(tensor).reshape(d, d, -1)
        vertices = [_vertex_indices(grid, offset) for offset in element.offsets]
        for a, row in enumerate(vertices):
            flux = np.einsum("p,pqe->qe", grads[a], coefficients)
            for b, col in enumerate(vertices):
                rows.append(row)
                cols.append(col)
                vals.append(measure * np.einsum("qe,q->e", flux, grads[b]))
    n = grid.size
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    matrix.sum_duplicates()
    return matrix


def assemble_flux_load(grid: Grid, element_vectors) -> np.ndarray:
    """Nodal vector sum_T |T| G_T^T q_T for element vectors q (one (d, *resolution) array per element type)."""
    d = grid.dimension
    measure = element_measure(grid)
    load = np.zeros(grid.size)
    for element, vectors in zip(ELEMENT_TYPES[d], element_vectors):
        grads = _physical_gradients(grid, element)
        q = np.asarray(vectors).reshape(d, -1)
        for a, offset in enumerate(element.offsets):
            np.add.at(load, _vertex_indices(grid, offset), measure * (grads[a] @ q))
    return load


def element_gradients(grid: Grid, nodal: np.ndarray) -> list[np.ndarray]:
    """Gradient of the P1 interpolant on each element, one (d, *resolution) array per element type."""
    d = grid.dimension
    flat = np.asarray(nodal).ravel()
    out = []
    for element in ELEMENT_TYPES[d]:
        grads = _physical_gradients(grid, element)
        total = np.zeros((d, int(np.prod(grid.resolution))))
        for a, offset in enumerate(element.offsets):
            total += np.outer(grads[a], flat[_vertex_indices(grid, offset)])
        out.append(total.reshape((d,) + grid.resolution))
    return out


def lumped_mass(grid: Grid) -> np.ndarray:
    return np.asarray(grid.weights).ravel()


@lru_cache(maxsize=32)
def periodic_laplacian(grid: Grid) -> sp.csr_matrix:
    if not grid.periodic:
        raise ValueError("periodic_laplacian needs a cell grid")
    return assemble_stiffness(grid, constant_tensor(np.eye(grid.dimension), grid).element_values)


# —————————————————————————————————————————————————————————————————————————
# BOUNDARY
# —————————————————————————————————————————————————————————————————————————

@dataclass(eq=False)
class BoundaryOperator:
    """Boundary nodes of a domain grid with quadrature weights, normals and gradient recovery."""

    grid: Grid
    nodes: np.ndarray
    multi_index: np.ndarray
    face_weights: dict[str, np.ndarray]
    face_normals: dict[str, np.ndarray]
    normals: np.ndarray
    derivatives: tuple[sp.csr_matrix, ...]

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def coordinates(self) -> np.ndarray:
        return np.asarray(self.grid.coordinates).reshape(self.grid.dimension, -1)[:, self.nodes]

    @cached_property
    def weights(self) -> np.ndarray:
        return sum(self.face_weights.values())

    def subset_weights(self, faces) -> np.ndarray:
        if not faces:
            return self.weights
        return sum(self.face_weights[f] for f in faces)

    def gradients(self, u: np.ndarray) -> np.ndarray:
        """Recovered gradients at boundary nodes, shape (nb, d): one-sided second order normally, central tangentially."""
        flat = np.asarray(u).ravel()
        return np.stack([D @ flat for D in self.derivatives], axis=1)


def _stencil(m: np.ndarray, axis: int, n: int, h: float, shape, nb: int):
    rows, cols, vals = [], [], []
    low = m[axis] == 0
    high = m[axis] == n
    mid = ~(low | high)
    cases = (
        (low, ((0, -3.0), (1, 4.0), (2, -1.0))),
        (high, ((0, 3.0), (-1, -4.0), (-2, 1.0))),
        (mid, ((-1, -1.0), (1, 1.0))),
    )
    positions = np.arange(nb)
    for mask, stencil in cases:
        if not mask.any():
            continue
        sub = m[:, mask]
        for delta, weight in stencil:
            shifted = sub.copy()
            shifted[axis] += delta
            rows.append(positions[mask])
            cols.append(np.ravel_multi_index(tuple(shifted), shape))
            vals.append(np.full(int(mask.sum()), weight / (2.0 * h)))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


@lru_cache(maxsize=32)
def boundary_operator(grid: Grid) -> BoundaryOperator:
    if grid.periodic:
        raise ValueError("A cell grid has no boundary")
    d = grid.dimension
    shape = grid.shape
    multi = np.indices(shape).reshape(d, -1)
    on_boundary = np.zeros(multi.shape[1], dtype=bool)
    for k in range(d):
        on_boundary |= (multi[k] == 0) | (multi[k] == grid.resolution[k])
    nodes = np.flatnonzero(on_boundary)
    m = multi[:, nodes]
    nb = len(nodes)

    face_weights, face_normals = {}, {}
    face_count = np.zeros(nb, dtype=int)
    normals = np.zeros((nb, d))
    for name, axis, side in FACE_NAMES[d]:
        member = m[axis] == (0 if side < 0 else grid.resolution[axis])
        weight = member.astype(float)
        for j in range(d):
            if j == axis:
                continue
            h = grid.spacing[j]
            w = np.where((m[j] == 0) | (m[j] == grid.resolution[j]), 0.5 * h, h)
            weight = weight * w
        normal = np.zeros(d)
        normal[axis] = float(side)
        face_weights[name] = weight
        face_normals[name] = normal
        face_count += member
        normals[member] += normal
    normals[face_count != 1] = 0.0

    derivatives = []
    for k in range(d):
        rows, cols, vals = _stencil(m, k, grid.resolution[k], grid.spacing[k], shape, nb)
        derivatives.append(sp.csr_matrix((vals, (rows, cols)), shape=(nb, grid.size)))
    return BoundaryOperator(grid, nodes, m, face_weights, face_normals, normals, tuple(derivatives))


# —————————————————————————————————————————————————————————————————————————
# DOMAIN OPERATOR
# —————————————————————————————————————————————————————————————————————————

@dataclass(eq=False)
class DomainOperator:
    """Discrete -div(A grad) on a domain grid with the interior/boundary split."""

    tensor: TensorField
    stiffness: sp.csr_matrix
    mass: np.ndarray
    interior: np.ndarray
    boundary: BoundaryOperator

    @property
    def grid(self) -> Grid:
        return self.tensor.grid

    @property
    def epsilon(self):
        return self.tensor.epsilon

    @cached_property
    def interior_stiffness(self) -> sp.csr_matrix:
        return self.stiffness[self.interior][:, self.interior].tocsr()

    @cached_property
    def coupling(self) -> sp.csr_matrix:
        return self.stiffness[self.interior][:, self.boundary.nodes].tocsr()

    @cached_property
    def interior_mass(self) -> np.ndarray:
        return self.mass[self.interior]

    @cached_property
    def conormal_weights(self) -> np.ndarray:
        """Row b holds n_i a_ij(x_b / eps), so the conormal derivative is conormal_weights[b] . grad u(x_b)."""
        d = self.grid.dimension
        nodal = self.tensor.values.reshape(d, d, -1)[:, :, self.boundary.nodes]
        return np.einsum("bi,ijb->bj", self.boundary.normals, nodal)

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.stiffness @ np.asarray(u).ravel()


def build_operator(tensor: TensorField) -> DomainOperator:
    grid = tensor.grid
    if grid.periodic:
        raise ValueError("DomainOperator needs a domain grid")
    stiffness = assemble_stiffness(grid, tensor.element_values)
    interior = np.flatnonzero(np.asarray(grid.interior_mask).ravel())
    logging.debug(f"Assembled operator on {grid.describe()}: {stiffness.nnz} nonzeros")
    return DomainOperator(tensor, stiffness, lumped_mass(grid), interior, boundary_operator(grid))


def as_operator(a) -> DomainOperator:
    if isinstance(a, DomainOperator):
        return a
    if isinstance(a, TensorField):
        return build_operator(a)
    raise TypeError(f"Expected TensorField or DomainOperator, got {type(a).__name__}")


@lru_cache(maxsize=32)
def laplacian_operator(grid: Grid) -> DomainOperator:
    return build_operator(constant_tensor(np.eye(grid.dimension), grid, name="laplacian"))


def gradient_norm(u: np.ndarray, grid: Grid) -> float:
    """||grad u||_{L2} of the P1 interpolant of nodal values u."""
    flat = np.asarray(u).ravel()
    value = float(flat @ (laplacian_operator(grid).stiffness @ flat))
    return float(np.sqrt(max(value, 0.0)))


def l2_norm(u: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(np.sum(np.asarray(grid.weights) * np.asarray(u) ** 2)))


def inner(u: np.ndarray, v: np.ndarray, grid: Grid) -> float:
    return float(np.sum(np.asarray(grid.weights) * np.asarray(u) * np.asarray(v)))


# —————————————————————————————————————————————————————————————————————————
# LINEAR SOLVER
# —————————————————————————————————————————————————————————————————————————

def conjugate_gradient(
    matrix: sp.spmatrix,
    rhs: np.ndarray,
    tol: float = 1e-10,
    x0: np.ndarray | None = None,
    mean_free: bool = False,
    maxiter: int | None = None,
    label: str = "system",
) -> np.ndarray:
    """
    Jacobi-preconditioned conjugate gradient.

    Args:
        matrix: symmetric positive (semi)definite sparse matrix.
        rhs: right-hand side.
        tol: relative residual tolerance.
        x0: initial guess.
        mean_free: project rhs and solution onto mean-zero vectors (periodic problems).
        maxiter: iteration cap (scipy default when None).
        label: name used in log and error messages.

    Returns:
        Solution vector.

    Raises:
        SolverError: on non-convergence, carrying the achieved relative residual.
    """
    rhs = np.asarray(rhs, dtype=float)
    if mean_free:
        rhs = rhs - rhs.mean()
    norm = np.linalg.norm(rhs)
    if norm == 0.0:
        return np.zeros_like(rhs)
    preconditioner = sp.diags(1.0 / matrix.diagonal())
    solution, info = spla.cg(matrix, rhs, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=preconditioner)
    residual = float(np.linalg.norm(rhs - matrix @ solution) / norm)
    if info != 0:
        raise SolverError(
            f"Conjugate gradient did not converge for {label} (info={info}, residual={residual:.3e})",
            residual=residual,
        )
    if mean_free:
        solution = solution - solution.mean()
    logging.debug(f"CG solve for {label}: n={len(rhs)}, relative residual {residual:.2e}")
    return solution
