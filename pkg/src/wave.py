#!/usr/bin/env python3
"""
Explicit central (leapfrog) integration of u_tt - div(a grad u) = F with
Dirichlet data, plus energies, boundary traces and the closed-form modal
solutions used as oracles.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from src.coeff import Grid, ScalarField, TensorField
from src.elliptic import boundary_values, load_vector
from src.errors import InstabilityError
from src.fem import DomainOperator, as_operator, boundary_operator, gradient_norm, l2_norm
from src.spectral import EigenBasis, FilteredData

DEFAULT_CFL = 0.5
BLOW_UP_FACTOR = 1e6

Forcing = Union[None, ScalarField, np.ndarray, Callable[[float], object]]


@dataclass(frozen=True, eq=False)
class WaveState:
    t: float
    u: ScalarField
    v: ScalarField

    def __post_init__(self):
        if self.u.grid != self.v.grid:
            raise ValueError("Displacement and velocity live on different grids")

    @property
    def grid(self) -> Grid:
        return self.u.grid

    @classmethod
    def from_arrays(cls, grid: Grid, u, v=None, t: float = 0.0) -> "WaveState":
        u = np.asarray(u, dtype=float)
        v = np.zeros(grid.shape) if v is None else np.asarray(v, dtype=float)
        return cls(float(t), ScalarField(grid, u), ScalarField(grid, v))

    @classmethod
    def zero(cls, grid: Grid, t: float = 0.0) -> "WaveState":
        return cls.from_arrays(grid, np.zeros(grid.shape), t=t)

    def scaled(self, factor: float) -> "WaveState":
        return WaveState(self.t, self.u * factor, self.v * factor)


@dataclass(frozen=True, eq=False)
class BoundarySeries:
    """Values per boundary node per time step, e.g. a conormal derivative or a control."""

    times: np.ndarray
    values: np.ndarray
    coordinates: np.ndarray
    weights: np.ndarray

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def reflected(self) -> "BoundarySeries":
        """Series of t -> g(T - t)."""
        return BoundarySeries(self.T - self.times[::-1], self.values[::-1].copy(), self.coordinates, self.weights)

    def __add__(self, other: "BoundarySeries") -> "BoundarySeries":
        return BoundarySeries(self.times, self.values + other.values, self.coordinates, self.weights)

    def __mul__(self, scale: float) -> "BoundarySeries":
        return BoundarySeries(self.times, scale * self.values, self.coordinates, self.weights)

    __rmul__ = __mul__


@dataclass(eq=False)
class WaveTrajectory:
    grid: Grid
    times: np.ndarray
    dt: float
    energies: np.ndarray
    boundary_grad_sq: np.ndarray
    sample_indices: np.ndarray
    displacements: np.ndarray
    velocities: np.ndarray
    gamma: tuple[str, ...] = ()
    gamma_grad_sq: Optional[np.ndarray] = None
    boundary_gradients: Optional[np.ndarray] = None
    gradients: Optional[np.ndarray] = None
    velocity_gradients: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def sample_times(self) -> np.ndarray:
        return self.times[self.sample_indices]

    def state(self, sample: int = -1) -> WaveState:
        return WaveState.from_arrays(
            self.grid, self.displacements[sample], self.velocities[sample], self.sample_times[sample]
        )

    @property
    def final_state(self) -> WaveState:
        return self.state(-1)

    def sample_gradients(self) -> np.ndarray:
        """Gradient samples (ns, d, *shape); closed form when recorded, second-order differences otherwise."""
        if self.gradients is None:
            self.gradients = _nodal_gradients(self.displacements, self.grid)
        return self.gradients

    def sample_velocity_gradients(self) -> np.ndarray:
        if self.velocity_gradients is None:
            self.velocity_gradients = _nodal_gradients(self.velocities, self.grid)
        return self.velocity_gradients


def _nodal_gradients(samples: np.ndarray, grid: Grid) -> np.ndarray:
    return np.stack([np.stack(np.gradient(s, *grid.spacing, edge_order=2)) for s in samples])


# —————————————————————————————————————————————————————————————————————————
# TIME STEP
# —————————————————————————————————————————————————————————————————————————

def max_time_step(a: Union[TensorField, DomainOperator], cfl: float = DEFAULT_CFL) -> float:
    op = as_operator(a)
    return cfl * min(op.grid.spacing) * math.sqrt(op.tensor.mu)


def stable_time_step(a: Union[TensorField, DomainOperator], T: float, cfl: float = DEFAULT_CFL) -> float:
    """Largest dt <= CFL * h * sqrt(mu) that divides T."""
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    return T / math.ceil(T / max_time_step(a, cfl) - 1e-9)


def step_count(T: float, dt: float) -> int:
    return max(1, math.ceil(T / dt - 1e-9))


# —————————————————————————————————————————————————————————————————————————
# SOURCES
# —————————————————————————————————————————————————————————————————————————

def _boundary_schedule(boundary, op: DomainOperator, times: np.ndarray) -> np.ndarray:
    """Boundary values at times[0..n+1] (one step beyond T), shape (n+2, nb)."""
    nb = op.boundary.size
    steps = len(times)
    if boundary is None:
        return np.zeros((steps + 1, nb))
    if isinstance(boundary, BoundarySeries):
        boundary = boundary.values
    if callable(boundary):
        dt = times[1] - times[0]
        extended = np.append(times, times[-1] + dt)
        return np.stack([boundary_values(boundary(t), op) for t in extended])
    series = np.asarray(boundary, dtype=float)
    if series.ndim == 0:
        return np.full((steps + 1, nb), float(series))
    if series.shape == (steps, nb):
        return np.vstack([series, 2.0 * series[-1] - series[-2]])
    if series.shape == (steps + 1, nb):
        return series
    raise ValueError(f"Boundary series of shape {series.shape} does not match {steps} steps x {nb} boundary nodes")


def _forcing_loads(forcing: Forcing, op: DomainOperator) -> Callable[[float], np.ndarray]:
    if forcing is None:
        zero = np.zeros(op.grid.size)
        return lambda t: zero
    if callable(forcing) and not isinstance(forcing, ScalarField):
        return lambda t: load_vector(forcing(t), op)
    static = load_vector(forcing, op)
    return lambda t: static


def _check_gamma(gamma: Sequence[str], grid: Grid) -> tuple[str, ...]:
    gamma = tuple(gamma or ())
    faces = boundary_operator(grid).face_weights
    unknown = [f for f in gamma if f not in faces]
    if unknown:
        raise ValueError(f"Unknown boundary faces {unknown}; available: {sorted(faces)}")
    return gamma


# —————————————————————————————————————————————————————————————————————————
# INTEGRATION
# —————————————————————————————————————————————————————————————————————————

def integrate(
    a: Union[TensorField, DomainOperator],
    initial: WaveState,
    T: float,
    dt: float,
    boundary=None,
    forcing: Forcing = None,
    sample_stride: int = 1,
    record_traces: bool = False,
    gamma: Sequence[str] = (),
    cfl: float = DEFAULT_CFL,
) -> WaveTrajectory:
    """
    Leapfrog integration of u_tt + L u = F on [0, T] with u = g at boundary nodes.

    Args:
        a: coefficient tensor on a domain grid (or its operator).
        initial: state at t = 0.
        T: final time.
        dt: requested step; the step used is T / ceil(T / dt).
        boundary: None, a callable of t, a (steps, nb) array or a BoundarySeries.
        forcing: None, a nodal field, or a callable of t returning one.
        sample_stride: keep every k-th interior state (the final state is always kept).
        record_traces: keep boundary gradients at every step.
        gamma: faces of the partial-boundary series.
        cfl: stability factor of dt <= cfl * h * sqrt(mu).

    Returns:
        WaveTrajectory with energies and boundary integrands at every step.

    Raises:
        ValueError: on a CFL violation or inconsistent shapes.
        InstabilityError: when the energy of a source-free run grows beyond 1e6 times its initial value.
    """
    op = as_operator(a)
    grid = op.grid
    if initial.grid != grid:
        raise ValueError("Initial state and operator live on different grids")
    if T <= 0 or dt <= 0:
        raise ValueError(f"T and dt must be positive (got T={T}, dt={dt})")
    if sample_stride < 1:
        raise ValueError(f"sample_stride must be >= 1, got {sample_stride}")
    limit = max_time_step(op, cfl)
    if dt > limit * (1 + 1e-12):
        raise ValueError(f"dt={dt:.4g} violates the stability bound {cfl} * h * sqrt(mu) = {limit:.4g}")
    gamma = _check_gamma(gamma, grid)

    n = step_count(T, dt)
    dt = T / n
    times = np.linspace(0.0, T, n + 1)
    schedule = _boundary_schedule(boundary, op, times)
    loads = _forcing_loads(forcing, op)
    source_free = boundary is None and forcing is None

    bop = op.boundary
    interior = op.interior
    inverse_mass = 1.0 / op.interior_mass
    K = op.stiffness
    gamma_weights = bop.subset_weights(gamma) if gamma else None

    u_cur = initial.u.values.ravel().copy()
    mismatch = np.max(np.abs(u_cur[bop.nodes] - schedule[0])) if bop.size else 0.0
    if mismatch > 1e-10 * max(1.0, float(np.max(np.abs(u_cur)))):
        logging.warning(f"Initial displacement differs from the boundary data by {mismatch:.3e}; overwriting")
    u_cur[bop.nodes] = schedule[0]

    def acceleration(u: np.ndarray, t: float) -> np.ndarray:
        return inverse_mass * (loads(t)[interior] - (K @ u)[interior])

    u_next = np.empty_like(u_cur)
    u_next[interior] = u_cur[interior] + dt * initial.v.values.ravel()[interior] + 0.5 * dt**2 * acceleration(u_cur, 0.0)
    u_next[bop.nodes] = schedule[1]
    velocity = initial.v.values.ravel().copy()
    velocity[bop.nodes] = (schedule[1] - schedule[0]) / dt

    energies = np.empty(n + 1)
    grad_sq = np.empty(n + 1)
    gamma_sq = np.empty(n + 1) if gamma else None
    traces = np.empty((n + 1, bop.size, grid.dimension)) if record_traces else None
    sample_indices = sorted(set(range(0, n + 1, sample_stride)) | {n})
    sample_set = set(sample_indices)
    displacements, velocities = [], []

    u_prev = None
    for step in range(n + 1):
        if step > 0:
            u_next = np.empty_like(u_cur)
            u_next[interior] = 2.0 * u_cur[interior] - u_prev[interior] + dt**2 * acceleration(u_cur, times[step])
            u_next[bop.nodes] = schedule[step + 1]
            velocity = (u_next - u_prev) / (2.0 * dt)

        energy_value = 0.5 * float(velocity @ (op.mass * velocity)) + 0.5 * float(u_cur @ (K @ u_cur))
        if not math.isfinite(energy_value) or (
            source_free and step > 0 and energies[0] > 0 and energy_value > BLOW_UP_FACTOR * energies[0]
        ):
            raise InstabilityError(
                f"Energy blow-up at t={times[step]:.4g}: E={energy_value:.3e} from E0={energies[0] if step else 0.0:.3e} "
                f"(dt={dt:.4g}, eps={op.epsilon})"
            )
        energies[step] = energy_value
        gradients = bop.gradients(u_cur)
        squared = np.sum(gradients**2, axis=1)
        grad_sq[step] = float(bop.weights @ squared)
        if gamma_sq is not None:
            gamma_sq[step] = float(gamma_weights @ squared)
        if traces is not None:
            traces[step] = gradients
        if step in sample_set:
            displacements.append(u_cur.reshape(grid.shape).copy())
            velocities.append(velocity.reshape(grid.shape).copy())

        u_prev, u_cur = u_cur, u_next

    drift = abs(energies[-1] - energies[0]) / energies[0] if energies[0] > 0 else 0.0
    logging.info(
        f"Integrated {n} steps (dt={dt:.4g}, T={T:.4g}) on {grid.describe()}: "
        f"E0={energies[0]:.6g}, relative energy drift {drift:.2e}"
    )
    return WaveTrajectory(
        grid=grid,
        times=times,
        dt=dt,
        energies=energies,
        boundary_grad_sq=grad_sq,
        sample_indices=np.asarray(sample_indices),
        displacements=np.asarray(displacements),
        velocities=np.asarray(velocities),
        gamma=gamma,
        gamma_grad_sq=gamma_sq,
        boundary_gradients=traces,
        metadata={
            "epsilon": op.epsilon,
            "operator": op.tensor.name or ("homogenized" if op.epsilon is None else "oscillating"),
            "dt": dt,
            "cfl_ratio": dt / (min(grid.spacing) * math.sqrt(op.tensor.mu)),
            "steps": n,
        },
    )


# —————————————————————————————————————————————————————————————————————————
# ENERGY AND TRACES
# —————————————————————————————————————————————————————————————————————————

def energy(state: WaveState, a: Union[TensorField, DomainOperator]) -> float:
    """1/2 int <A grad u, grad u> + 1/2 int v^2."""
    op = as_operator(a)
    if state.grid != op.grid:
        raise ValueError("State and operator live on different grids")
    u = state.u.values.ravel()
    v = state.v.values.ravel()
    return 0.5 * float(v @ (op.mass * v)) + 0.5 * float(u @ op.apply(u))


def boundary_gradient_integral(traj: WaveTrajectory, partial: bool = False) -> float:
    """Time trapezoid of int_{boundary} |grad u|^2 (over Gamma when partial)."""
    if partial:
        if traj.gamma_grad_sq is None:
            raise ValueError("Trajectory carries no partial-boundary series; pass gamma to integrate")
        return float(trapezoid(traj.gamma_grad_sq, traj.times))
    return float(trapezoid(traj.boundary_grad_sq, traj.times))


def conormal_trace(traj: WaveTrajectory, a: Union[TensorField, DomainOperator]) -> BoundarySeries:
    """n_i a_ij d_j u at every boundary node and step."""
    if traj.boundary_gradients is None:
        raise ValueError("Trajectory carries no boundary traces; integrate with record_traces=True")
    op = as_operator(a)
    if op.grid != traj.grid:
        raise ValueError("Trajectory and operator live on different grids")
    values = np.einsum("tbj,bj->tb", traj.boundary_gradients, op.conormal_weights)
    return BoundarySeries(traj.times, values, op.boundary.coordinates, op.boundary.weights)


def energy_bound_constant(traj: WaveTrajectory) -> float:
    """Observed sup_t (||grad u|| + ||u_t||) / (||grad u(0)|| + ||u_t(0)||) over the samples."""
    grid = traj.grid
    norms = np.array([
        gradient_norm(u, grid) + l2_norm(v, grid) for u, v in zip(traj.displacements, traj.velocities)
    ])
    if traj.sample_indices[0] != 0 or norms[0] == 0.0:
        raise ValueError("Energy bound constant needs a nonzero initial sample")
    return float(norms.max() / norms[0])


def trajectory_table(traj: WaveTrajectory) -> pd.DataFrame:
    table = {"t": traj.times, "energy": traj.energies, "boundary_grad_sq": traj.boundary_grad_sq}
    if traj.gamma_grad_sq is not None:
        table["gamma_grad_sq"] = traj.gamma_grad_sq
    return pd.DataFrame(table)


# —————————————————————————————————————————————————————————————————————————
# CLOSED-FORM MODAL SOLUTIONS
# —————————————————————————————————————————————————————————————————————————

def modal_coefficients(fd: FilteredData, t) -> tuple[np.ndarray, np.ndarray]:
    """c_k(t) and c_k'(t) for u = sum c_k(t) psi_k; t may be an array (result shape (len(t), K))."""
    omega = np.sqrt(fd.eigenvalues)
    phase = np.multiply.outer(np.atleast_1d(t), omega)
    c = fd.a * np.cos(phase) + fd.b / omega * np.sin(phase)
    dc = -fd.a * omega * np.sin(phase) + fd.b * np.cos(phase)
    return c, dc


def _check_coefficients(basis: EigenBasis, coeffs: FilteredData) -> None:
    if coeffs.basis is not basis:
        raise ValueError("Coefficients were projected onto a different basis")


def eigen_solution(basis: EigenBasis, coeffs: FilteredData, t: float) -> WaveState:
    """sum_k (a_k cos(sqrt(l_k) t) + b_k l_k^(-1/2) sin(sqrt(l_k) t)) psi_k and its time derivative."""
    _check_coefficients(basis, coeffs)
    modes = basis.modes[coeffs.indices]
    c, dc = modal_coefficients(coeffs, t)
    u = np.tensordot(c[0], modes, axes=1)
    v = np.tensordot(dc[0], modes, axes=1)
    return WaveState.from_arrays(basis.grid, u, v, t)


def boundary_mode_gradients(basis: EigenBasis) -> np.ndarray:
    """Gradients of every mode at the boundary nodes, shape (K, nb, d)."""
    bop = boundary_operator(basis.grid)
    if basis.analytic:
        flat = basis.gradients.reshape(basis.size, basis.grid.dimension, -1)
        return np.swapaxes(flat[:, :, bop.nodes], 1, 2)
    return np.stack([bop.gradients(mode) for mode in basis.modes]) if basis.size else np.zeros((0, bop.size, basis.grid.dimension))


def modal_trajectory(
    basis: EigenBasis,
    coeffs: FilteredData,
    T: float,
    dt: float,
    sample_stride: int = 1,
    record_traces: bool = True,
    gamma: Sequence[str] = (),
) -> WaveTrajectory:
    """Closed-form trajectory on the integrate time grid, with exact gradient and velocity-gradient samples."""
    _check_coefficients(basis, coeffs)
    grid = basis.grid
    gamma = _check_gamma(gamma, grid)
    n = step_count(T, dt)
    dt = T / n
    times = np.linspace(0.0, T, n + 1)
    c, dc = modal_coefficients(coeffs, times)
    lam = coeffs.eigenvalues
    energies = 0.5 * (c**2 @ lam + np.sum(dc**2, axis=1))

    bop = boundary_operator(grid)
    traces = np.einsum("tk,kbj->tbj", c, boundary_mode_gradients(basis)[coeffs.indices])
    squared = np.sum(traces**2, axis=2)
    grad_sq = squared @ bop.weights
    gamma_sq = squared @ bop.subset_weights(gamma) if gamma else None

    sample_indices = np.asarray(sorted(set(range(0, n + 1, sample_stride)) | {n}))
    modes = basis.modes[coeffs.indices]
    gradients = basis.gradients[coeffs.indices]
    cs, dcs = c[sample_indices], dc[sample_indices]
    return WaveTrajectory(
        grid=grid,
        times=times,
        dt=dt,
        energies=energies,
        boundary_grad_sq=grad_sq,
        sample_indices=sample_indices,
        displacements=np.tensordot(cs, modes, axes=1),
        velocities=np.tensordot(dcs, modes, axes=1),
        gamma=gamma,
        gamma_grad_sq=gamma_sq,
        boundary_gradients=traces if record_traces else None,
        gradients=np.tensordot(cs, gradients, axes=1),
        velocity_gradients=np.tensordot(dcs, gradients, axes=1),
        metadata={
            "epsilon": basis.epsilon,
            "operator": basis.name or "modal",
            "dt": dt,
            "modes": int(coeffs.size),
            "closed_form": True,
        },
    )
