#!/usr/bin/env python3
"""
HUM boundary control for spectrally filtered data.

For targets (theta0, theta1) the quadratic functional

    J(phi0, phi1) = -<theta1, u(0)> + int theta0 u_t(0) + 1/2 int_0^T int_{bdry} (du/dnu)^2

is minimized over A_N x A_N, where u solves the source-free wave equation with
zero Dirichlet data and terminal state (phi0, phi1). The control is the
conormal derivative of the minimizing dual solution.

Coefficient vectors x = (alpha, beta) hold phi0 = sum alpha_k psi_k and
phi1 = sum beta_k psi_k over the retained eigenmodes.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse.linalg as spla
import sympy as sp
from scipy.integrate import trapezoid

from src.coeff import Grid, ScalarField
from src.errors import ControlError
from src.fem import DomainOperator
from src.scenario import Scenario
from src.spectral import EigenBasis, FilteredData, eigenpairs, frequency_threshold
from src.wave import BoundarySeries, WaveState, integrate, modal_coefficients, step_count

CONDITION_LIMIT = 1e12
DENSE_MODE_LIMIT = 64

X1, X2 = sp.symbols("x1 x2", real=True)
TARGET_LOCALS = {"x1": X1, "x2": X2, "x": X1, "pi": sp.pi}

Target = Union[None, str, ScalarField, np.ndarray]


# —————————————————————————————————————————————————————————————————————————
# TYPES
# —————————————————————————————————————————————————————————————————————————

@dataclass(frozen=True, eq=False)
class ControlProblem:
    operator: DomainOperator
    basis: EigenBasis
    theta0: ScalarField
    theta1: ScalarField
    T: float
    N: float
    dt: float
    epsilon: Optional[float] = None
    regime_ok: bool = True
    threshold_raised: bool = False
    cfl: float = 0.5

    @property
    def grid(self) -> Grid:
        return self.operator.grid

    @property
    def modes(self) -> int:
        return self.basis.size

    @property
    def dimension(self) -> int:
        return 2 * self.basis.size

    @property
    def omega(self) -> np.ndarray:
        return np.sqrt(self.basis.eigenvalues)

    def project(self, values: np.ndarray) -> np.ndarray:
        """<values, psi_k> with the trapezoid weights."""
        flat = self.basis.modes.reshape(self.modes, -1)
        return flat @ (np.asarray(self.grid.weights) * values).ravel()

    @cached_property
    def times(self) -> np.ndarray:
        """The integrate time grid on [0, T]."""
        return np.linspace(0.0, self.T, step_count(self.T, self.dt) + 1)

    @cached_property
    def fluxes(self) -> np.ndarray:
        """
        Discrete conormal derivative of every mode at the boundary nodes, shape (K, nb):
        (K_BI psi_I)_b / w_b, the flux for which the discrete Green identity is exact.
        """
        flat = self.basis.modes.reshape(self.modes, -1)[:, self.operator.interior]
        return (self.operator.coupling.T @ flat.T).T / self.operator.boundary.weights

    @property
    def theta0_coefficients(self) -> np.ndarray:
        return self.project(self.theta0.values)

    @property
    def theta1_coefficients(self) -> np.ndarray:
        return self.project(self.theta1.values)

    def data_norm(self) -> float:
        """||P_N theta0||_{L2} + ||P_N theta1||_{H^-1} with spectral weights 1 / lambda_k."""
        return float(
            np.linalg.norm(self.theta0_coefficients)
            + np.sqrt(np.sum(self.theta1_coefficients**2 / self.basis.eigenvalues))
        )

    def split(self, x: np.ndarray) -> FilteredData:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise ValueError(f"Coefficient vector of shape {x.shape}, expected ({self.dimension},)")
        return FilteredData(self.N, x[: self.modes], x[self.modes:], self.basis, np.arange(self.modes))


@dataclass(frozen=True, eq=False)
class ControlResult:
    control: BoundarySeries
    minimizer: FilteredData
    coefficients: np.ndarray
    condition: float
    algebraic_residual: float
    residuals: tuple[float, float]
    control_norm: float
    data_norm: float
    method: str
    gramian: Optional[np.ndarray] = None
    basis_traces: Optional[np.ndarray] = None

    def summary(self) -> dict:
        return {
            "method": self.method,
            "modes": int(self.minimizer.size),
            "condition": self.condition,
            "algebraic_residual": self.algebraic_residual,
            "residual_position": self.residuals[0],
            "residual_velocity": self.residuals[1],
            "control_norm": self.control_norm,
            "data_norm": self.data_norm,
        }


# —————————————————————————————————————————————————————————————————————————
# PROBLEM SETUP
# —————————————————————————————————————————————————————————————————————————

def target_field(target: Target, grid: Grid) -> ScalarField:
    """Grid field of a target: None (zero), an expression in x1, x2, an array or a ScalarField."""
    if target is None:
        return ScalarField(grid, np.zeros(grid.shape))
    if isinstance(target, ScalarField):
        if target.grid != grid:
            raise ValueError("Target lives on a different grid")
        return target
    if isinstance(target, str):
        try:
            expr = sp.sympify(target, locals=TARGET_LOCALS)
        except (sp.SympifyError, SyntaxError, TypeError) as e:
            raise ValueError(f"Cannot parse target expression {target!r}: {e}") from e
        symbols = (X1, X2)[: grid.dimension]
        unknown = expr.free_symbols - set(symbols)
        if unknown:
            raise ValueError(f"Target {target!r} uses unknown symbols {sorted(map(str, unknown))}")
        evaluate = sp.lambdify(symbols, expr, "numpy")
        coords = np.asarray(grid.coordinates)
        values = np.broadcast_to(np.asarray(evaluate(*coords), dtype=float), grid.shape).copy()
        return ScalarField(grid, values)
    return ScalarField(grid, np.asarray(target, dtype=float))


def control_problem(
    operator: DomainOperator,
    theta0: Target,
    theta1: Target,
    T: float,
    N: float,
    dt: float,
    basis: Optional[EigenBasis] = None,
    epsilon: Optional[float] = None,
    regime_threshold: Optional[float] = None,
    cfl: float = 0.5,
) -> ControlProblem:
    """
    Control problem over the discrete eigenmodes of `operator` with eigenvalue <= N.

    When N lies below the first eigenvalue the first mode is retained and the problem is flagged.
    """
    if T <= 0 or dt <= 0:
        raise ValueError(f"T and dt must be positive (got T={T}, dt={dt})")
    if N <= 0:
        raise ValueError(f"Threshold N must be positive, got {N}")
    if basis is None:
        basis = eigenpairs(operator, threshold=N)
    raised = bool(basis.eigenvalues.min() > N)
    if raised:
        logging.warning(f"N={N:.6g} below lambda_1={basis.eigenvalues.min():.6g}; retaining the first mode")
        N = float(basis.eigenvalues.min())
    basis = basis.truncate(N)
    if basis.size > DENSE_MODE_LIMIT:
        logging.warning(f"{basis.size} modes retained; dense assembly is limited to {DENSE_MODE_LIMIT}")
    grid = operator.grid
    regime_ok = True if regime_threshold is None else bool(N <= regime_threshold)
    if not regime_ok:
        logging.warning(f"N={N:.6g} exceeds the uniform-control threshold {regime_threshold:.6g}")
    return ControlProblem(
        operator=operator,
        basis=basis,
        theta0=target_field(theta0, grid),
        theta1=target_field(theta1, grid),
        T=float(T),
        N=float(N),
        dt=float(dt),
        epsilon=epsilon,
        regime_ok=regime_ok,
        threshold_raised=raised,
        cfl=cfl,
    )


def build_control_problem(
    scenario: Scenario,
    epsilon: float,
    theta0: Target,
    theta1: Target,
    T: float,
    N: Optional[float] = None,
    C0: float = 1.0,
    homogenized: bool = False,
) -> ControlProblem:
    """Control problem of the scenario at eps; N defaults to C0 T^(-2/3) eps^(-2/3)."""
    threshold = frequency_threshold(epsilon, T, C0)
    operator = scenario.homogenized_operator_for(epsilon) if homogenized else scenario.operator_for(epsilon)
    return control_problem(
        operator, theta0, theta1, T, threshold if N is None else N, scenario.time_step(epsilon, T),
        epsilon=None if homogenized else epsilon, regime_threshold=threshold, cfl=scenario.cfl,
    )


# —————————————————————————————————————————————————————————————————————————
# DUAL TRACES AND GRAMIAN
# —————————————————————————————————————————————————————————————————————————

def dual_trace(problem: ControlProblem, x: np.ndarray) -> BoundarySeries:
    """
    Conormal derivative on S_T of the dual solution with terminal data x.

    The backward problem is solved forward from the reflected data (phi0, -phi1) in closed
    form over the retained modes; the boundary series is reflected back in time.
    """
    terminal = problem.split(x)
    reflected = terminal.with_coefficients(terminal.a, -terminal.b)
    c, _ = modal_coefficients(reflected, problem.times)
    bop = problem.operator.boundary
    return BoundarySeries(problem.times, c @ problem.fluxes, bop.coordinates, bop.weights).reflected()


def boundary_inner(problem: ControlProblem, g: BoundarySeries, h: BoundarySeries) -> float:
    """L2(S_T) inner product: trapezoid in time, boundary quadrature in space."""
    if g.values.shape != h.values.shape:
        raise ValueError(f"Boundary series shapes differ: {g.values.shape} vs {h.values.shape}")
    per_step = (g.values * h.values) @ problem.operator.boundary.weights
    return float(trapezoid(per_step, g.times))


def linear_term(problem: ControlProblem) -> np.ndarray:
    """Coefficients of -<theta1, u(0)> + int theta0 u_t(0) in x = (alpha, beta)."""
    omega = problem.omega
    phase = omega * problem.T
    theta0 = problem.theta0_coefficients
    theta1 = problem.theta1_coefficients
    alpha = -theta1 * np.cos(phase) + theta0 * omega * np.sin(phase)
    beta = theta1 * np.sin(phase) / omega + theta0 * np.cos(phase)
    return np.concatenate([alpha, beta])


def basis_traces(problem: ControlProblem, threads: int = 1) -> np.ndarray:
    """Dual traces of the 2K unit coefficient vectors, shape (2K, steps, nb)."""
    eye = np.eye(problem.dimension)

    def column(p: int) -> np.ndarray:
        return dual_trace(problem, eye[p]).values

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return np.stack(list(pool.map(column, range(problem.dimension))))


def assemble_gramian(problem: ControlProblem, traces: np.ndarray) -> np.ndarray:
    times = np.linspace(0.0, problem.T, traces.shape[1])
    weighted = traces * problem.operator.boundary.weights
    per_step = np.einsum("ptb,qtb->pqt", weighted, traces)
    gramian = trapezoid(per_step, times, axis=2)
    return 0.5 * (gramian + gramian.T)


def gramian_apply(coeffs: FilteredData, problem: ControlProblem) -> FilteredData:
    """
    HUM map by two solves: the dual trace g of x, then the forward problem with boundary data g
    and zero initial data, projected at T:

        (Lambda x)_alpha = -<v_t(T), psi_k>,   (Lambda x)_beta = <v(T), psi_k>

    so that <Lambda x, x> = int int g^2 up to discretization.
    """
    if coeffs.basis is not problem.basis:
        raise ValueError("Coefficients were not taken over the problem basis")
    x = np.concatenate([coeffs.a, coeffs.b])
    if not np.any(x):
        return coeffs.with_coefficients(np.zeros(problem.modes), np.zeros(problem.modes))
    g = dual_trace(problem, x)
    traj = integrate(
        problem.operator, WaveState.zero(problem.grid), problem.T, problem.dt,
        boundary=g.values, sample_stride=max(1, round(problem.T / problem.dt)), cfl=problem.cfl,
    )
    final = traj.final_state
    return coeffs.with_coefficients(-problem.project(final.v.values), problem.project(final.u.values))


# —————————————————————————————————————————————————————————————————————————
# SOLVE AND VERIFY
# —————————————————————————————————————————————————————————————————————————

def verify_control(control: BoundarySeries, problem: ControlProblem) -> tuple[float, float]:
    """
    Integrate the controlled problem from (theta0, theta1) and return
    (||P_N v(T)||_{L2}, ||P_N v_t(T)||_{H^-1}) relative to the projected data norm.
    """
    scale = problem.data_norm()
    if scale == 0.0 and not np.any(control.values):
        return 0.0, 0.0
    u0 = problem.theta0.values.copy().ravel()
    u0[problem.operator.boundary.nodes] = control.values[0]
    traj = integrate(
        problem.operator,
        WaveState.from_arrays(problem.grid, u0.reshape(problem.grid.shape), problem.theta1.values),
        problem.T, problem.dt, boundary=control.values,
        sample_stride=max(1, round(problem.T / problem.dt)), cfl=problem.cfl,
    )
    final = traj.final_state
    position = float(np.linalg.norm(problem.project(final.u.values)))
    velocity = float(np.sqrt(np.sum(problem.project(final.v.values) ** 2 / problem.basis.eigenvalues)))
    if scale == 0.0:
        return position, velocity
    return position / scale, velocity / scale


def solve_control(
    problem: ControlProblem, method: str = "dense", tol: float = 1e-10, threads: int = 1
) -> ControlResult:
    """
    Minimize J over A_N x A_N.

    Args:
        problem: control problem.
        method: "dense" assembles the Gramian from 2K dual traces; "cg" applies gramian_apply iteratively.
        tol: relative tolerance of the cg iteration.
        threads: concurrent Gramian columns.

    Returns:
        ControlResult with the control g = du/dnu of the minimizing dual solution and the verification residuals.

    Raises:
        ControlError: ill-conditioned Gramian (condition > 1e12) or cg non-convergence.
    """
    if method not in ("dense", "cg"):
        raise ValueError(f"method must be 'dense' or 'cg', got {method!r}")
    rhs = -linear_term(problem)
    scale = float(np.linalg.norm(rhs))
    gramian = traces = None
    condition = float("nan")

    if method == "dense":
        if problem.modes > DENSE_MODE_LIMIT:
            raise ValueError(f"Dense mode supports at most {DENSE_MODE_LIMIT} modes, got {problem.modes}; use cg")
        traces = basis_traces(problem, threads)
        gramian = assemble_gramian(problem, traces)
        condition = float(np.linalg.cond(gramian))
        if scale == 0.0:
            # zero targets: J is minimized by x = 0 whatever the conditioning
            x = np.zeros(problem.dimension)
        elif not math.isfinite(condition) or condition > CONDITION_LIMIT:
            raise ControlError(
                f"Gramian condition number {condition:.3e} exceeds {CONDITION_LIMIT:.0e}; increase T or decrease N"
            )
        else:
            x = scipy.linalg.solve(gramian, rhs, assume_a="pos")
        algebraic = float(np.linalg.norm(gramian @ x - rhs) / scale) if scale > 0 else 0.0
    else:
        def matvec(v: np.ndarray) -> np.ndarray:
            applied = gramian_apply(problem.split(np.ravel(v)), problem)
            return np.concatenate([applied.a, applied.b])

        operator = spla.LinearOperator((problem.dimension, problem.dimension), matvec=matvec, dtype=float)
        x, info = spla.cg(operator, rhs, rtol=tol, atol=0.0, maxiter=20 * problem.dimension)
        achieved = float(np.linalg.norm(matvec(x) - rhs) / scale) if scale > 0 else 0.0
        if info != 0:
            raise ControlError(f"HUM conjugate gradient stopped (info={info}) at residual {achieved:.3e}", residual=achieved)
        algebraic = achieved

    control = dual_trace(problem, x)
    residuals = verify_control(control, problem)
    control_norm = math.sqrt(max(boundary_inner(problem, control, control), 0.0))
    logging.info(
        f"HUM control ({method}, {problem.modes} modes): |g|={control_norm:.6g}, cond={condition:.3e}, "
        f"algebraic residual {algebraic:.2e}, projection residuals ({residuals[0]:.2e}, {residuals[1]:.2e})"
    )
    return ControlResult(
        control=control,
        minimizer=problem.split(x),
        coefficients=x,
        condition=condition,
        algebraic_residual=algebraic,
        residuals=residuals,
        control_norm=control_norm,
        data_norm=problem.data_norm(),
        method=method,
        gramian=gramian,
        basis_traces=traces,
    )


def duality_check(
    result: ControlResult,
    problem: ControlProblem,
    rng: Optional[np.random.Generator] = None,
    control: Optional[BoundarySeries] = None,
) -> float:
    """
    Defect of the closing identity for a random dual datum y in A_N x A_N:

        |l(y) + <g, g_y>| / (|l(y)| + |<g, g_y>| + tiny)

    where l is the linear term of J and g_y the dual trace of y; zero when g is the HUM control.
    """
    rng = rng or np.random.default_rng(0)
    g = control if control is not None else result.control
    y = rng.standard_normal(problem.dimension)
    linear = float(linear_term(problem) @ y)
    pairing = boundary_inner(problem, g, dual_trace(problem, y))
    denominator = abs(linear) + abs(pairing) + np.finfo(float).tiny
    return abs(linear + pairing) / denominator


# —————————————————————————————————————————————————————————————————————————
# SWEEPS AND EXPORT
# —————————————————————————————————————————————————————————————————————————

def control_sweep(
    scenario: Scenario,
    epsilons: Sequence[float],
    theta0: Target,
    theta1: Target,
    T: float,
    C0: float = 1.0,
    method: str = "dense",
    tol: float = 1e-10,
    threads: int = 1,
) -> tuple[pd.DataFrame, dict]:
    """
    Controls across eps with N per threshold; the ratio data_norm / control_norm brackets the
    norm-equivalence constants c <= ratio <= C.
    """
    rows = []
    for epsilon in epsilons:
        problem = build_control_problem(scenario, epsilon, theta0, theta1, T, C0=C0)
        result = solve_control(problem, method, tol, threads)
        rows.append({
            "epsilon": epsilon,
            "N": problem.N,
            "modes": problem.modes,
            "control_norm": result.control_norm,
            "data_norm": result.data_norm,
            "ratio": result.data_norm / result.control_norm if result.control_norm > 0 else float("nan"),
            "residual_position": result.residuals[0],
            "residual_velocity": result.residuals[1],
            "condition": result.condition,
            "regime_ok": problem.regime_ok,
        })
    table = pd.DataFrame(rows)
    ratios = table["ratio"].dropna()
    summary = {
        "c": float(ratios.min()) if len(ratios) else float("nan"),
        "C": float(ratios.max()) if len(ratios) else float("nan"),
        "spread": float(ratios.max() / ratios.min()) if len(ratios) else float("nan"),
    }
    return table, summary


def control_table(result: ControlResult) -> pd.DataFrame:
    """Long table (t, boundary_node, g)."""
    series = result.control
    steps, nodes = series.values.shape
    return pd.DataFrame({
        "t": np.repeat(series.times, nodes),
        "boundary_node": np.tile(np.arange(nodes), steps),
        "g": series.values.ravel(),
    })
