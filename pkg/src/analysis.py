#!/usr/bin/env python3
"""
Experiment layer: corrector-error and L2 convergence rates, Rellich identity
residuals, observability ratios and eigenfunction trace tables.

Every sweep returns pandas DataFrames in long format so that the runner can
write them as CSV without reshaping.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from src.coeff import Grid, ScalarField, TensorField, constant_tensor, sample_epsilon
from src.elliptic import DirichletCorrector, apply_operator, h_minus1_norm, oscillating_initial_data
from src.errors import NumericalFailure
from src.fem import as_operator, boundary_operator, gradient_norm, l2_norm
from src.scenario import Scenario
from src.spectral import (
    EigenBasis,
    FilteredData,
    diagonal_part,
    eigenpairs,
    filtered_energy,
    frequency_threshold,
    homogenized_sine_basis,
    random_filtered_data,
    synthesize,
)
from src.wave import (
    WaveState,
    WaveTrajectory,
    boundary_gradient_integral,
    energy_bound_constant,
    integrate,
    modal_trajectory,
    stable_time_step,
)

SLOPE_GATE = 0.8
R2_GATE = 0.9
FLOOR_LEVEL = 1e-9
TARGET_SAMPLES = 64
RATE_METRICS = ("energy_error",)
L2_METRICS = ("l2_error",)


# —————————————————————————————————————————————————————————————————————————
# TYPES
# —————————————————————————————————————————————————————————————————————————

@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    r_squared: float

    def passes(self, slope_gate: float = SLOPE_GATE, r2_gate: float = R2_GATE) -> bool:
        return bool(self.slope >= slope_gate and self.r_squared >= r2_gate)


@dataclass(eq=False)
class RateTable:
    """Long table (epsilon, h, dt, metric, value) with one log-log fit per gated metric."""

    rows: pd.DataFrame
    fits: pd.DataFrame
    floor: bool = False
    metadata: dict = field(default_factory=dict)

    def values(self, metric: str) -> pd.Series:
        subset = self.rows[self.rows["metric"] == metric]
        return pd.Series(subset["value"].to_numpy(), index=subset["epsilon"].to_numpy(), name=metric)

    def fit(self, metric: str) -> LogLogFit:
        row = self.fits[self.fits["metric"] == metric]
        if row.empty:
            raise KeyError(f"No fit recorded for metric {metric!r}")
        row = row.iloc[0]
        return LogLogFit(float(row["slope"]), float(row["intercept"]), float(row["r_squared"]))

    def slope(self, metric: str) -> float:
        return self.fit(metric).slope


@dataclass(eq=False)
class ObservabilityReport:
    rows: pd.DataFrame
    T: float
    C0: float

    def ratios(self, operator: str = "oscillating") -> pd.DataFrame:
        return self.rows[(self.rows["operator"] == operator) & (self.rows["trial"] >= 0)]

    def summary(self) -> pd.DataFrame:
        """min / max of the upper and lower ratios per operator over trials and epsilon."""
        regular = self.rows[self.rows["trial"] >= 0]
        return (
            regular.groupby("operator")[["upper_ratio", "lower_ratio"]]
            .agg(["min", "max"])
            .reset_index()
        )

    def lower_spread(self) -> float:
        """max over eps / min over eps of the smallest lower ratio per eps."""
        worst = self.ratios().groupby("epsilon")["lower_ratio"].min()
        return float(worst.max() / worst.min())

    def upper_spread(self) -> float:
        """max over eps / min over eps of the largest upper ratio per eps."""
        best = self.ratios().groupby("epsilon")["upper_ratio"].max()
        return float(best.max() / best.min())


def fit_loglog(epsilons: Sequence[float], values: Sequence[float]) -> LogLogFit:
    """Least-squares line through (log eps, log value)."""
    x = np.log(np.asarray(epsilons, dtype=float))
    y = np.asarray(values, dtype=float)
    if len(x) < 2 or np.any(~np.isfinite(y)) or np.any(y <= 0):
        return LogLogFit(float("nan"), float("nan"), float("nan"))
    y = np.log(y)
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    spread = np.sum((y - y.mean()) ** 2)
    r_squared = 1.0 - float(np.sum(residual**2) / spread) if spread > 0 else 1.0
    return LogLogFit(float(slope), float(intercept), r_squared)


def _check_epsilons(epsilons: Sequence[float]) -> list[float]:
    epsilons = [float(e) for e in epsilons]
    if not epsilons or any(e <= 0 for e in epsilons):
        raise ValueError(f"epsilons must be positive, got {epsilons}")
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError(f"epsilons must be strictly decreasing, got {epsilons}")
    return epsilons


def _fit_rows(rows: pd.DataFrame, metrics: Sequence[str], floor: bool) -> pd.DataFrame:
    fits = []
    for metric in metrics:
        subset = rows[rows["metric"] == metric]
        fit = LogLogFit(float("nan"), float("nan"), float("nan")) if floor else fit_loglog(subset["epsilon"], subset["value"])
        fits.append({
            "metric": metric,
            "slope": fit.slope,
            "intercept": fit.intercept,
            "r_squared": fit.r_squared,
            "floor": floor,
            "passes": (not floor) and fit.passes(),
        })
    return pd.DataFrame(fits, columns=["metric", "slope", "intercept", "r_squared", "floor", "passes"])


def _sweep(epsilons: list[float], run: Callable[[float], list[dict]], threads: int, label: str) -> list[dict]:
    """Run per-eps work in order; on failure raise NumericalFailure carrying the rows finished so far."""
    rows: list[dict] = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [pool.submit(run, eps) for eps in epsilons]
        for eps, future in zip(epsilons, futures):
            try:
                rows.extend(future.result())
            except (NumericalFailure, ArithmeticError) as e:
                for pending in futures:
                    pending.cancel()
                logging.error(f"{label} failed at eps={eps:.6g}: {e}")
                raise NumericalFailure(f"{label} failed at eps={eps:.6g}: {e}", partial=pd.DataFrame(rows)) from e
    return rows


# —————————————————————————————————————————————————————————————————————————
# SMOOTH MODAL DATA
# —————————————————————————————————————————————————————————————————————————

@dataclass(frozen=True)
class ModalData:
    """Initial data sum a_k psi_k, sum b_k psi_k over closed-form homogenized modes."""

    modes: tuple[tuple[int, ...], ...]
    a: tuple[float, ...]
    b: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.modes) == len(self.a) == len(self.b)) or not self.modes:
            raise ValueError("ModalData needs equally many modes, a and b coefficients")

    @classmethod
    def from_dict(cls, data: dict) -> "ModalData":
        modes = tuple(tuple(int(m) for m in np.atleast_1d(index)) for index in data["modes"])
        a = tuple(float(x) for x in data.get("a", [1.0] * len(modes)))
        b = tuple(float(x) for x in data.get("b", [0.0] * len(modes)))
        return cls(modes, a, b)

    def on(self, basis: EigenBasis) -> FilteredData:
        return FilteredData(
            float(basis.eigenvalues.max()), np.array(self.a), np.array(self.b), basis, np.arange(basis.size)
        )


def _homogenized_data(scenario: Scenario, epsilon: float, data: ModalData) -> FilteredData:
    basis = homogenized_sine_basis(
        scenario.homogenized_for(epsilon), scenario.domain, scenario.grid_for(epsilon), modes=data.modes
    )
    return data.on(basis)


def _stride(T: float, dt: float) -> int:
    return max(1, round(T / dt) // TARGET_SAMPLES)


def _pointwise_norm(values: np.ndarray, grid: Grid) -> float:
    """L2 norm of the Frobenius norm of a tensor-valued field (components first)."""
    squared = np.sum(values.reshape((-1,) + grid.shape) ** 2, axis=0)
    return float(np.sqrt(np.sum(np.asarray(grid.weights) * squared)))


def _modal_sum(coefficients: np.ndarray, fields: np.ndarray) -> np.ndarray:
    return np.tensordot(coefficients, fields, axes=1)


# —————————————————————————————————————————————————————————————————————————
# CORRECTOR ERROR
# —————————————————————————————————————————————————————————————————————————

def identity_corrector(grid: Grid, epsilon: float = 1.0) -> DirichletCorrector:
    """Phi = x; turns corrector_error into the plain trajectory difference."""
    d = grid.dimension
    bop = boundary_operator(grid)
    gradients = np.broadcast_to(np.eye(d), (bop.size, d, d)).copy()
    return DirichletCorrector(
        float(epsilon), grid, np.asarray(grid.coordinates).copy(), np.zeros(d), gradients, np.ones(bop.size), np.zeros(d)
    )


def corrector_error(traj_eps: WaveTrajectory, traj_hom: WaveTrajectory, phi: DirichletCorrector) -> pd.DataFrame:
    """
    Energy norms of w = u_eps - u_0 - (Phi_k - x_k) d_k u_0 at the common sample times.

    Returns:
        DataFrame with columns t, grad_w, dt_w, total.
    """
    grid = traj_eps.grid
    if traj_hom.grid != grid or phi.grid != grid:
        raise ValueError("Trajectories and Dirichlet corrector must share one grid")
    if traj_eps.sample_times.shape != traj_hom.sample_times.shape or not np.allclose(
        traj_eps.sample_times, traj_hom.sample_times, rtol=0.0, atol=1e-12
    ):
        raise ValueError("Trajectories were sampled at different times")
    deviation = phi.phi - np.asarray(grid.coordinates)
    gradients = traj_hom.sample_gradients()
    velocity_gradients = traj_hom.sample_velocity_gradients()
    rows = []
    for i, t in enumerate(traj_eps.sample_times):
        w = traj_eps.displacements[i] - traj_hom.displacements[i] - np.sum(deviation * gradients[i], axis=0)
        wt = traj_eps.velocities[i] - traj_hom.velocities[i] - np.sum(deviation * velocity_gradients[i], axis=0)
        grad_w = gradient_norm(w, grid)
        dt_w = l2_norm(wt, grid)
        rows.append({"t": float(t), "grad_w": grad_w, "dt_w": dt_w, "total": grad_w + dt_w})
    return pd.DataFrame(rows, columns=["t", "grad_w", "dt_w", "total"])


def initial_data_scale(fd: FilteredData) -> float:
    """||grad^2 phi0|| + ||grad phi1|| of closed-form modal data."""
    basis = fd.basis
    if basis.hessians is None:
        raise ValueError("Second derivatives need a closed-form basis")
    hessian = _modal_sum(fd.a, basis.hessians[fd.indices])
    gradient = _modal_sum(fd.b, basis.gradients[fd.indices])
    return _pointwise_norm(hessian, basis.grid) + _pointwise_norm(gradient, basis.grid)


def estimate_rhs(fd: FilteredData, times: np.ndarray, epsilon: float, mismatch: float = 0.0) -> float:
    """
    Right side of the energy estimate for w with unit constants, by modal differentiation:

        mismatch + eps (||D^2 phi0|| + ||D phi1||) + eps sup ||D^2 u0||
        + eps sqrt(T) sup || |d_t D^2 u0| + |d_t^2 D u0| ||^(1/2) sup ||D^2 u0||^(1/2)
    """
    basis = fd.basis
    grid = basis.grid
    lam = fd.eigenvalues
    omega = np.sqrt(lam)
    hessians = basis.hessians[fd.indices]
    gradients = basis.gradients[fd.indices]
    second, mixed = 0.0, 0.0
    for t in times:
        c = fd.a * np.cos(omega * t) + fd.b / omega * np.sin(omega * t)
        dc = -fd.a * omega * np.sin(omega * t) + fd.b * np.cos(omega * t)
        second = max(second, _pointwise_norm(_modal_sum(c, hessians), grid))
        dt_hessian = _modal_sum(dc, hessians).reshape((-1,) + grid.shape)
        ddt_gradient = _modal_sum(-lam * c, gradients).reshape((-1,) + grid.shape)
        pointwise = np.sqrt(np.sum(dt_hessian**2, axis=0)) + np.sqrt(np.sum(ddt_gradient**2, axis=0))
        mixed = max(mixed, float(np.sqrt(np.sum(np.asarray(grid.weights) * pointwise**2))))
    T = float(times[-1])
    return (
        mismatch
        + epsilon * initial_data_scale(fd)
        + epsilon * second
        + epsilon * math.sqrt(T) * math.sqrt(mixed) * math.sqrt(second)
    )


def _rate_rows(scenario: Scenario, epsilon: float, data: ModalData, T: float) -> list[dict]:
    grid = scenario.grid_for(epsilon)
    ahat = scenario.homogenized_for(epsilon)
    fd = _homogenized_data(scenario, epsilon, data)
    phi0, phi1 = synthesize(fd)
    phi_eps0 = oscillating_initial_data(phi0, scenario.operator_for(epsilon), epsilon, ahat, scenario.tol)

    dt = scenario.time_step(epsilon, T)
    stride = _stride(T, dt)
    op = scenario.operator_for(epsilon)
    traj_eps = integrate(op, WaveState(0.0, phi_eps0, phi1), T, dt, sample_stride=stride, cfl=scenario.cfl)
    traj_hom = modal_trajectory(fd.basis, fd, T, dt, sample_stride=stride, record_traces=False)
    errors = corrector_error(traj_eps, traj_hom, scenario.dirichlet_for(epsilon))

    homogenized = scenario.homogenized_operator_for(epsilon)
    defect = apply_operator(op, phi_eps0).values - apply_operator(homogenized, phi0).values
    mismatch = h_minus1_norm(ScalarField(grid, defect, kind="functional"), scenario.domain, scenario.tol)
    sup_error = float(errors["total"].max())
    rhs = estimate_rhs(fd, traj_hom.sample_times, epsilon, mismatch)
    initial_w = float(errors["total"].iloc[0])
    values = {
        "energy_error": sup_error,
        "initial_w": initial_w,
        "initial_w_ratio": initial_w / (epsilon * initial_data_scale(fd)),
        "estimate_ratio": sup_error / rhs,
        "energy_constant": energy_bound_constant(traj_eps),
        "data_mismatch": mismatch,
    }
    h = max(grid.spacing)
    logging.info(f"   eps={epsilon:.6g}: sup energy error {sup_error:.4e}, estimate ratio {values['estimate_ratio']:.3g}")
    return [{"epsilon": epsilon, "h": h, "dt": traj_eps.dt, "metric": k, "value": v} for k, v in values.items()]


def rate_sweep(
    scenario: Scenario,
    epsilons: Sequence[float],
    data: ModalData,
    T: float,
    threads: int = 1,
) -> RateTable:
    """
    Corrector-error sweep over eps with smooth homogenized data and matched oscillating data.

    Args:
        scenario: coefficient, domain and grid rules.
        epsilons: strictly decreasing periods.
        data: closed-form modal data phi0, phi1 of the homogenized problem.
        T: final time.
        threads: concurrent eps rows.

    Returns:
        RateTable with metrics energy_error (fitted), initial_w, initial_w_ratio,
        estimate_ratio, energy_constant and data_mismatch.

    Raises:
        NumericalFailure: when any eps fails; `partial` holds the finished rows.
    """
    epsilons = _check_epsilons(epsilons)
    rows = pd.DataFrame(
        _sweep(epsilons, lambda eps: _rate_rows(scenario, eps, data, T), threads, "Rate sweep"),
        columns=["epsilon", "h", "dt", "metric", "value"],
    )
    errors = rows[rows["metric"] == "energy_error"]["value"]
    floor = scenario.field.is_constant or bool(errors.max() < FLOOR_LEVEL)
    if floor:
        logging.info("   Errors at the discretization floor; slope fit skipped")
    return RateTable(rows, _fit_rows(rows, RATE_METRICS, floor), floor, {"T": T, "modes": [list(m) for m in data.modes]})


# —————————————————————————————————————————————————————————————————————————
# L2 RATE
# —————————————————————————————————————————————————————————————————————————

def _l2_error(scenario: Scenario, epsilon: float, fd: FilteredData, T: float) -> tuple[float, float]:
    """sup_t ||u_eps - u_0||_L2 with u_eps the time derivative of the antiderivative solution."""
    phi0, phi1 = synthesize(fd)
    dt = scenario.time_step(epsilon, T)
    stride = _stride(T, dt)
    antiderivative = integrate(
        scenario.operator_for(epsilon),
        WaveState(0.0, ScalarField(phi0.grid, np.zeros(phi0.grid.shape)), phi0),
        T, dt, forcing=phi1, sample_stride=stride, cfl=scenario.cfl,
    )
    reference = modal_trajectory(fd.basis, fd, T, dt, sample_stride=stride, record_traces=False)
    error = max(
        l2_norm(v - u, phi0.grid) for v, u in zip(antiderivative.velocities, reference.displacements)
    )
    return float(error), antiderivative.dt


def l2_rate(
    scenario: Scenario,
    epsilons: Sequence[float],
    data: ModalData,
    T: float,
    compare_doubled_T: bool = True,
    threads: int = 1,
) -> RateTable:
    """
    L2 error sweep with the same data for both operators.

    u_eps is recovered as d_t v_eps where v_eps solves the wave equation with
    forcing phi1 and initial data (0, phi0).
    """
    epsilons = _check_epsilons(epsilons)

    def run(epsilon: float) -> list[dict]:
        fd = _homogenized_data(scenario, epsilon, data)
        h = max(scenario.grid_for(epsilon).spacing)
        error, dt = _l2_error(scenario, epsilon, fd, T)
        rows = [{"epsilon": epsilon, "h": h, "dt": dt, "metric": "l2_error", "value": error}]
        if compare_doubled_T:
            doubled, dt2 = _l2_error(scenario, epsilon, fd, 2.0 * T)
            rows.append({"epsilon": epsilon, "h": h, "dt": dt2, "metric": "l2_error_2T", "value": doubled})
            rows.append({
                "epsilon": epsilon, "h": h, "dt": dt2, "metric": "l2_ratio_2T",
                "value": doubled / error if error > 0 else float("nan"),
            })
        logging.info(f"   eps={epsilon:.6g}: sup L2 error {error:.4e}")
        return rows

    rows = pd.DataFrame(_sweep(epsilons, run, threads, "L2 rate sweep"), columns=["epsilon", "h", "dt", "metric", "value"])
    errors = rows[rows["metric"] == "l2_error"]["value"]
    floor = scenario.field.is_constant or bool(errors.max() < FLOOR_LEVEL)
    return RateTable(rows, _fit_rows(rows, L2_METRICS, floor), floor, {"T": T, "doubled_T": compare_doubled_T})


# —————————————————————————————————————————————————————————————————————————
# RELLICH IDENTITY
# —————————————————————————————————————————————————————————————————————————

def _default_multiplier(grid: Grid, x0: Optional[np.ndarray]):
    center = np.array([L / 2.0 for L in grid.lengths]) if x0 is None else np.asarray(x0, dtype=float)
    d = grid.dimension

    def h_field(x: np.ndarray) -> np.ndarray:
        return x - center.reshape((d,) + (1,) * (x.ndim - 1))

    def h_jacobian(x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.eye(d).reshape((d, d) + (1,) * (x.ndim - 1)), (d, d) + x.shape[1:])

    return h_field, h_jacobian


def rellich_terms(
    traj: WaveTrajectory,
    a: TensorField,
    h_field: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    h_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    mode: str = "full",
    x0: Optional[np.ndarray] = None,
) -> dict[str, float]:
    """
    Both sides of the Rellich identity for a source-free trajectory vanishing on the boundary:

        int int_{bdry} <h,n> a grad u . grad u
          = int int div(h) (u_t^2 - a grad u . grad u) - int int h_k (d_k a) grad u . grad u
            + 2 int int (d_j h_k) a_ij d_k u d_i u + [int h . grad u u_t]_0^T

    Args:
        traj: trajectory sampled at every step with boundary traces.
        a: coefficient tensor on the trajectory grid.
        h_field: multiplier h(x), x of shape (d, ...); default x - x0.
        h_jacobian: dh_k/dx_j as (k, j, ...); default identity.
        mode: "full" evaluates the coefficient-derivative term, "homogenized" requires a constant tensor.
        x0: center of the default multiplier (domain center when None).

    Returns:
        dict with the individual terms, "lhs" and "rhs".
    """
    grid = traj.grid
    if a.grid != grid:
        raise ValueError("Trajectory and coefficient tensor live on different grids")
    if traj.boundary_gradients is None:
        raise ValueError("Rellich terms need boundary traces; integrate with record_traces=True")
    if len(traj.sample_indices) != len(traj.times):
        raise ValueError("Rellich terms need every time step sampled (sample_stride=1)")
    if mode not in ("full", "homogenized"):
        raise ValueError(f"mode must be 'full' or 'homogenized', got {mode!r}")
    if mode == "homogenized" and not a.is_constant:
        raise ValueError("homogenized mode needs a constant coefficient tensor")
    if h_field is None:
        h_field, default_jacobian = _default_multiplier(grid, x0)
        h_jacobian = h_jacobian or default_jacobian
    d = grid.dimension
    x = np.asarray(grid.coordinates)
    h = h_field(x)
    if h_jacobian is not None:
        jacobian = h_jacobian(x)
    else:
        jacobian = np.stack([np.stack(np.gradient(h[k], *grid.spacing, edge_order=2)) for k in range(d)])
    divergence = np.trace(jacobian, axis1=0, axis2=1)
    weights = np.asarray(grid.weights)
    A = a.values

    derivative = None
    if mode == "full" and not a.is_constant:
        source = a.source
        if source is None or a.epsilon is None:
            raise ValueError("full mode needs a sampled periodic coefficient (use sample_epsilon)")
        if source.piecewise_constant:
            raise ValueError(f"Coefficient {source.name!r} is piecewise constant; the identity needs dA/dx")
        if source.analytic:
            derivative = source.derivative(x / a.epsilon) / a.epsilon
        else:
            derivative = np.stack([np.gradient(A, grid.spacing[k], axis=2 + k, edge_order=2) for k in range(d)])

    gradients = traj.sample_gradients()
    velocities = traj.velocities
    divergence_series, derivative_series, jacobian_series = [], [], []
    for grad, v in zip(gradients, velocities):
        flux = np.einsum("ij...,j...->i...", A, grad)
        a_grad_sq = np.sum(flux * grad, axis=0)
        divergence_series.append(float(np.sum(weights * divergence * (v**2 - a_grad_sq))))
        if derivative is not None:
            dq = np.einsum("kij...,j...,i...->k...", derivative, grad, grad)
            derivative_series.append(float(np.sum(weights * np.sum(h * dq, axis=0))))
        else:
            derivative_series.append(0.0)
        # (d_j h_k) a_ij d_k u d_i u = (d_j h_k) d_k u (a grad u)_j
        jacobian_series.append(float(np.sum(weights * np.einsum("kj...,k...,j...->...", jacobian, grad, flux))))

    def time_boundary(i: int) -> float:
        return float(np.sum(weights * np.sum(h * gradients[i], axis=0) * velocities[i]))

    bop = boundary_operator(grid)
    boundary_nodal = A.reshape(d, d, -1)[:, :, bop.nodes]
    h_boundary = h.reshape(d, -1)[:, bop.nodes]
    boundary_series = np.zeros(len(traj.times))
    quadratic = np.einsum("tbi,ijb,tbj->tb", traj.boundary_gradients, boundary_nodal, traj.boundary_gradients)
    for name, weight in bop.face_weights.items():
        boundary_series += quadratic @ (weight * (bop.face_normals[name] @ h_boundary))

    times = traj.times
    terms = {
        "boundary": float(trapezoid(boundary_series, times)),
        "divergence": float(trapezoid(divergence_series, times)),
        "coefficient_derivative": -float(trapezoid(derivative_series, times)),
        "jacobian": 2.0 * float(trapezoid(jacobian_series, times)),
        "time_boundary": time_boundary(-1) - time_boundary(0),
    }
    terms["lhs"] = terms["boundary"]
    terms["rhs"] = terms["divergence"] + terms["coefficient_derivative"] + terms["jacobian"] + terms["time_boundary"]
    return terms


def rellich_residual(
    traj: WaveTrajectory,
    a: TensorField,
    h_field: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    h_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    mode: str = "full",
    floor: float = 1e-300,
) -> float:
    """|LHS - RHS| / (|LHS| + |RHS| + floor); 0 for the zero trajectory."""
    terms = rellich_terms(traj, a, h_field, h_jacobian, mode)
    lhs, rhs = terms["lhs"], terms["rhs"]
    if lhs == 0.0 and rhs == 0.0:
        return 0.0
    return abs(lhs - rhs) / (abs(lhs) + abs(rhs) + floor)


def _rellich_row(operator: str, level: int, traj: WaveTrajectory, tensor: TensorField, mode: str) -> dict:
    terms = rellich_terms(traj, tensor, mode=mode)
    lhs, rhs = terms["lhs"], terms["rhs"]
    residual = 0.0 if lhs == rhs == 0.0 else abs(lhs - rhs) / (abs(lhs) + abs(rhs))
    logging.info(f"   {operator} level {level}: Rellich residual {residual:.3e}")
    return {
        "operator": operator, "level": level, "h": max(traj.grid.spacing), "dt": traj.dt,
        "lhs": lhs, "rhs": rhs, "residual": residual,
    }


def rellich_refinement(
    scenario: Scenario, levels: Sequence[int], T: float, epsilon: float
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """
    Rellich residuals under simultaneous (h, dt) refinement.

    Level n means n grid intervals per unit length. The homogenized rows follow the closed-form
    first eigenmode of A_hat; for a smooth oscillating coefficient the discrete first eigenmode of
    the eps operator is integrated as well.

    Returns:
        (rows per operator and level; observed order per operator from a log-log fit in h).
    """
    levels = [int(n) for n in levels]
    if len(levels) < 2 or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"levels must be at least two strictly increasing resolutions, got {levels}")
    domain = scenario.domain
    ahat = scenario.homogenized_for(epsilon)
    diagonal = np.diag(diagonal_part(ahat))
    first = ModalData(((1,) * domain.dimension,), (1.0,), (0.0,))
    smooth = not (scenario.field.is_constant or scenario.field.piecewise_constant)

    rows = []
    for level in levels:
        grid = Grid.for_domain(domain, [max(2, round(level * L)) for L in domain.extents])
        tensor = constant_tensor(diagonal, grid)
        fd = first.on(homogenized_sine_basis(diagonal, domain, grid, modes=first.modes))
        dt = stable_time_step(tensor, T, scenario.cfl)
        traj = modal_trajectory(fd.basis, fd, T, dt, sample_stride=1, record_traces=True)
        rows.append(_rellich_row("homogenized", level, traj, tensor, "homogenized"))

        if smooth:
            tensor = sample_epsilon(scenario.field, epsilon, grid)
            op = as_operator(tensor)
            mode = eigenpairs(op, count=1, tol=scenario.tol).modes[0]
            traj = integrate(
                op, WaveState.from_arrays(grid, mode), T, stable_time_step(op, T, scenario.cfl),
                sample_stride=1, record_traces=True, cfl=scenario.cfl,
            )
            rows.append(_rellich_row("oscillating", level, traj, tensor, "full"))

    table = pd.DataFrame(rows, columns=["operator", "level", "h", "dt", "lhs", "rhs", "residual"])
    orders = []
    for operator, subset in table.groupby("operator", sort=False):
        fit = fit_loglog(subset["h"], subset["residual"])
        orders.append({"operator": operator, "order": fit.slope, "r_squared": fit.r_squared})
    return table, pd.DataFrame(orders, columns=["operator", "order", "r_squared"])


# —————————————————————————————————————————————————————————————————————————
# OBSERVABILITY
# —————————————————————————————————————————————————————————————————————————

def observability_row(traj: WaveTrajectory, initial_energy: float) -> dict:
    """Upper ratio (1/T) int int |grad u|^2 / E0, its reciprocal and the partial-boundary ratio."""
    T = traj.T
    boundary = boundary_gradient_integral(traj)
    upper = boundary / T / initial_energy
    row = {
        "initial_energy": initial_energy,
        "boundary_integral": boundary / T,
        "upper_ratio": upper,
        "lower_ratio": 1.0 / upper if upper > 0 else float("inf"),
        "gamma_ratio": float("nan"),
    }
    if traj.gamma_grad_sq is not None:
        row["gamma_ratio"] = boundary_gradient_integral(traj, partial=True) / T / initial_energy
    return row


def _initial_energy(u: ScalarField, v: ScalarField) -> float:
    return gradient_norm(u.values, u.grid) ** 2 + l2_norm(v.values, v.grid) ** 2


def observe_trial(op, fd: FilteredData, T: float, dt: float, gamma: Sequence[str] = (), cfl: float = 0.5) -> Optional[dict]:
    """Integrate filtered data with the given operator and return the ratio row (None for zero data)."""
    u, v = synthesize(fd)
    initial = _initial_energy(u, v)
    if initial == 0.0:
        return None
    traj = integrate(op, WaveState(0.0, u, v), T, dt, sample_stride=max(1, round(T / dt)), gamma=gamma, cfl=cfl)
    return observability_row(traj, initial)


def _threshold_basis(basis_builder, N: float) -> tuple[EigenBasis, float, bool]:
    basis = basis_builder(N)
    raised = bool(basis.eigenvalues.min() > N)
    if raised:
        N = float(basis.eigenvalues.min())
        logging.warning(f"Threshold below the first eigenvalue; raised to lambda_1 = {N:.6g} to keep one mode")
    return basis, N, raised


def observability_ratios(
    scenario: Scenario,
    epsilons: Sequence[float],
    T: float,
    C0: float = 1.0,
    trials: int = 8,
    seed: int = 0,
    fixed_threshold: Optional[float] = None,
    include_high_mode: bool = True,
    threads: int = 1,
) -> ObservabilityReport:
    """
    Ratios of the boundary observation to the initial energy for random filtered data.

    Per eps: trials of the oscillating operator with N = C0 T^(-2/3) eps^(-2/3) (or fixed_threshold),
    the same trials for the homogenized operator (closed-form modes, baseline) and an unfiltered
    eigenmode with eps lambda ~ 1 (reported, never gated).
    """
    epsilons = _check_epsilons(epsilons)
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    long_time = bool(T >= C0 * scenario.domain.diameter)
    gamma = scenario.domain.gamma

    def run(epsilon: float) -> list[dict]:
        op = scenario.operator_for(epsilon)
        grid = scenario.grid_for(epsilon)
        dt = scenario.time_step(epsilon, T)
        N = fixed_threshold if fixed_threshold is not None else frequency_threshold(epsilon, T, C0)
        basis, N_used, raised = _threshold_basis(lambda n: eigenpairs(op, threshold=n, tol=scenario.tol), N)
        hom_basis, _, _ = _threshold_basis(
            lambda n: homogenized_sine_basis(scenario.homogenized_for(epsilon), scenario.domain, grid, threshold=n), N
        )
        common = {"epsilon": epsilon, "T": T, "long_time": long_time, "threshold_raised": raised}
        rows = []
        for trial in range(trials):
            rng = np.random.default_rng([seed, trial])
            fd = random_filtered_data(basis, N_used, rng)
            row = observe_trial(op, fd, T, dt, gamma, scenario.cfl)
            if row is None:
                logging.warning(f"Trial {trial} at eps={epsilon:.6g} has zero initial data; skipped")
                continue
            rows.append({**common, "operator": "oscillating", "N": N_used, "trial": trial, "modes": fd.size, **row})

            rng = np.random.default_rng([seed, trial])
            hom = random_filtered_data(hom_basis, max(N_used, float(hom_basis.eigenvalues.min())), rng)
            traj = modal_trajectory(hom_basis, hom, T, dt, sample_stride=max(1, round(T / dt)), record_traces=False, gamma=gamma)
            u, v = synthesize(hom)
            rows.append({
                **common, "operator": "homogenized", "N": N_used, "trial": trial, "modes": hom.size,
                **observability_row(traj, _initial_energy(u, v)),
            })
        if include_high_mode:
            high = eigenpairs(op, threshold=1.0 / epsilon, tol=scenario.tol)
            k = int(np.argmin(np.abs(epsilon * high.eigenvalues - 1.0)))
            single = FilteredData(float(high.eigenvalues[k]), np.ones(1), np.zeros(1), high, np.array([k]))
            u, v = synthesize(single)
            single = single.scaled(1.0 / math.sqrt(_initial_energy(u, v)))
            row = observe_trial(op, single, T, dt, gamma, scenario.cfl)
            rows.append({
                **common, "operator": "high-mode", "N": float(high.eigenvalues[k]), "trial": -1, "modes": 1, **row,
            })
        logging.info(
            f"   eps={epsilon:.6g}: N={N_used:.4g}, {basis.size} modes, "
            f"upper ratios in [{min(r['upper_ratio'] for r in rows):.4g}, {max(r['upper_ratio'] for r in rows):.4g}]"
        )
        return rows

    columns = [
        "epsilon", "N", "trial", "upper_ratio", "lower_ratio", "gamma_ratio", "operator", "modes",
        "initial_energy", "boundary_integral", "T", "long_time", "threshold_raised",
    ]
    rows = pd.DataFrame(_sweep(epsilons, run, threads, "Observability sweep"), columns=columns)
    if not long_time:
        logging.warning(f"T={T:.4g} < C0 * r0 = {C0 * scenario.domain.diameter:.4g}; lower ratios are not gated below the observability time")
    return ObservabilityReport(rows, T, C0)


def observability_time_sweep(
    scenario: Scenario,
    T_values: Sequence[float],
    epsilon: float,
    N: float,
    trials: int = 4,
    seed: int = 0,
) -> tuple[pd.DataFrame, LogLogFit]:
    """
    Homogenized int int |grad u0|^2 / E0 against T / r0 + 1 with closed-form modes.

    Returns:
        (rows with T, trial, ratio, scaled_time; linear fit of ratio on scaled_time stored as
        slope / intercept / r_squared).
    """
    if not T_values or any(T <= 0 for T in T_values):
        raise ValueError(f"T values must be positive, got {T_values}")
    grid = scenario.grid_for(epsilon)
    basis, N, _ = _threshold_basis(
        lambda n: homogenized_sine_basis(scenario.homogenized_for(epsilon), scenario.domain, grid, threshold=n), N
    )
    r0 = scenario.domain.diameter
    rows = []
    for T in T_values:
        dt = scenario.time_step(epsilon, T)
        for trial in range(trials):
            fd = random_filtered_data(basis, N, np.random.default_rng([seed, trial]))
            traj = modal_trajectory(basis, fd, T, dt, sample_stride=max(1, round(T / dt)), record_traces=False)
            rows.append({
                "T": T, "trial": trial, "scaled_time": T / r0 + 1.0,
                "ratio": boundary_gradient_integral(traj) / filtered_energy(fd),
            })
    table = pd.DataFrame(rows, columns=["T", "trial", "scaled_time", "ratio"])
    slope, intercept = np.polyfit(table["scaled_time"], table["ratio"], 1)
    predicted = slope * table["scaled_time"] + intercept
    spread = float(np.sum((table["ratio"] - table["ratio"].mean()) ** 2))
    r_squared = 1.0 - float(np.sum((table["ratio"] - predicted) ** 2)) / spread if spread > 0 else 1.0
    return table, LogLogFit(float(slope), float(intercept), r_squared)


# —————————————————————————————————————————————————————————————————————————
# TRACE TABLE
# —————————————————————————————————————————————————————————————————————————

def eigen_trace_table(basis: EigenBasis, epsilon: float) -> pd.DataFrame:
    """Rows (k, lambda, trace, ratio, in_range) with ratio = trace / (lambda (1 + eps lambda))."""
    lam = basis.eigenvalues
    trace = basis.boundary_grad_sq
    return pd.DataFrame({
        "k": np.arange(1, basis.size + 1),
        "lambda": lam,
        "trace": trace,
        "ratio": trace / (lam * (1.0 + epsilon * lam)),
        "in_range": epsilon**2 * lam <= 1.0,
    })


def determinant_table(scenario: Scenario, epsilons: Sequence[float]) -> pd.DataFrame:
    """Dirichlet corrector diagnostics per eps: min |det grad Phi| on the boundary and sup |Phi - x| against 2 eps sup |chi|."""
    rows = []
    for epsilon in _check_epsilons(epsilons):
        corrector = scenario.dirichlet_for(epsilon)
        rows.append({
            "epsilon": epsilon,
            "min_abs_det": corrector.min_abs_determinant,
            "max_deviation": float(np.max(corrector.deviation)),
            "bound": float(np.max(corrector.bound)),
            "within_bound": corrector.within_bound(),
        })
    return pd.DataFrame(rows, columns=["epsilon", "min_abs_det", "max_deviation", "bound", "within_bound"])
