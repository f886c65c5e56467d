#!/usr/bin/env python3
"""
Periodic coefficient fields A(y), computational domains and uniform grids.

A coefficient field is stored as a callable on the unit cell together with its
ellipticity constant mu and Lipschitz constant M. Closed-form entries are
parsed with sympy so that dA/dy is available analytically.
"""
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp
from scipy.interpolate import RegularGridInterpolator

from src.results_io import load_array_file

# —————————————————————————————————————————————————————————————————————————
# CONSTANTS
# —————————————————————————————————————————————————————————————————————————

Y1, Y2 = sp.symbols("y1 y2", real=True)
SYMBOLS = (Y1, Y2)
EXPRESSION_LOCALS = {"y1": Y1, "y2": Y2, "y": Y1, "pi": sp.pi}

FACE_NAMES = {
    1: (("left", 0, -1), ("right", 0, 1)),
    2: (("west", 0, -1), ("east", 0, 1), ("south", 1, -1), ("north", 1, 1)),
}

# Centroid offsets (in units of h) of the elements of one grid cell:
# the interval midpoint in 1D, the two triangles of the anti-diagonal split in 2D.
ELEMENT_CENTROIDS = {
    1: ((0.5,),),
    2: ((1.0 / 3.0, 1.0 / 3.0), (2.0 / 3.0, 2.0 / 3.0)),
}

PRESETS = {
    "constant": {"entries": None, "mu": None, "piecewise": False},
    "1D-cosine": {"entries": [["1/(2+cos(2*pi*y1))"]], "mu": 1.0 / 3.0, "piecewise": False},
    "2D-laminate": {
        "entries": [["1/(2+cos(2*pi*y1))", "0"], ["0", "1"]],
        "mu": 1.0 / 3.0,
        "piecewise": False,
    },
    "2D-smooth-checker": {
        "entries": [
            ["1/(2+cos(2*pi*y1)*cos(2*pi*y2))", "0"],
            ["0", "1/(2+cos(2*pi*y1)*cos(2*pi*y2))"],
        ],
        "mu": 1.0 / 3.0,
        "piecewise": False,
    },
    "1D-two-phase": {
        "entries": [["Piecewise((1, y1 < 1/2), (1/4, True))"]],
        "mu": 0.25,
        "piecewise": True,
    },
}

VALIDATION_SAMPLES = {1: 1025, 2: 129}


# —————————————————————————————————————————————————————————————————————————
# DOMAINS AND GRIDS
# —————————————————————————————————————————————————————————————————————————

@dataclass(frozen=True)
class Domain:
    """Interval (0, L) or rectangle (0, L1) x (0, L2) with an optional boundary part Gamma."""

    extents: tuple[float, ...]
    gamma: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.extents) not in (1, 2):
            raise ValueError(f"Domain dimension must be 1 or 2, got {len(self.extents)}")
        if any(length <= 0 for length in self.extents):
            raise ValueError(f"Domain extents must be positive: {self.extents}")
        object.__setattr__(self, "extents", tuple(float(x) for x in self.extents))
        object.__setattr__(self, "gamma", tuple(self.gamma))
        unknown = set(self.gamma) - set(self.face_names)
        if unknown:
            raise ValueError(f"Unknown boundary faces {sorted(unknown)}; available: {self.face_names}")

    @property
    def dimension(self) -> int:
        return len(self.extents)

    @property
    def diameter(self) -> float:
        """Euclidean diameter r0."""
        return math.hypot(*self.extents)

    @property
    def face_names(self) -> tuple[str, ...]:
        return tuple(name for name, _, _ in FACE_NAMES[self.dimension])

    def faces(self) -> tuple[tuple[str, int, int], ...]:
        """(name, axis, side) per face; side -1 is the face at 0, +1 the face at L."""
        return FACE_NAMES[self.dimension]

    def normal(self, face: str) -> np.ndarray:
        for name, axis, side in self.faces():
            if name == face:
                n = np.zeros(self.dimension)
                n[axis] = float(side)
                return n
        raise ValueError(f"Unknown face: {face}")

    def metadata(self) -> dict:
        return {
            "extents": list(self.extents),
            "diameter": self.diameter,
            "gamma": list(self.gamma),
            "note": "rectangular domain; the convergence and observability estimates assume a C^3 boundary",
        }


@dataclass(frozen=True)
class Grid:
    """Uniform grid; role "cell" is the periodic unit cell, role "domain" includes boundary nodes."""

    role: str
    resolution: tuple[int, ...]
    lengths: tuple[float, ...]

    def __post_init__(self):
        if self.role not in ("cell", "domain"):
            raise ValueError(f"Grid role must be 'cell' or 'domain', got {self.role!r}")
        if len(self.resolution) != len(self.lengths):
            raise ValueError("Grid resolution and lengths must have the same dimension")
        if any(n < 2 for n in self.resolution):
            raise ValueError(f"Grid needs at least 2 intervals per axis: {self.resolution}")
        object.__setattr__(self, "resolution", tuple(int(n) for n in self.resolution))
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))

    @classmethod
    def cell(cls, resolution: int | Sequence[int], dimension: int = 1) -> "Grid":
        if isinstance(resolution, (int, np.integer)):
            resolution = (int(resolution),) * dimension
        return cls("cell", tuple(resolution), (1.0,) * len(resolution))

    @classmethod
    def for_domain(cls, domain: Domain, resolution: int | Sequence[int]) -> "Grid":
        if isinstance(resolution, (int, np.integer)):
            resolution = (int(resolution),) * domain.dimension
        return cls("domain", tuple(resolution), domain.extents)

    @property
    def dimension(self) -> int:
        return len(self.resolution)

    @property
    def periodic(self) -> bool:
        return self.role == "cell"

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.resolution))

    @property
    def shape(self) -> tuple[int, ...]:
        if self.periodic:
            return self.resolution
        return tuple(n + 1 for n in self.resolution)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape (d, *shape)."""
        axes = [np.arange(m) * h for m, h in zip(self.shape, self.spacing)]
        coords = np.stack(np.meshgrid(*axes, indexing="ij"))
        coords.setflags(write=False)
        return coords

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights per node (the lumped mass)."""
        factors = []
        for m, h in zip(self.shape, self.spacing):
            w = np.full(m, h)
            if not self.periodic:
                w[0] = w[-1] = 0.5 * h
            factors.append(w)
        weights = factors[0]
        for w in factors[1:]:
            weights = np.multiply.outer(weights, w)
        weights.setflags(write=False)
        return weights

    @cached_property
    def interior_mask(self) -> np.ndarray:
        mask = np.ones(self.shape, dtype=bool)
        if not self.periodic:
            for axis in range(self.dimension):
                index = [slice(None)] * self.dimension
                index[axis] = 0
                mask[tuple(index)] = False
                index[axis] = -1
                mask[tuple(index)] = False
        mask.setflags(write=False)
        return mask

    def element_centroids(self, element: int) -> np.ndarray:
        """Centroid coordinates of element type `element` for every grid cell, shape (d, *resolution)."""
        offsets = ELEMENT_CENTROIDS[self.dimension][element]
        axes = [(np.arange(n) + c) * h for n, c, h in zip(self.resolution, offsets, self.spacing)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def describe(self) -> str:
        return f"{self.role} grid {'x'.join(str(n) for n in self.resolution)} (h={min(self.spacing):.4g})"


# —————————————————————————————————————————————————————————————————————————
# FIELDS ON GRIDS
# —————————————————————————————————————————————————————————————————————————

BOUNDARY_TAGS = ("periodic", "dirichlet-zero", "dirichlet-given")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values on a grid. kind="functional" marks a load vector (a discrete H^-1 element)."""

    grid: Grid
    values: np.ndarray
    boundary_condition: str = "dirichlet-zero"
    kind: str = "field"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValueError(f"ScalarField shape {values.shape} does not match grid shape {self.grid.shape}")
        if self.boundary_condition not in BOUNDARY_TAGS:
            raise ValueError(f"Unknown boundary condition tag: {self.boundary_condition}")
        if self.kind not in ("field", "functional"):
            raise ValueError(f"Unknown scalar field kind: {self.kind}")
        object.__setattr__(self, "values", values)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.grid, self.values + other.values, self.boundary_condition, self.kind)

    def __mul__(self, scale: float) -> "ScalarField":
        return ScalarField(self.grid, scale * self.values, self.boundary_condition, self.kind)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid
    values: np.ndarray
    boundary_condition: str = "dirichlet-zero"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        expected = (self.grid.dimension,) + self.grid.shape
        if values.shape != expected:
            raise ValueError(f"VectorField shape {values.shape} does not match {expected}")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class TensorField:
    """A(x/eps) on a grid: node values plus element-centroid values used by the discrete operator."""

    grid: Grid
    values: np.ndarray
    element_values: tuple[np.ndarray, ...]
    boundary_condition: str = "dirichlet-zero"
    symmetric: bool = True
    epsilon: Optional[float] = None
    source: Optional["PeriodicCoefficientField"] = None
    mu: float = 1.0
    name: str = ""

    def __post_init__(self):
        d = self.grid.dimension
        values = np.asarray(self.values, dtype=float)
        if values.shape != (d, d) + self.grid.shape:
            raise ValueError(f"TensorField shape {values.shape} does not match {(d, d) + self.grid.shape}")
        if len(self.element_values) != len(ELEMENT_CENTROIDS[d]):
            raise ValueError("TensorField needs one element array per element type")
        for element in self.element_values:
            if element.shape != (d, d) + self.grid.resolution:
                raise ValueError(f"Element tensor shape {element.shape} does not match {(d, d) + self.grid.resolution}")
        if self.symmetric:
            for array in (values,) + tuple(self.element_values):
                if not np.allclose(array, np.swapaxes(array, 0, 1), rtol=0.0, atol=1e-12):
                    raise ValueError("TensorField flagged symmetric but values are not symmetric")
        object.__setattr__(self, "values", values)

    @property
    def is_constant(self) -> bool:
        flat = self.values.reshape(self.values.shape[:2] + (-1,))
        return bool(np.all(flat == flat[:, :, :1]))


def constant_tensor(matrix, grid: Grid, name: str = "homogenized") -> TensorField:
    """Constant TensorField, e.g. the homogenized operator on a domain grid."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    d = grid.dimension
    if matrix.shape != (d, d):
        raise ValueError(f"Constant tensor must be {d}x{d}, got {matrix.shape}")
    eig = np.linalg.eigvalsh(0.5 * (matrix + matrix.T))
    if eig[0] <= 0:
        raise ValueError(f"Constant tensor is not positive definite (eigenvalues {eig})")
    column = matrix.reshape((d, d) + (1,) * d)
    values = np.broadcast_to(column, (d, d) + grid.shape).copy()
    elements = tuple(
        np.broadcast_to(column, (d, d) + grid.resolution).copy()
        for _ in ELEMENT_CENTROIDS[d]
    )
    boundary = "periodic" if grid.periodic else "dirichlet-zero"
    return TensorField(
        grid, values, elements, boundary, symmetric=True,
        mu=float(min(eig[0], 1.0 / eig[-1])), name=name,
    )


# —————————————————————————————————————————————————————————————————————————
# PERIODIC COEFFICIENT FIELDS
# —————————————————————————————————————————————————————————————————————————

@dataclass(frozen=True, eq=False)
class PeriodicCoefficientField:
    """A(y) on the unit cell with ellipticity constant mu and Lipschitz constant M."""

    name: str
    dimension: int
    mu: float
    lipschitz: float
    evaluator: Callable[[np.ndarray], np.ndarray]
    derivative_evaluator: Optional[Callable[[np.ndarray], np.ndarray]] = None
    piecewise_constant: bool = False
    expressions: Optional[tuple[tuple[str, ...], ...]] = None
    is_constant: bool = False

    def __call__(self, y: np.ndarray) -> np.ndarray:
        """Evaluate at points y of shape (d, ...) after reduction to the unit cell; returns (d, d, ...)."""
        y = np.asarray(y, dtype=float)
        return self.evaluator(np.mod(y, 1.0))

    @property
    def analytic(self) -> bool:
        return self.derivative_evaluator is not None

    def derivative(self, y: np.ndarray) -> np.ndarray:
        """dA/dy_k at y, shape (d_k, d, d, ...)."""
        if self.derivative_evaluator is None:
            raise ValueError(f"Coefficient field {self.name!r} has no analytic derivative")
        y = np.asarray(y, dtype=float)
        return self.derivative_evaluator(np.mod(y, 1.0))

    def describe(self) -> dict:
        return {
            "name": self.name,
            "dimension": self.dimension,
            "mu": self.mu,
            "lipschitz": self.lipschitz,
            "piecewise_constant": self.piecewise_constant,
            "expressions": [list(row) for row in self.expressions] if self.expressions else None,
        }


@dataclass(frozen=True)
class ValidationReport:
    samples: int
    symmetry_defect: float
    eigen_min: float
    eigen_max: float
    periodicity_mismatch: float
    lipschitz_quotient: float
    worst_point: tuple[float, ...]
    peak_point: tuple[float, ...]

    @property
    def is_symmetric(self) -> bool:
        return self.symmetry_defect <= 1e-12

    def admissible(self, mu: float) -> bool:
        return self.eigen_min >= mu * (1 - 1e-12) and self.eigen_max <= (1 + 1e-12) / mu

    def violation(self, mu: float) -> Optional[str]:
        """Which bound of mu <= eig <= 1/mu fails first, with the sample point where it does."""
        if self.eigen_min < mu * (1 - 1e-12):
            return f"lower bound {mu:.6g} > eigenvalue {self.eigen_min:.6g} at y={self.worst_point}"
        if self.eigen_max > (1 + 1e-12) / mu:
            return f"upper bound {1 / mu:.6g} < eigenvalue {self.eigen_max:.6g} at y={self.peak_point}"
        return None

    def as_dict(self) -> dict:
        return {
            "samples": self.samples,
            "symmetry_defect": self.symmetry_defect,
            "eigen_min": self.eigen_min,
            "eigen_max": self.eigen_max,
            "periodicity_mismatch": self.periodicity_mismatch,
            "lipschitz_quotient": self.lipschitz_quotient,
            "worst_point": list(self.worst_point),
            "peak_point": list(self.peak_point),
        }


def _parse_entry(entry) -> sp.Expr:
    if isinstance(entry, (int, float)):
        return sp.Float(entry) if isinstance(entry, float) else sp.Integer(entry)
    try:
        return sp.sympify(str(entry), locals=EXPRESSION_LOCALS)
    except (sp.SympifyError, SyntaxError, TypeError) as e:
        raise ValueError(f"Cannot parse coefficient expression {entry!r}: {e}") from e


def _lambdify_matrix(exprs: list[list[sp.Expr]], d: int) -> Callable[[np.ndarray], np.ndarray]:
    functions = [[sp.lambdify(SYMBOLS[:d], exprs[i][j], modules="numpy") for j in range(d)] for i in range(d)]

    def evaluate(y: np.ndarray) -> np.ndarray:
        shape = y.shape[1:]
        out = np.empty((d, d) + shape)
        for i in range(d):
            for j in range(d):
                out[i, j] = np.broadcast_to(np.asarray(functions[i][j](*y[:d]), dtype=float), shape)
        return out

    return evaluate


def _lambdify_derivative(exprs: list[list[sp.Expr]], d: int) -> Callable[[np.ndarray], np.ndarray]:
    per_axis = [
        _lambdify_matrix([[sp.diff(exprs[i][j], SYMBOLS[k]) for j in range(d)] for i in range(d)], d)
        for k in range(d)
    ]

    def evaluate(y: np.ndarray) -> np.ndarray:
        return np.stack([f(y) for f in per_axis])

    return evaluate


def expression_field(
    entries: Sequence[Sequence],
    name: str = "expression",
    mu: Optional[float] = None,
    lipschitz: Optional[float] = None,
    piecewise_constant: bool = False,
) -> PeriodicCoefficientField:
    """Build a field from closed-form entries in y1 (and y2); checks symmetry symbolically."""
    d = len(entries)
    if d not in (1, 2) or any(len(row) != d for row in entries):
        raise ValueError(f"Coefficient entries must form a 1x1 or 2x2 matrix, got {entries}")
    exprs = [[_parse_entry(entry) for entry in row] for row in entries]
    allowed = set(SYMBOLS[:d])
    for row in exprs:
        for expr in row:
            extra = expr.free_symbols - allowed
            if extra:
                raise ValueError(f"Expression {expr} uses symbols {sorted(map(str, extra))} outside {sorted(map(str, allowed))}")
    for i in range(d):
        for j in range(i + 1, d):
            if sp.simplify(exprs[i][j] - exprs[j][i]) != 0:
                raise ValueError(f"Coefficient is not symmetric: a{i + 1}{j + 1}={exprs[i][j]} but a{j + 1}{i + 1}={exprs[j][i]}")
    constant = all(not expr.free_symbols for row in exprs for expr in row)
    draft = PeriodicCoefficientField(
        name=name,
        dimension=d,
        mu=mu if mu is not None else 0.0,
        lipschitz=lipschitz if lipschitz is not None else 0.0,
        evaluator=_lambdify_matrix(exprs, d),
        derivative_evaluator=_lambdify_derivative(exprs, d),
        piecewise_constant=piecewise_constant,
        expressions=tuple(tuple(str(expr) for expr in row) for row in exprs),
        is_constant=constant,
    )
    return _certify(draft, mu, lipschitz)


def gridded_field(
    values: np.ndarray,
    name: str = "gridded",
    mu: Optional[float] = None,
    lipschitz: Optional[float] = None,
    check: bool = True,
) -> PeriodicCoefficientField:
    """Field from cell samples of shape (d, d, *resolution), periodic linear interpolation in between."""
    values = np.asarray(values, dtype=float)
    d = values.shape[0]
    if values.ndim != 2 + d or values.shape[1] != d:
        raise ValueError(f"Gridded coefficient must have shape (d, d, *resolution), got {values.shape}")
    padded = values
    for axis in range(d):
        first = np.take(padded, [0], axis=2 + axis)
        padded = np.concatenate([padded, first], axis=2 + axis)
    points = tuple(np.linspace(0.0, 1.0, n + 1) for n in values.shape[2:])
    interpolator = RegularGridInterpolator(points, np.moveaxis(padded, (0, 1), (-2, -1)), method="linear")

    def evaluate(y: np.ndarray) -> np.ndarray:
        shape = y.shape[1:]
        flat = np.moveaxis(np.mod(y, 1.0).reshape(d, -1), 0, -1)
        out = interpolator(flat)
        return np.moveaxis(out, (-2, -1), (0, 1)).reshape((d, d) + shape)

    draft = PeriodicCoefficientField(
        name=name,
        dimension=d,
        mu=mu if mu is not None else 0.0,
        lipschitz=lipschitz if lipschitz is not None else 0.0,
        evaluator=evaluate,
        is_constant=bool(np.ptp(values.reshape(d, d, -1), axis=2).max() == 0.0),
    )
    if not check:
        return PeriodicCoefficientField(
            name=name, dimension=d, mu=mu or 0.0, lipschitz=lipschitz or 0.0, evaluator=evaluate,
        )
    return _certify(draft, mu, lipschitz)


def load_field(path: Path, mu: Optional[float] = None, lipschitz: Optional[float] = None) -> PeriodicCoefficientField:
    """Gridded field from the coefficient array-file format (entries a11, a12, ... in row-major order)."""
    header, arrays = load_array_file(path)
    d = header["d"]
    names = [f"a{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    missing = [n for n in names if n not in arrays]
    if missing:
        raise ValueError(f"Array file {path} lacks coefficient entries {missing}")
    values = np.stack([arrays[n] for n in names]).reshape((d, d) + tuple(header["resolution"]))
    return gridded_field(values, name=Path(path).stem, mu=mu, lipschitz=lipschitz)


def _certify(draft: PeriodicCoefficientField, mu: Optional[float], lipschitz: Optional[float]) -> PeriodicCoefficientField:
    report = validate(draft, VALIDATION_SAMPLES[draft.dimension])
    if not report.is_symmetric:
        raise ValueError(f"Coefficient {draft.name!r} is not symmetric (defect {report.symmetry_defect:.3e})")
    if report.periodicity_mismatch > 1e-10 and not draft.piecewise_constant:
        raise ValueError(f"Coefficient {draft.name!r} is not 1-periodic (mismatch {report.periodicity_mismatch:.3e})")
    if report.eigen_min <= 0 or not np.isfinite(report.eigen_max):
        raise ValueError(
            f"Coefficient {draft.name!r} is not elliptic: eigenvalue {report.eigen_min:.4g} at y={report.worst_point}"
        )
    if mu is None:
        mu = min(report.eigen_min, 1.0 / report.eigen_max)
        logging.info(f"Ellipticity constant of {draft.name!r} taken from samples: mu={mu:.6g}")
    elif not report.admissible(mu):
        raise ValueError(
            f"Ellipticity violated for {draft.name!r} with mu={mu}: {report.violation(mu)}"
        )
    if draft.piecewise_constant:
        lipschitz = math.inf
    elif lipschitz is None or lipschitz < report.lipschitz_quotient:
        if lipschitz is not None:
            logging.warning(
                f"Declared Lipschitz constant {lipschitz} of {draft.name!r} tightened to sampled "
                f"quotient {report.lipschitz_quotient:.6g}"
            )
        lipschitz = report.lipschitz_quotient
    return PeriodicCoefficientField(
        name=draft.name,
        dimension=draft.dimension,
        mu=float(mu),
        lipschitz=float(lipschitz),
        evaluator=draft.evaluator,
        derivative_evaluator=draft.derivative_evaluator,
        piecewise_constant=draft.piecewise_constant,
        expressions=draft.expressions,
        is_constant=draft.is_constant,
    )


def build_field(spec, mu: Optional[float] = None, lipschitz: Optional[float] = None) -> PeriodicCoefficientField:
    """
    Build a certified coefficient field.

    Args:
        spec: preset name, or a dict with one of "preset", "entries" or "array_file".
            Presets: constant, 1D-cosine, 2D-laminate, 2D-smooth-checker, 1D-two-phase.
            For "constant", "dimension" (default 1) and "value" (default 1) apply.
        mu: declared ellipticity constant; verified against samples, or inferred when None.
        lipschitz: declared Lipschitz constant M; raised to the sampled quotient when too small.

    Returns:
        PeriodicCoefficientField passing all invariants.
    """
    if isinstance(spec, str):
        spec = {"preset": spec}
    spec = dict(spec)
    if "array_file" in spec:
        return load_field(Path(spec["array_file"]), mu=mu, lipschitz=lipschitz)
    if "entries" in spec:
        return expression_field(
            spec["entries"], name=spec.get("name", "expression"), mu=mu, lipschitz=lipschitz,
            piecewise_constant=bool(spec.get("piecewise_constant", False)),
        )
    preset = spec.get("preset")
    if preset not in PRESETS:
        raise ValueError(f"Unknown coefficient preset {preset!r}; available: {sorted(PRESETS)}")
    info = PRESETS[preset]
    entries = info["entries"]
    if preset == "constant":
        d = int(spec.get("dimension", 1))
        value = float(spec.get("value", 1.0))
        if value <= 0:
            raise ValueError(f"Constant coefficient must be positive, got {value}")
        entries = [[value if i == j else 0 for j in range(d)] for i in range(d)]
        if mu is None:
            mu = min(value, 1.0 / value)
    elif mu is None:
        mu = info["mu"]
    return expression_field(entries, name=preset, mu=mu, lipschitz=lipschitz, piecewise_constant=info["piecewise"])


def validate(field: PeriodicCoefficientField, samples: int) -> ValidationReport:
    """Sample the closed unit cell with `samples` points per axis and report the worst-case defects."""
    if samples < 2:
        raise ValueError("validate needs at least 2 samples per axis")
    d = field.dimension
    axes = [np.linspace(0.0, 1.0, samples)] * d
    y = np.stack(np.meshgrid(*axes, indexing="ij"))
    values = field.evaluator(y)

    symmetry = float(np.max(np.abs(values - np.swapaxes(values, 0, 1))))
    sym = 0.5 * (values + np.swapaxes(values, 0, 1))
    eig = np.linalg.eigvalsh(np.moveaxis(sym, (0, 1), (-2, -1)))
    low = eig[..., 0]
    worst = np.unravel_index(np.argmin(low), low.shape)
    worst_point = tuple(float(y[(k,) + worst]) for k in range(d))
    peak = np.unravel_index(np.argmax(eig[..., -1]), low.shape)
    peak_point = tuple(float(y[(k,) + peak]) for k in range(d))

    periodicity = 0.0
    lipschitz = 0.0
    step = 1.0 / (samples - 1)
    for axis in range(d):
        first = np.take(values, 0, axis=2 + axis)
        last = np.take(values, -1, axis=2 + axis)
        periodicity = max(periodicity, float(np.max(np.abs(first - last))))
        jumps = np.diff(values, axis=2 + axis)
        quotient = np.sqrt(np.sum(jumps ** 2, axis=(0, 1))) / step
        lipschitz = max(lipschitz, float(np.max(quotient)))

    return ValidationReport(
        samples=samples,
        symmetry_defect=symmetry,
        eigen_min=float(np.min(low)),
        eigen_max=float(np.max(eig[..., -1])),
        periodicity_mismatch=periodicity,
        lipschitz_quotient=lipschitz,
        worst_point=worst_point,
        peak_point=peak_point,
    )


def sample_epsilon(field: PeriodicCoefficientField, epsilon: float, grid: Grid) -> TensorField:
    """A(x/eps) at the nodes and element centroids of a domain grid."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if grid.dimension != field.dimension:
        raise ValueError(f"Grid dimension {grid.dimension} does not match field dimension {field.dimension}")
    if not field.is_constant and max(grid.spacing) > epsilon / 8 * (1 + 1e-12):
        logging.warning(
            f"Grid spacing {max(grid.spacing):.4g} does not resolve epsilon={epsilon:.4g} (h > eps/8)"
        )
    values = field(grid.coordinates / epsilon)
    elements = tuple(
        field(grid.element_centroids(k) / epsilon) for k in range(len(ELEMENT_CENTROIDS[grid.dimension]))
    )
    boundary = "periodic" if grid.periodic else "dirichlet-zero"
    return TensorField(
        grid, values, elements, boundary, symmetric=True, epsilon=float(epsilon), source=field,
        mu=field.mu, name=f"{field.name} (eps={epsilon:.6g})",
    )


def sample_cell(field: PeriodicCoefficientField, grid: Grid) -> TensorField:
    """A(y) on a periodic cell grid."""
    if not grid.periodic:
        raise ValueError("sample_cell needs a cell grid")
    values = field(grid.coordinates)
    elements = tuple(field(grid.element_centroids(k)) for k in range(len(ELEMENT_CENTROIDS[grid.dimension])))
    return TensorField(grid, values, elements, "periodic", symmetric=True, source=field, mu=field.mu, name=field.name)
