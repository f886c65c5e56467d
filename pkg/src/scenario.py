#!/usr/bin/env python3
"""
Scenario: a coefficient field on a domain together with the grid and time-step
rules applied at every epsilon of a sweep. Cell solutions and operators are
cached per resolution so that sweeps reuse them across threads.
"""
import dataclasses
import logging
import math
import threading
from dataclasses import dataclass
from typing import Optional

from src.cell import CorrectorSet, HomogenizedTensor, homogenize, solve_correctors
from src.coeff import Domain, Grid, PeriodicCoefficientField, TensorField, build_field, constant_tensor, sample_epsilon
from src.elliptic import DirichletCorrector, dirichlet_correctors
from src.fem import DomainOperator, as_operator
from src.wave import stable_time_step

MIN_NODES_PER_EPS = 8


@dataclass(eq=False)
class Scenario:
    field: PeriodicCoefficientField
    domain: Domain
    nodes_per_eps: int = 8
    min_resolution: int = 32
    cell_resolution: Optional[int] = None
    cfl: float = 0.5
    tol: float = 1e-10
    _cache: dict = dataclasses.field(default_factory=dict, repr=False)
    _lock: threading.RLock = dataclasses.field(default_factory=threading.RLock, repr=False)

    def __post_init__(self):
        if self.field.dimension != self.domain.dimension:
            raise ValueError(
                f"Coefficient dimension {self.field.dimension} does not match domain dimension {self.domain.dimension}"
            )
        if self.nodes_per_eps < MIN_NODES_PER_EPS:
            raise ValueError(f"nodes_per_eps must be >= {MIN_NODES_PER_EPS} (h <= eps/8), got {self.nodes_per_eps}")
        if self.min_resolution < 2:
            raise ValueError(f"min_resolution must be >= 2, got {self.min_resolution}")
        if not 0 < self.cfl <= 1:
            raise ValueError(f"cfl must be in (0, 1], got {self.cfl}")

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    def _cached(self, key, build):
        with self._lock:
            if key not in self._cache:
                self._cache[key] = build()
            return self._cache[key]

    # —————————————————————————————————————————————————————————————————————
    # GRID RULE
    # —————————————————————————————————————————————————————————————————————

    def nodes_per_period(self, epsilon: float) -> int:
        """Grid nodes per period eps: at least nodes_per_eps, more when min_resolution demands it."""
        if epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        longest = max(self.domain.extents)
        return max(self.nodes_per_eps, math.ceil(self.min_resolution * epsilon / longest - 1e-9))

    def grid_for(self, epsilon: float) -> Grid:
        """Grid with h = eps / nodes_per_period; constant coefficients use min_resolution on the longest side."""
        longest = max(self.domain.extents)
        if self.field.is_constant:
            if epsilon <= 0:
                raise ValueError(f"epsilon must be positive, got {epsilon}")
            return Grid.for_domain(
                self.domain, [max(2, math.ceil(self.min_resolution * L / longest - 1e-9)) for L in self.domain.extents]
            )
        m = self.nodes_per_period(epsilon)
        resolution = []
        for length in self.domain.extents:
            exact = length * m / epsilon
            n = max(2, int(round(exact)))
            if abs(n - exact) > 1e-6 * exact:
                logging.warning(
                    f"Extent {length:.6g} is not a multiple of eps={epsilon:.6g}; grid rounded to {n} intervals"
                )
            resolution.append(n)
        return Grid.for_domain(self.domain, resolution)

    def tensor_for(self, epsilon: float) -> TensorField:
        return self._cached(("tensor", epsilon), lambda: sample_epsilon(self.field, epsilon, self.grid_for(epsilon)))

    def operator_for(self, epsilon: float) -> DomainOperator:
        return self._cached(("operator", epsilon), lambda: as_operator(self.tensor_for(epsilon)))

    # —————————————————————————————————————————————————————————————————————
    # HOMOGENIZED OPERATOR
    # —————————————————————————————————————————————————————————————————————

    def cell_resolution_for(self, epsilon: float) -> int:
        """Cell resolution matching the domain grid, so the discrete operator homogenizes to this A_hat."""
        return self.cell_resolution or self.nodes_per_period(epsilon)

    def correctors_for(self, epsilon: float) -> CorrectorSet:
        resolution = self.cell_resolution_for(epsilon)
        return self._cached(
            ("correctors", resolution),
            lambda: solve_correctors(self.field, Grid.cell(resolution, self.dimension), self.tol),
        )

    def homogenized_for(self, epsilon: float) -> HomogenizedTensor:
        resolution = self.cell_resolution_for(epsilon)
        return self._cached(("ahat", resolution), lambda: homogenize(self.field, self.correctors_for(epsilon)))

    def homogenized_tensor(self, epsilon: float) -> TensorField:
        return constant_tensor(self.homogenized_for(epsilon).matrix, self.grid_for(epsilon))

    def homogenized_operator_for(self, epsilon: float) -> DomainOperator:
        return self._cached(("homogenized_operator", epsilon), lambda: as_operator(self.homogenized_tensor(epsilon)))

    def dirichlet_for(self, epsilon: float) -> DirichletCorrector:
        return self._cached(
            ("dirichlet", epsilon),
            lambda: dirichlet_correctors(
                self.field, epsilon, self.domain, self.grid_for(epsilon), self.tol,
                corrector_sup=self.correctors_for(epsilon).sup_norms, operator=self.operator_for(epsilon),
            ),
        )

    # —————————————————————————————————————————————————————————————————————
    # TIME STEP AND METADATA
    # —————————————————————————————————————————————————————————————————————

    def time_step(self, epsilon: float, T: float) -> float:
        """Largest dt <= CFL * h * sqrt(mu) dividing T; mu of the field bounds both operators."""
        return stable_time_step(self.operator_for(epsilon), T, self.cfl)

    def metadata(self) -> dict:
        return {
            "coefficient": self.field.describe(),
            "domain": self.domain.metadata(),
            "nodes_per_eps": self.nodes_per_eps,
            "min_resolution": self.min_resolution,
            "cell_resolution": self.cell_resolution or "matched to nodes_per_eps",
            "cfl": self.cfl,
            "tol": self.tol,
        }

    @classmethod
    def from_config(cls, config) -> "Scenario":
        spec = dict(config.scenario)
        mu = spec.pop("mu", None)
        lipschitz = spec.pop("lipschitz", None)
        extents = spec.pop("extents", None)
        gamma = spec.pop("gamma", ())
        dimension = int(spec.get("dimension", len(extents) if extents else 1))
        spec.setdefault("dimension", dimension)
        coefficient = build_field(spec, mu=mu, lipschitz=lipschitz)
        domain = Domain(tuple(extents) if extents else (1.0,) * coefficient.dimension, tuple(gamma))
        return cls(
            coefficient,
            domain,
            nodes_per_eps=config.nodes_per_eps,
            min_resolution=config.min_resolution,
            cell_resolution=config.cell_resolution,
            cfl=config.cfl,
            tol=config.tol,
        )


def constant_scenario(dimension: int = 1, value: float = 1.0, **kwargs) -> Scenario:
    """Scenario with A = value * I on the unit interval or square."""
    coefficient = build_field({"preset": "constant", "dimension": dimension, "value": value})
    return Scenario(coefficient, Domain((1.0,) * dimension), **kwargs)
