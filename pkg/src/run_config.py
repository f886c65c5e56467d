"""
Experiment configuration.
One JSON file describes one experiment; command-line flags override a few fields.
"""

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from src.coeff import PRESETS
from src.errors import ConfigError

COMMANDS = ("cell", "correctors", "rate", "l2rate", "observe", "traces", "control", "rellich")
METHODS = ("dense", "cg")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
MIN_NODES_PER_EPS = 8


def _key_line(text: str, key: str) -> Optional[int]:
    """First line of the JSON text that names `key`."""
    needle = f'"{key}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return None


@dataclass
class ExperimentConfig:
    """Holds one experiment: what to run, on which scenario, and where results go."""

    command: str
    scenario: dict = field(default_factory=lambda: {"preset": "1D-cosine"})

    # Grid and time rules
    epsilons: list = field(default_factory=lambda: [1 / 8, 1 / 16, 1 / 32])
    nodes_per_eps: int = 8
    min_resolution: int = 32
    cell_resolution: Optional[int] = None
    T: float = 2.0
    cfl: float = 0.5

    # Filtering and trials
    C0: float = 1.0
    trials: int = 8
    seed: int = 0

    # Solvers
    tol: float = 1e-10
    method: str = "dense"

    # Command-specific blocks
    data: dict = field(default_factory=lambda: {"modes": [[1]], "a": [1.0], "b": [0.0]})
    targets: dict = field(default_factory=dict)
    T_sweep: list = field(default_factory=list)
    levels: list = field(default_factory=lambda: [16, 32, 64])
    fixed_threshold: Optional[float] = None
    homogenized: bool = False

    # Output
    output_folder: Path = Path("output")
    threads: int = 1
    report: bool = False

    # Logging
    log_level: str = "INFO"
    log_format: str = "%(asctime)s - %(levelname)s - %(message)s"

    def __post_init__(self):
        self.output_folder = Path(self.output_folder)

    @classmethod
    def from_dict(cls, raw: dict, text: str = "") -> "ExperimentConfig":
        """Build and validate a config; errors name the offending key and, with `text`, its line."""
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown configuration key (known: {sorted(known)})", key, _key_line(text, key))
        if "command" not in raw:
            raise ConfigError("missing required key", "command", None)
        try:
            config = cls(**raw)
        except TypeError as e:
            raise ConfigError(str(e)) from e
        config.validate(text)
        return config

    @classmethod
    def from_json(cls, path: Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"configuration file not found: {path}")
        text = path.read_text(encoding="utf-8")
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e.msg}", line=e.lineno) from e
        return cls.from_dict(raw, text)

    def validate(self, text: str = "") -> None:
        """Raise ConfigError for the first invalid value."""

        def fail(key: str, message: str):
            raise ConfigError(message, key, _key_line(text, key))

        if self.command not in COMMANDS:
            fail("command", f"unknown command {self.command!r}; available: {list(COMMANDS)}")
        if not isinstance(self.scenario, dict):
            fail("scenario", "must be an object")
        sources = [k for k in ("preset", "entries", "array_file") if k in self.scenario]
        if len(sources) != 1:
            fail("scenario", "needs exactly one of preset, entries or array_file")
        if "preset" in self.scenario and self.scenario["preset"] not in PRESETS:
            fail("preset", f"unknown preset {self.scenario['preset']!r}; available: {sorted(PRESETS)}")
        if "array_file" in self.scenario and not Path(self.scenario["array_file"]).exists():
            fail("array_file", f"array file not found: {self.scenario['array_file']}")

        try:
            epsilons = [float(e) for e in self.epsilons]
        except (TypeError, ValueError):
            fail("epsilons", "must be a list of numbers")
        if not epsilons or any(e <= 0 for e in epsilons):
            fail("epsilons", f"must be a non-empty list of positive values, got {self.epsilons}")
        if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
            fail("epsilons", f"must be strictly decreasing, got {self.epsilons}")
        self.epsilons = epsilons
        if int(self.nodes_per_eps) < MIN_NODES_PER_EPS:
            fail("nodes_per_eps", f"must be >= {MIN_NODES_PER_EPS} so that h <= eps/8, got {self.nodes_per_eps}")
        if int(self.min_resolution) < 2:
            fail("min_resolution", f"must be >= 2, got {self.min_resolution}")
        if self.cell_resolution is not None and int(self.cell_resolution) < 4:
            fail("cell_resolution", f"must be >= 4, got {self.cell_resolution}")
        if self.T <= 0:
            fail("T", f"must be positive, got {self.T}")
        if not 0 < self.cfl <= 1:
            fail("cfl", f"must be in (0, 1], got {self.cfl}")
        if self.C0 <= 0:
            fail("C0", f"must be positive, got {self.C0}")
        if int(self.trials) < 1:
            fail("trials", f"must be >= 1, got {self.trials}")
        if not isinstance(self.seed, int) or self.seed < 0:
            fail("seed", f"must be a non-negative integer, got {self.seed}")
        if not 0 < self.tol < 1:
            fail("tol", f"must be in (0, 1), got {self.tol}")
        if self.method not in METHODS:
            fail("method", f"must be one of {list(METHODS)}, got {self.method!r}")
        if int(self.threads) < 1:
            fail("threads", f"must be >= 1, got {self.threads}")
        if self.log_level not in LOG_LEVELS:
            fail("log_level", f"must be one of {list(LOG_LEVELS)}, got {self.log_level!r}")

        if self.command in ("rate", "l2rate"):
            if not isinstance(self.data, dict) or "modes" not in self.data:
                fail("data", "rate commands need data.modes (closed-form homogenized mode indices)")
        if self.command == "control":
            unknown = set(self.targets) - {"theta0", "theta1"}
            if unknown:
                fail("targets", f"unknown target keys {sorted(unknown)}; use theta0 and theta1")
        if self.command == "observe" and any(T <= 0 for T in self.T_sweep):
            fail("T_sweep", f"values must be positive, got {self.T_sweep}")
        if self.command == "rellich":
            if len(self.levels) < 2 or any(b <= a for a, b in zip(self.levels, self.levels[1:])):
                fail("levels", f"must be at least two strictly increasing resolutions, got {self.levels}")
        if self.fixed_threshold is not None and self.fixed_threshold <= 0:
            fail("fixed_threshold", f"must be positive, got {self.fixed_threshold}")

    def as_dict(self) -> dict:
        echo = {f.name: getattr(self, f.name) for f in fields(self)}
        echo["output_folder"] = str(self.output_folder)
        return echo

    def get_output_folder(self) -> Path:
        """Get the folder holding every artifact of this run."""
        return self.output_folder

    def get_table_path(self, name: str) -> Path:
        """Get the full path of a CSV table."""
        return self.output_folder / f"{self.command}_{name}.csv"

    def get_summary_path(self) -> Path:
        """Get the full path of the JSON summary."""
        return self.output_folder / f"{self.command}_summary.json"

    def get_array_path(self, name: str) -> Path:
        """Get the full path of an array file."""
        return self.output_folder / f"{self.command}_{name}.txt"

    def get_manifest_path(self) -> Path:
        """Get the full path of the run manifest."""
        return self.output_folder / "manifest.json"

    def get_report_path(self) -> Path:
        """Get the full path of the optional PDF report."""
        return self.output_folder / f"{self.command}_report.pdf"
