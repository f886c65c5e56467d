#!/usr/bin/env python3
"""
Result persistence: CSV tables, JSON summaries, the run manifest and the
plain-text array-file format used for coefficient fields and cell dumps.
"""
import json
import logging
import math
import platform
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np
import pandas as pd

FLOAT_FORMAT = "%.12e"
TRACKED_PACKAGES = ("numpy", "scipy", "pandas", "sympy", "fpdf2")


# —————————————————————————————————————————————————————————————————————————
# TABLES AND JSON
# —————————————————————————————————————————————————————————————————————————

def write_table(df: pd.DataFrame, output_path: Path) -> Path:
    """Write a DataFrame as CSV; identical frames give byte-identical files."""
    output_path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(output_path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logging.info(f"   Wrote {len(df)} rows to {output_path.name}")
    return output_path


def read_table(path: Path) -> pd.DataFrame:
    return pd.read_csv(path)


def _to_builtin(value):
    if isinstance(value, dict):
        return {str(k): _to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_to_builtin(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(obj, output_path: Path) -> Path:
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(_to_builtin(obj), f, indent=2, sort_keys=True)
        f.write("\n")
    logging.info(f"   Wrote {output_path.name}")
    return output_path


# —————————————————————————————————————————————————————————————————————————
# MANIFEST
# —————————————————————————————————————————————————————————————————————————

def package_versions() -> dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(
    output_path: Path,
    config: dict,
    artifacts: list[str],
    status: str,
    started: str,
    elapsed_seconds: float,
    failures: list[str] | None = None,
    summary: dict | None = None,
) -> Path:
    """Manifest beside the artifacts: config echo, versions, timing, status and failures."""
    manifest = {
        "config": config,
        "versions": package_versions(),
        "started": started,
        "finished": utc_timestamp(),
        "elapsed_seconds": round(elapsed_seconds, 3),
        "status": status,
        "partial": status != "success",
        "artifacts": sorted(artifacts),
        "failures": failures or [],
        "summary": summary or {},
    }
    return write_json(manifest, output_path)


# —————————————————————————————————————————————————————————————————————————
# ARRAY FILES
# —————————————————————————————————————————————————————————————————————————

def dump_array_file(output_path: Path, arrays: dict[str, np.ndarray], resolution: tuple[int, ...]) -> Path:
    """
    Write arrays sharing one grid resolution.

    Layout: a header line "# d=<d> resolution=<n1>[,<n2>] entries=<name>,..." followed by
    one block per entry, each in row-major (C) order, one value per line.
    """
    resolution = tuple(int(n) for n in resolution)
    for name, array in arrays.items():
        if np.asarray(array).shape != resolution:
            raise ValueError(f"Array {name!r} has shape {np.asarray(array).shape}, expected {resolution}")
    header = (
        f"d={len(resolution)} resolution={','.join(str(n) for n in resolution)} "
        f"entries={','.join(arrays)}"
    )
    data = np.concatenate([np.asarray(a, dtype=float).ravel(order="C") for a in arrays.values()]) if arrays else np.empty(0)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(output_path, data, fmt="%.17g", header=header, comments="# ")
    logging.info(f"   Dumped {len(arrays)} arrays to {output_path.name}")
    return output_path


def load_array_file(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Array file not found: {path}")
    with open(path, encoding="utf-8") as f:
        first = f.readline().lstrip("#").strip()
    header = {}
    for token in first.split():
        key, _, value = token.partition("=")
        header[key] = value
    try:
        resolution = tuple(int(n) for n in header["resolution"].split(","))
        names = [n for n in header["entries"].split(",") if n]
        d = int(header["d"])
    except (KeyError, ValueError) as e:
        raise ValueError(f"Malformed array-file header in {path.name}: {first!r}") from e
    if d != len(resolution):
        raise ValueError(f"Array file {path.name}: d={d} but resolution has {len(resolution)} axes")
    data = np.atleast_1d(np.loadtxt(path, comments="#"))
    block = int(np.prod(resolution))
    if data.size != block * len(names):
        raise ValueError(f"Array file {path.name} holds {data.size} values, expected {block * len(names)}")
    arrays = {name: data[i * block:(i + 1) * block].reshape(resolution) for i, name in enumerate(names)}
    return {"d": d, "resolution": resolution, "entries": names}, arrays
