"""Run artifacts: round-trip CSV files, plot-script companions and manifests."""

from __future__ import annotations

import hashlib
import json
import os
import platform
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from . import __version__

OUTPUT_ENV = "COUPLED_WAVES_OUTPUT"
MANIFEST_NAME = "manifest.json"


def format_value(x) -> str:
    """Shortest decimal that round-trips the binary value."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, columns: Mapping[str, Iterable]) -> Path:
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    length = {len(a) for a in arrays}
    if len(length) > 1:
        raise ValueError(f"columns have unequal lengths {sorted(length)}")
    lines = [",".join(names)]
    for row in zip(*arrays):
        lines.append(",".join(format_value(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path) -> dict:
    lines = Path(path).read_text().splitlines()
    names = lines[0].split(",")
    rows = [[float(v) for v in line.split(",")] for line in lines[1:]]
    data = np.array(rows) if rows else np.empty((0, len(names)))
    return {name: data[:, i] for i, name in enumerate(names)}


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_plot_script(csv_path, x: str, ys: Iterable[str], logy: bool = False, title: str = "") -> Path:
    """Emit a gnuplot script next to ``csv_path`` that plots ``ys`` against ``x``."""
    csv_path = Path(csv_path)
    header = csv_path.read_text().split("\n", 1)[0].split(",")
    col = {name: i + 1 for i, name in enumerate(header)}
    plots = ", ".join(f"'{csv_path.name}' using {col[x]}:{col[y]} with lines title '{y}'" for y in ys)
    lines = [
        f"# plots {csv_path.name}; run with: gnuplot -p {csv_path.stem}.gp",
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set title '{title or csv_path.stem}'",
        f"set xlabel '{x}'",
    ]
    if logy:
        lines.append("set logscale y")
    lines.append(f"plot {plots}")
    script = csv_path.with_suffix(".gp")
    script.write_text("\n".join(lines) + "\n")
    return script


def resolve_output_dir(flag: Optional[str], scenario_dir: Optional[str], command: str) -> Path:
    """Precedence: command-line flag, environment variable, scenario file, ``runs/<command>``."""
    for candidate in (flag, os.environ.get(OUTPUT_ENV), scenario_dir):
        if candidate:
            return Path(candidate)
    return Path("runs") / command


def write_manifest(
    directory,
    command: str,
    scenario,
    options: dict,
    csv_files: Iterable,
    wall_clock: float,
    steps: int,
    extra: Optional[dict] = None,
) -> Path:
    directory = Path(directory)
    manifest = {
        "artifact": "coupled_waves",
        "version": __version__,
        "command": command,
        "options": options,
        "scenario_sha256": scenario.digest(),
        "scenario": scenario.resolved(),
        "source": scenario.source,
        "wall_clock_seconds": wall_clock,
        "steps": int(steps),
        "outputs": {Path(p).name: sha256_file(p) for p in csv_files},
        "platform": {"python": platform.python_version(), "numpy": np.__version__},
    }
    if extra:
        manifest["results"] = extra
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    return json.loads(path.read_text())
