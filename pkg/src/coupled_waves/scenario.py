"""Scenario files: a strict TOML schema with every default resolved up front.

A minimal file only needs ``[domain]``; everything else has a documented
default (see ``DEFAULTS``). Unknown keys are a ``ParseError``; invalid values
are collected and reported together as one ``ValidationError``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
import sys
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .control import default_horizon
from .discretization import Grid
from .dynamics import Problem, StateVector, SystemCoefficients
from .errors import ParseError, ValidationError
from .geometry import CoefficientField, Domain, PmgcPartition, Region, build_cutoff, constant_field

# ``None`` marks a default resolved from other fields.
DEFAULTS = {
    "seed": None,
    "domain": {"kind": "interval", "extents": [1.0]},
    "grid": {"n": 200},
    "time": {"horizon": 10.0, "dt": None, "sample_stride": 1},
    "coefficients": {"a": 1.0},
    "damping": {"boxes": [[[0.3, 0.8]]], "plateau": 4.0, "transition": 0.1, "constant": None},
    "coupling": {"boxes": [[[0.4, 0.7]]], "plateau": 1.0, "transition": 0.1, "constant": None},
    "initial": {"kind": "mode", "mode": None, "u": 1.0, "v": 0.0, "y": 1.0, "z": 0.0, "center": None, "width": 0.05},
    "tolerances": {"poisson": 1e-10, "cg": 1e-10},
    "fit": {"which": "strong", "window": None},
    "spectral": {"space": "strong", "beta_max": 200.0, "n_points": 401, "refine": 20, "seeds": 20},
    "gcc": {"region": "damping", "horizon": 2.0, "n_rays": None},
    "pmgc": None,
    "control": {
        "horizon": None,
        "n": None,
        "space": None,
        "tikhonov": 0.0,
        "maxiter": None,
        "n_random": 50,
        "n_iterates": 20,
        "modes": 10,
    },
    "output": {"directory": None, "figures": True},
}
PMGC_KEYS = {"subdomains", "points", "epsilon"}


def _line_of(text: str, key: str) -> Optional[int]:
    pattern = re.compile(rf"^\s*(\[+\s*)?{re.escape(key)}\b")
    for i, line in enumerate(text.splitlines(), start=1):
        if pattern.search(line):
            return i
    return None


def _check_keys(raw: dict, text: str) -> None:
    for key, value in raw.items():
        if key not in DEFAULTS:
            raise ParseError(f"unknown key {key!r}", line=_line_of(text, key), field=key)
        schema = DEFAULTS[key]
        if key == "pmgc":
            if value is None:  # manifests store an absent partition as null
                continue
            schema = dict.fromkeys(PMGC_KEYS)
        if isinstance(schema, dict):
            if not isinstance(value, dict):
                raise ParseError(f"{key!r} must be a table", line=_line_of(text, key), field=key)
            for sub in value:
                if sub not in schema:
                    raise ParseError(
                        f"unknown key {sub!r} in [{key}]", line=_line_of(text, sub), field=f"{key}.{sub}"
                    )


def _merge(raw: dict) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        if isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = copy.deepcopy(value)
    if cfg["initial"]["mode"] is None:
        dim = 2 if cfg["domain"].get("kind") == "rectangle" else 1
        cfg["initial"]["mode"] = [1] * dim
    return cfg


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and np.isfinite(x)


def _validate(cfg: dict) -> list:
    problems = []

    def need(cond, fieldname, msg):
        if not cond:
            problems.append((fieldname, msg))
        return cond

    def positive(sec, key, allow_none=False):
        val = cfg[sec][key]
        if val is None and allow_none:
            return
        need(_is_number(val) and val > 0, f"{sec}.{key}", f"must be a positive number, got {val!r}")

    if cfg["seed"] is not None:
        need(isinstance(cfg["seed"], int) and not isinstance(cfg["seed"], bool) and cfg["seed"] >= 0, "seed", "must be a nonnegative integer")

    dom = cfg["domain"]
    dim = None
    if need(dom["kind"] in ("interval", "rectangle"), "domain.kind", f"must be 'interval' or 'rectangle', got {dom['kind']!r}"):
        dim = 1 if dom["kind"] == "interval" else 2
        ext = dom["extents"]
        if need(isinstance(ext, list) and len(ext) == dim, "domain.extents", f"must list {dim} length(s)"):
            need(all(_is_number(e) and e > 0 for e in ext), "domain.extents", "lengths must be positive")

    n = cfg["grid"]["n"]
    ns = n if isinstance(n, list) else [n]
    need(
        all(isinstance(k, int) and not isinstance(k, bool) and k >= 3 for k in ns) and (dim is None or len(ns) in (1, dim)),
        "grid.n",
        f"must be an integer >= 3 or one per axis, got {n!r}",
    )

    positive("time", "horizon")
    positive("time", "dt", allow_none=True)
    st = cfg["time"]["sample_stride"]
    need(isinstance(st, int) and not isinstance(st, bool) and st >= 1, "time.sample_stride", "must be an integer >= 1")
    positive("coefficients", "a")

    for sec in ("damping", "coupling"):
        s = cfg[sec]
        positive(sec, "transition")
        if s["constant"] is not None:
            need(_is_number(s["constant"]), f"{sec}.constant", "must be a number")
            if sec == "damping":
                need(_is_number(s["constant"]) and s["constant"] >= 0, "damping.constant", "must be nonnegative")
        need(_is_number(s["plateau"]), f"{sec}.plateau", "must be a number")
        if sec == "damping":
            need(_is_number(s["plateau"]) and s["plateau"] >= 0, "damping.plateau", "must be nonnegative")
        if dim is not None:
            need(_boxes_ok(s["boxes"], dim), f"{sec}.boxes", f"must be a list of boxes, each {dim} [lo, hi] pair(s)")

    ini = cfg["initial"]
    need(ini["kind"] in ("mode", "gaussian", "zero"), "initial.kind", "must be 'mode', 'gaussian' or 'zero'")
    for comp in "uvyz":
        need(_is_number(ini[comp]), f"initial.{comp}", "must be a number")
    if dim is not None:
        need(
            isinstance(ini["mode"], list) and len(ini["mode"]) == dim and all(isinstance(k, int) and k >= 1 for k in ini["mode"]),
            "initial.mode",
            f"must list {dim} positive integer wave index(es)",
        )
        if ini["center"] is not None:
            need(isinstance(ini["center"], list) and len(ini["center"]) == dim and all(map(_is_number, ini["center"])), "initial.center", f"must be a {dim}-vector")
    positive("initial", "width")

    for key in ("poisson", "cg"):
        val = cfg["tolerances"][key]
        need(_is_number(val) and 0 < val < 1, f"tolerances.{key}", "must lie in (0, 1)")

    fit = cfg["fit"]
    need(fit["which"] in ("strong", "mixed"), "fit.which", "must be 'strong' or 'mixed'")
    if fit["window"] is not None:
        w = fit["window"]
        need(isinstance(w, list) and len(w) == 2 and all(map(_is_number, w)) and w[0] < w[1], "fit.window", "must be [t_min, t_max] with t_min < t_max")

    sp_ = cfg["spectral"]
    need(sp_["space"] in ("strong", "weak"), "spectral.space", "must be 'strong' or 'weak'")
    positive("spectral", "beta_max")
    need(isinstance(sp_["n_points"], int) and sp_["n_points"] >= 2, "spectral.n_points", "must be an integer >= 2")
    need(isinstance(sp_["refine"], int) and sp_["refine"] >= 0, "spectral.refine", "must be a nonnegative integer")
    need(isinstance(sp_["seeds"], int) and sp_["seeds"] >= 0, "spectral.seeds", "must be a nonnegative integer")

    gcc = cfg["gcc"]
    need(gcc["region"] in ("damping", "coupling"), "gcc.region", "must be 'damping' or 'coupling'")
    positive("gcc", "horizon")
    if gcc["n_rays"] is not None:
        need(isinstance(gcc["n_rays"], int) and gcc["n_rays"] >= 1, "gcc.n_rays", "must be a positive integer")

    if cfg["pmgc"] is not None:
        pm = cfg["pmgc"]
        missing = PMGC_KEYS - set(pm)
        need(not missing, "pmgc", f"missing {sorted(missing)}")
        if not missing and dim is not None:
            need(_boxes_ok(pm["subdomains"], dim), "pmgc.subdomains", "must be a list of boxes")
            pts = pm["points"]
            need(
                isinstance(pts, list) and all(isinstance(p, list) and len(p) == dim and all(map(_is_number, p)) for p in pts),
                "pmgc.points",
                f"must be a list of {dim}-vectors",
            )
            need(_is_number(pm["epsilon"]) and pm["epsilon"] > 0, "pmgc.epsilon", "must be positive")

    ctl = cfg["control"]
    positive("control", "horizon", allow_none=True)
    if ctl["n"] is not None:
        cn = ctl["n"] if isinstance(ctl["n"], list) else [ctl["n"]]
        need(all(isinstance(k, int) and k >= 3 for k in cn), "control.n", "must be an integer >= 3 or one per axis")
    if ctl["space"] is not None:
        need(ctl["space"] in ("strong", "weak"), "control.space", "must be 'strong' or 'weak'")
    need(_is_number(ctl["tikhonov"]) and ctl["tikhonov"] >= 0, "control.tikhonov", "must be nonnegative")
    for key in ("n_random", "n_iterates", "modes"):
        need(isinstance(ctl[key], int) and ctl[key] >= 1, f"control.{key}", "must be a positive integer")
    if ctl["maxiter"] is not None:
        need(isinstance(ctl["maxiter"], int) and ctl["maxiter"] >= 1, "control.maxiter", "must be a positive integer")

    out = cfg["output"]
    need(out["directory"] is None or isinstance(out["directory"], str), "output.directory", "must be a string")
    need(isinstance(out["figures"], bool), "output.figures", "must be true or false")
    return problems


def _boxes_ok(boxes, dim) -> bool:
    if not isinstance(boxes, list):
        return False
    for box in boxes:
        if not (isinstance(box, list) and len(box) == dim):
            return False
        for pair in box:
            if not (isinstance(pair, list) and len(pair) == 2 and all(map(_is_number, pair))):
                return False
    return True


@dataclass(eq=False)
class Scenario:
    """A validated scenario with all defaults filled in (``config``)."""

    config: dict
    source: Optional[str] = None

    @classmethod
    def from_dict(cls, raw: dict, text: str = "", source: Optional[str] = None) -> "Scenario":
        _check_keys(raw, text)
        cfg = _merge(raw)
        problems = _validate(cfg)
        if problems:
            raise ValidationError(problems)
        scen = cls(cfg, source)
        scen._check_geometry()
        return scen

    def _check_geometry(self) -> None:
        problems = []
        for sec in ("damping", "coupling"):
            try:
                self.field(sec)
            except ValueError as exc:
                problems.append((sec, str(exc)))
        if self.config["pmgc"] is not None:
            try:
                self.pmgc
            except ValueError as exc:
                problems.append(("pmgc", str(exc)))
        if problems:
            raise ValidationError(problems)

    # -- geometry -----------------------------------------------------------

    @cached_property
    def domain(self) -> Domain:
        d = self.config["domain"]
        return Domain.interval(*d["extents"]) if d["kind"] == "interval" else Domain.rectangle(*d["extents"])

    def grid_for(self, n=None) -> Grid:
        return Grid.uniform(self.domain, _n_tuple(n if n is not None else self.config["grid"]["n"], self.domain.dim))

    @cached_property
    def grid(self) -> Grid:
        return self.grid_for()

    def region(self, which: str) -> Region:
        return Region(self.domain, self.config[which]["boxes"])

    def field(self, which: str, grid: Optional[Grid] = None) -> CoefficientField:
        grid = grid or self.grid
        s = self.config[which]
        if s["constant"] is not None:
            return constant_field(float(s["constant"]), grid, s["transition"])
        return build_cutoff(self.region(which), float(s["plateau"]), float(s["transition"]), grid)

    def coefficients(self, grid: Optional[Grid] = None) -> SystemCoefficients:
        grid = grid or self.grid
        return SystemCoefficients(float(self.config["coefficients"]["a"]), self.field("coupling", grid), self.field("damping", grid))

    @cached_property
    def pmgc(self) -> Optional[PmgcPartition]:
        pm = self.config["pmgc"]
        if pm is None:
            return None
        return PmgcPartition(self.domain, pm["subdomains"], pm["points"], float(pm["epsilon"]))

    # -- numerics -----------------------------------------------------------

    def problem(self, horizon: Optional[float] = None, n=None) -> Problem:
        grid = self.grid_for(n)
        t = self.config["time"]
        return Problem(
            grid,
            self.coefficients(grid),
            float(horizon if horizon is not None else t["horizon"]),
            t["dt"],
            t["sample_stride"],
            self.config["tolerances"]["poisson"],
        )

    def control_problem(self) -> Problem:
        ctl = self.config["control"]
        grid = self.grid_for(ctl["n"])
        horizon = ctl["horizon"] or default_horizon(grid, float(self.config["coefficients"]["a"]))
        return self.problem(horizon, ctl["n"])

    def initial_state(self, grid: Optional[Grid] = None) -> StateVector:
        grid = grid or self.grid
        ini = self.config["initial"]
        if ini["kind"] == "zero":
            return StateVector.zeros(grid.size)
        nodes = grid.nodes
        if ini["kind"] == "mode":
            shape = np.ones(grid.size)
            for axis, k in enumerate(ini["mode"]):
                shape *= np.sin(k * np.pi * nodes[:, axis] / grid.domain.extents[axis])
        else:
            center = np.asarray(ini["center"] if ini["center"] is not None else [0.5 * L for L in grid.domain.extents])
            r2 = np.sum((nodes - center) ** 2, axis=1)
            shape = np.exp(-r2 / (2 * ini["width"] ** 2))
        return StateVector(*(float(ini[c]) * shape for c in "uvyz"))

    @property
    def seed(self) -> Optional[int]:
        return self.config["seed"]

    def require_seed(self) -> int:
        if self.seed is None:
            raise ValidationError([("seed", "required for randomized procedures")])
        return self.seed

    # -- identity -----------------------------------------------------------

    def resolved(self) -> dict:
        """The full configuration, defaults included, as plain JSON-able data."""
        return json.loads(json.dumps(self.config))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.resolved(), sort_keys=True).encode()).hexdigest()


def _n_tuple(n, dim: int) -> tuple:
    if isinstance(n, (list, tuple)):
        return tuple(n) * dim if len(n) == 1 else tuple(n)
    return (int(n),) * dim


def parse_scenario_text(text: str, source: Optional[str] = None) -> Scenario:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ParseError(str(exc), line=int(m.group(1)) if m else None) from exc
    return Scenario.from_dict(raw, text, source)


def parse_scenario(path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"scenario file {str(path)!r} does not exist")
    return parse_scenario_text(path.read_text(), str(path))
