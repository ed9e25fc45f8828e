"""Domains, box regions, smooth coefficient fields and geometric hypotheses.

Regions are finite unions of open axis-aligned boxes. The geometric control
condition is probed by billiard ray sampling, so a positive answer is
evidence on the sampled rays and a negative answer comes with a concrete
counterexample ray.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .errors import EmptyCore, GridMismatch, TransitionTooNarrow

if TYPE_CHECKING:  # pragma: no cover
    from .discretization import Grid

_EDGE_TOL = 1e-12

DEFAULT_RAYS_1D = 10_000
DEFAULT_POSITIONS_2D = 64
DEFAULT_ANGLES_2D = 32


@dataclass(frozen=True)
class Domain:
    kind: str
    extents: tuple

    def __post_init__(self):
        ext = tuple(float(e) for e in np.atleast_1d(self.extents))
        object.__setattr__(self, "extents", ext)
        expected = {"interval": 1, "rectangle": 2}
        if self.kind not in expected:
            raise ValueError(f"domain kind must be 'interval' or 'rectangle', got {self.kind!r}")
        if len(ext) != expected[self.kind]:
            raise ValueError(f"{self.kind} needs {expected[self.kind]} extent(s), got {len(ext)}")
        if min(ext) <= 0:
            raise ValueError(f"extents must be positive, got {ext}")

    @classmethod
    def interval(cls, length: float = 1.0) -> "Domain":
        return cls("interval", (length,))

    @classmethod
    def rectangle(cls, lx: float = 1.0, ly: float = 1.0) -> "Domain":
        return cls("rectangle", (lx, ly))

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def diameter(self) -> float:
        return float(np.hypot.reduce(self.extents)) if self.dim > 1 else self.extents[0]

    def as_box(self) -> np.ndarray:
        return np.array([[0.0, L] for L in self.extents])


def _normalize_box(box, dim: int) -> tuple:
    arr = np.asarray(box, dtype=float).reshape(dim, 2)
    arr = np.sort(arr, axis=1)
    return tuple(tuple(float(v) for v in row) for row in arr)


@dataclass(frozen=True)
class Region:
    """Finite union of open boxes, each stored as ``((lo, hi), ...)`` per axis."""

    domain: Domain
    boxes: tuple = ()

    def __post_init__(self):
        boxes = tuple(_normalize_box(b, self.domain.dim) for b in self.boxes)
        for box in boxes:
            for (lo, hi), L in zip(box, self.domain.extents):
                if lo < -_EDGE_TOL or hi > L + _EDGE_TOL:
                    raise ValueError(f"box {box} leaves the domain closure {self.domain.extents}")
        object.__setattr__(self, "boxes", boxes)

    @classmethod
    def whole(cls, domain: Domain) -> "Region":
        return cls(domain, (domain.as_box(),))

    @classmethod
    def empty(cls, domain: Domain) -> "Region":
        return cls(domain, ())

    @property
    def is_empty(self) -> bool:
        return not any(all(hi > lo for lo, hi in box) for box in self.boxes)

    def box_arrays(self) -> list:
        return [np.array(box) for box in self.boxes]

    def contains(self, points) -> np.ndarray:
        """Open-set membership for an ``(m, dim)`` array of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.zeros(len(pts), dtype=bool)
        for box in self.box_arrays():
            inside |= np.all((pts > box[:, 0]) & (pts < box[:, 1]), axis=1)
        return inside

    def union(self, other: "Region") -> "Region":
        return Region(self.domain, self.boxes + other.boxes)


def quintic_ramp(s):
    """C^2 ramp rising from 0 at s <= 0 to 1 at s >= 1."""
    s = np.clip(s, 0.0, 1.0)
    # the polynomial can overshoot 1 by an ulp near s = 1
    return np.minimum(s**3 * (10.0 - 15.0 * s + 6.0 * s**2), 1.0)


QUINTIC_RAMP_SLOPE = 15.0 / 8.0  # max of d/ds quintic_ramp


@dataclass(frozen=True, eq=False)
class CoefficientField:
    region: Region
    plateau: float
    transition: float
    grid: "Grid"
    samples: np.ndarray = field(repr=False)

    @property
    def support(self) -> np.ndarray:
        return self.samples != 0.0

    @property
    def positive(self) -> np.ndarray:
        return self.samples > 0.0

    @property
    def core(self) -> np.ndarray:
        return self.samples == self.plateau

    def is_zero(self) -> bool:
        return not np.any(self.samples)


def _box_profile(box: np.ndarray, points: np.ndarray, extents, delta: float) -> np.ndarray:
    prof = np.ones(len(points))
    for axis, ((lo, hi), L) in enumerate(zip(box, extents)):
        x = points[:, axis]
        s_lo = np.full_like(x, np.inf) if lo <= _EDGE_TOL else (x - lo) / delta
        s_hi = np.full_like(x, np.inf) if hi >= L - _EDGE_TOL else (hi - x) / delta
        s = np.minimum(s_lo, s_hi)
        inside = (x > lo) & (x < hi)
        prof *= np.where(inside, quintic_ramp(s), 0.0)
    return prof


def _core_box(box: np.ndarray, extents, delta: float) -> np.ndarray:
    core = box.copy()
    for axis, ((lo, hi), L) in enumerate(zip(box, extents)):
        if lo > _EDGE_TOL:
            core[axis, 0] = lo + delta
        if hi < L - _EDGE_TOL:
            core[axis, 1] = hi - delta
    return core


def build_cutoff(region: Region, plateau: float, transition: float, grid: "Grid") -> CoefficientField:
    """Sample a smooth cutoff equal to ``plateau`` on the ``transition``-erosion of ``region``.

    The field vanishes outside the region. Faces of a box lying on the domain
    boundary are not ramped, so ``Region.whole`` yields a constant field.
    """
    if region.domain != grid.domain:
        raise GridMismatch("region and grid live on different domains")
    if transition < 2.0 * max(grid.h) * (1 - 1e-12):
        raise TransitionTooNarrow(f"transition {transition:g} is below two grid spacings ({2 * max(grid.h):g})")
    extents = grid.domain.extents
    samples = np.zeros(grid.size)
    for box in region.box_arrays():
        core = _core_box(box, extents, transition)
        if np.any(core[:, 1] <= core[:, 0]):
            raise EmptyCore(f"box {box.tolist()} has an empty core at transition {transition:g}")
        samples = np.maximum(samples, _box_profile(box, grid.nodes, extents, transition))
    return CoefficientField(region, float(plateau), float(transition), grid, float(plateau) * samples)


def constant_field(value: float, grid: "Grid", transition: Optional[float] = None) -> CoefficientField:
    """A spatially constant coefficient (whole-domain region, no ramp)."""
    transition = transition if transition is not None else 2.0 * max(grid.h)
    if value == 0.0:
        return build_cutoff(Region.empty(grid.domain), 0.0, transition, grid)
    return build_cutoff(Region.whole(grid.domain), value, transition, grid)


@dataclass(frozen=True)
class PmgcPartition:
    """Disjoint open subdomains with one observation point each."""

    domain: Domain
    subdomains: tuple
    points: tuple
    epsilon: float

    def __post_init__(self):
        dim = self.domain.dim
        subs = tuple(_normalize_box(b, dim) for b in self.subdomains)
        pts = tuple(tuple(float(v) for v in np.atleast_1d(p)) for p in self.points)
        object.__setattr__(self, "subdomains", subs)
        object.__setattr__(self, "points", pts)
        if len(subs) != len(pts):
            raise ValueError("need exactly one observation point per subdomain")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        for p in pts:
            if len(p) != dim or not np.all(np.isfinite(p)):
                raise ValueError(f"observation point {p} must be a finite {dim}-vector")
        for i in range(len(subs)):
            for j in range(i + 1, len(subs)):
                a, b = np.array(subs[i]), np.array(subs[j])
                if np.all(np.maximum(a[:, 0], b[:, 0]) < np.minimum(a[:, 1], b[:, 1])):
                    raise ValueError(f"subdomains {i} and {j} overlap")

    def contains(self, points) -> np.ndarray:
        return Region(self.domain, self.subdomains).contains(points)


@dataclass
class HypothesisReport:
    lh1: bool
    lh2: bool
    inclusion: bool
    lh3: Optional[bool] = None
    notes: list = field(default_factory=list)

    @property
    def all_hold(self) -> bool:
        checks = [self.lh1, self.lh2, self.inclusion]
        if self.lh3 is not None:
            checks.append(self.lh3)
        return all(checks)

    def as_dict(self) -> dict:
        return {"LH1": self.lh1, "LH2": self.lh2, "inclusion": self.inclusion, "LH3": self.lh3}


def check_hypotheses(b: CoefficientField, c: CoefficientField, pmgc: Optional[PmgcPartition] = None) -> HypothesisReport:
    """Nodewise verdicts on LH1, LH2, coupling-inside-damping and (optionally) LH3."""
    if b.grid != c.grid:
        raise GridMismatch("b and c are sampled on different grids")
    notes = []
    lh1 = bool(np.any(c.samples > 0))
    if np.any(c.samples < 0):
        lh1 = False
        notes.append("c takes negative values")
    lh2 = bool(np.any(b.samples != 0))
    inclusion = lh2 and bool(np.all(c.samples[b.support] > 0))
    lh3 = None
    if pmgc is not None:
        inside = pmgc.contains(b.grid.nodes)
        lh3 = lh2 and not bool(np.any(inside & b.support))
    return HypothesisReport(lh1, lh2, inclusion, lh3, notes)


# -- billiard rays -----------------------------------------------------------


@dataclass
class GccReport:
    holds: bool
    max_entry_time: float
    worst_start: np.ndarray
    worst_direction: np.ndarray
    n_rays: int
    n_failing: int
    entry_times: np.ndarray = field(repr=False)

    def describe_worst(self) -> str:
        start = ", ".join(f"{v:.6g}" for v in self.worst_start)
        direc = ", ".join(f"{v:.6g}" for v in self.worst_direction)
        status = "never enters" if not np.isfinite(self.max_entry_time) else f"enters at t={self.max_entry_time:.6g}"
        return f"ray from ({start}) with direction ({direc}) {status}"


def ray_sample(domain: Domain, n_rays: Optional[int] = None):
    """Uniform cell-centred starting points times uniform directions."""
    if domain.dim == 1:
        m = max(1, (n_rays or DEFAULT_RAYS_1D) // 2)
        x = (np.arange(m) + 0.5) / m * domain.extents[0]
        starts = np.concatenate([x, x])[:, None]
        dirs = np.concatenate([np.ones(m), -np.ones(m)])[:, None]
        return starts, dirs
    n_ang = DEFAULT_ANGLES_2D
    m = DEFAULT_POSITIONS_2D if n_rays is None else max(1, int(round(np.sqrt(n_rays / n_ang))))
    xs = (np.arange(m) + 0.5) / m * domain.extents[0]
    ys = (np.arange(m) + 0.5) / m * domain.extents[1]
    ang = 2.0 * np.pi * np.arange(n_ang) / n_ang
    X, Y, A = np.meshgrid(xs, ys, ang, indexing="ij")
    starts = np.stack([X.ravel(), Y.ravel()], axis=1)
    dirs = np.stack([np.cos(A.ravel()), np.sin(A.ravel())], axis=1)
    return starts, dirs


def _segment_entry(p, v, seg_len, boxes):
    """Earliest s in [0, seg_len] with p + v s inside any open box (inf if none)."""
    best = np.full(len(p), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for box in boxes:
            start = np.zeros(len(p))
            end = np.full(len(p), np.inf)
            for axis in range(p.shape[1]):
                lo, hi = box[axis]
                x, w = p[:, axis], v[:, axis]
                moving = w != 0.0
                t1 = np.where(moving, (lo - x) / w, -np.inf)
                t2 = np.where(moving, (hi - x) / w, np.inf)
                a = np.minimum(t1, t2)
                b = np.maximum(t1, t2)
                still_inside = (~moving) & (x > lo) & (x < hi)
                a = np.where(moving, a, np.where(still_inside, -np.inf, np.inf))
                b = np.where(moving, b, np.where(still_inside, np.inf, -np.inf))
                start = np.maximum(start, a)
                end = np.minimum(end, b)
            hit = (start < end) & (start <= seg_len)
            best = np.where(hit, np.minimum(best, start), best)
    return best


def first_entry_times(region: Region, starts, directions, speed: float, horizon: float) -> np.ndarray:
    """Vectorized billiard tracing; returns first-entry times (inf when none by ``horizon``)."""
    ext = np.asarray(region.domain.extents)
    p = np.array(starts, dtype=float)
    d = np.asarray(directions, dtype=float)
    v = speed * d / np.linalg.norm(d, axis=1, keepdims=True)
    boxes = region.box_arrays()
    entry = np.full(len(p), np.inf)
    if not boxes:
        return entry
    t = np.zeros(len(p))
    active = np.ones(len(p), dtype=bool)
    while np.any(active):
        idx = np.flatnonzero(active)
        pa, va = p[idx], v[idx]
        with np.errstate(divide="ignore"):
            to_wall = np.where(va > 0, (ext - pa) / va, np.where(va < 0, -pa / va, np.inf))
        dt_wall = to_wall.min(axis=1)
        seg = np.minimum(dt_wall, horizon - t[idx])
        s = _segment_entry(pa, va, seg, boxes)
        found = np.isfinite(s)
        entry[idx[found]] = t[idx[found]] + s[found]
        active[idx[found]] = False
        done = t[idx] + dt_wall >= horizon
        active[idx[done]] = False
        move = idx[~found & ~done]
        if len(move) == 0:
            continue
        step = dt_wall[~found & ~done]
        p[move] += v[move] * step[:, None]
        t[move] += step
        hit_hi = p[move] >= ext - _EDGE_TOL * ext
        hit_lo = p[move] <= _EDGE_TOL * ext
        flip = (hit_hi & (v[move] > 0)) | (hit_lo & (v[move] < 0))
        v[move] = np.where(flip, -v[move], v[move])
        p[move] = np.clip(p[move], 0.0, ext)
    return entry


def trace_ray(domain: Domain, start, direction, speed: float, horizon: float) -> list:
    """Piecewise-linear billiard path as ``(t0, position, velocity)`` segments."""
    ext = np.asarray(domain.extents)
    p = np.array(start, dtype=float)
    d = np.asarray(direction, dtype=float)
    v = speed * d / np.linalg.norm(d)
    t = 0.0
    segments = []
    while t < horizon:
        segments.append((t, p.copy(), v.copy()))
        with np.errstate(divide="ignore"):
            to_wall = np.where(v > 0, (ext - p) / v, np.where(v < 0, -p / v, np.inf))
        step = min(float(to_wall.min()), horizon - t)
        p = p + v * step
        t += step
        flip = ((p >= ext - _EDGE_TOL * ext) & (v > 0)) | ((p <= _EDGE_TOL * ext) & (v < 0))
        v = np.where(flip, -v, v)
        p = np.clip(p, 0.0, ext)
    return segments


def gcc_check(region: Region, domain: Domain, speed: float, horizon: float, n_rays: Optional[int] = None) -> GccReport:
    """Check that every sampled ray at speed ``sqrt(speed)`` meets ``region`` by ``horizon``.

    ``speed`` is the coefficient ``a`` of the wave operator, so rays travel
    at ``sqrt(a)``.
    """
    if speed <= 0 or horizon <= 0:
        raise ValueError("speed and horizon must be positive")
    if n_rays is not None and n_rays < 1:
        raise ValueError("n_rays must be at least 1")
    if region.domain != domain:
        raise GridMismatch("region belongs to a different domain")
    starts, dirs = ray_sample(domain, n_rays)
    entry = first_entry_times(region, starts, dirs, np.sqrt(speed), horizon)
    worst = int(np.argmax(entry))
    failing = ~np.isfinite(entry)
    return GccReport(
        holds=not bool(np.any(failing)),
        max_entry_time=float(entry[worst]),
        worst_start=starts[worst],
        worst_direction=dirs[worst],
        n_rays=len(entry),
        n_failing=int(failing.sum()),
        entry_times=entry,
    )


# -- piecewise multiplier condition -------------------------------------------


def _box_distance(points: np.ndarray, box: np.ndarray) -> np.ndarray:
    gap = np.maximum(np.maximum(box[:, 0] - points, points - box[:, 1]), 0.0)
    return np.linalg.norm(gap, axis=1)


def _faces(box: np.ndarray):
    """Yield (face box, axis, outward sign, coordinate)."""
    for axis in range(box.shape[0]):
        for sign, coord in ((-1.0, box[axis, 0]), (1.0, box[axis, 1])):
            face = box.copy()
            face[axis] = (coord, coord)
            yield face, axis, sign, coord


def pmgc_required_mask(domain: Domain, pmgc: PmgcPartition, grid: "Grid") -> np.ndarray:
    """Nodes of the epsilon-neighbourhood of gamma_j(x_j) and of the partition complement."""
    if pmgc.domain != domain or grid.domain != domain:
        raise GridMismatch("partition, grid and domain disagree")
    nodes = grid.nodes
    ext = np.asarray(domain.extents)
    dist = np.full(len(nodes), np.inf)
    owner = np.full(len(nodes), -1)
    for j, (sub, xj) in enumerate(zip(pmgc.subdomains, pmgc.points)):
        box = np.array(sub)
        inside = np.all((nodes > box[:, 0]) & (nodes < box[:, 1]), axis=1)
        owner[inside] = j
        for face, axis, sign, coord in _faces(box):
            if (coord - xj[axis]) * sign > 0:
                dist = np.minimum(dist, _box_distance(nodes, face))
    # complement of the union: zero distance outside every subdomain,
    # otherwise distance to the owning box's faces that lie inside the domain
    dist[owner < 0] = 0.0
    for j, sub in enumerate(pmgc.subdomains):
        sel = owner == j
        if not np.any(sel):
            continue
        box = np.array(sub)
        for face, axis, sign, coord in _faces(box):
            on_boundary = coord <= _EDGE_TOL or coord >= ext[axis] - _EDGE_TOL
            if not on_boundary:
                dist[sel] = np.minimum(dist[sel], _box_distance(nodes[sel], face))
    return dist < pmgc.epsilon


def pmgc_check(region: Region, domain: Domain, pmgc: PmgcPartition, grid: "Grid") -> bool:
    if region.domain != domain:
        raise GridMismatch("region belongs to a different domain")
    required = pmgc_required_mask(domain, pmgc, grid)
    return bool(np.all(region.contains(grid.nodes[required])))
