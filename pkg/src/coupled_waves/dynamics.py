"""Implicit-midpoint integration of the coupled damped wave system.

First-order form with ``U = (u, v, y, z)``, ``v = u_t``, ``z = y_t``::

    u' = v
    v' = -a K u - c v - b z  (+ c f   when a control f acts)
    y' = z
    z' = -K y + b v

with ``K = -Delta_h``. Mode ``homogeneous`` drops ``c v``. Mode
``weak-adjoint`` integrates the adjoint of the homogeneous generator in the
weak inner product, which equals the homogeneous system conjugated by
``(psi, psi_t, phi, phi_t) -> (psi, psi_t, K^-1 phi, K^-1 phi_t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import Grid, SparseOperator, assemble_laplacian, poisson_solve
from .errors import DegenerateWindow, NonPositiveEnergy, NoConvergence
from .geometry import CoefficientField

MODES = ("damped", "homogeneous", "weak-adjoint")
DT_FACTOR = 0.4
STEP_RESIDUAL_TOL = 1e-11


@dataclass(frozen=True, eq=False)
class SystemCoefficients:
    a: float
    b: CoefficientField
    c: CoefficientField

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if self.b.grid != self.c.grid:
            from .errors import GridMismatch

            raise GridMismatch("b and c are sampled on different grids")
        if np.any(self.c.samples < 0):
            raise ValueError("c must be nonnegative")

    @property
    def grid(self) -> Grid:
        return self.c.grid


@dataclass
class StateVector:
    u: np.ndarray
    v: np.ndarray
    y: np.ndarray
    z: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "StateVector":
        return cls(*(np.zeros(n) for _ in range(4)))

    @classmethod
    def from_flat(cls, flat) -> "StateVector":
        flat = np.asarray(flat, dtype=float)
        n = flat.size // 4
        return cls(*(flat[i * n : (i + 1) * n].copy() for i in range(4)))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.u, self.v, self.y, self.z])

    @property
    def size(self) -> int:
        return self.u.size

    def __add__(self, other):
        return StateVector.from_flat(self.flat() + other.flat())

    def __sub__(self, other):
        return StateVector.from_flat(self.flat() - other.flat())

    def __mul__(self, alpha):
        return StateVector.from_flat(alpha * self.flat())

    __rmul__ = __mul__


def generator_matrix(lap: SparseOperator, coeffs: SystemCoefficients, mode: str = "damped") -> sp.csr_matrix:
    """Sparse ``A_h`` for the damped or homogeneous generator."""
    if mode not in ("damped", "homogeneous"):
        raise ValueError(f"no sparse generator for mode {mode!r}")
    n = lap.dimension
    K = lap.matrix
    I = sp.identity(n, format="csr")
    B = sp.diags(coeffs.b.samples)
    C = sp.diags(coeffs.c.samples if mode == "damped" else np.zeros(n))
    A = sp.bmat(
        [
            [None, I, None, None],
            [-coeffs.a * K, -C, None, -B],
            [None, None, None, I],
            [None, B, -K, None],
        ],
        format="csr",
    )
    return A


def default_dt(grid: Grid, a: float, factor: float = DT_FACTOR) -> float:
    return factor * grid.min_h / np.sqrt(max(a, 1.0))


class Stepper:
    """Implicit midpoint map ``U -> (I - dt/2 A)^{-1} ((I + dt/2 A) U + dt F)``.

    ``F`` is an optional midpoint source acting on the ``v`` equation. A
    negative ``dt`` integrates backwards in time.
    """

    def __init__(self, lap: SparseOperator, coeffs: SystemCoefficients, dt: float, mode: str = "damped"):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if dt == 0:
            raise ValueError("dt must be nonzero")
        self.lap = lap
        self.coeffs = coeffs
        self.dt = float(dt)
        self.mode = mode
        self.n = lap.dimension
        base = "damped" if mode == "damped" else "homogeneous"
        A = generator_matrix(lap, coeffs, base)
        eye = sp.identity(4 * self.n, format="csc")
        self._plus = (eye + 0.5 * self.dt * A).tocsr()
        self._minus = (eye - 0.5 * self.dt * A).tocsc()
        self._lu = spla.splu(self._minus)

    def _solve(self, rhs: np.ndarray) -> np.ndarray:
        x = self._lu.solve(rhs)
        res = np.linalg.norm(self._minus @ x - rhs)
        scale = np.linalg.norm(rhs)
        if scale > 0 and res > STEP_RESIDUAL_TOL * scale:
            x = x + self._lu.solve(rhs - self._minus @ x)
            res = np.linalg.norm(self._minus @ x - rhs)
            if res > STEP_RESIDUAL_TOL * scale:
                raise NoConvergence(f"midpoint solve residual {res / scale:.2e} above {STEP_RESIDUAL_TOL:g}")
        return x

    def lift(self, flat: np.ndarray) -> np.ndarray:
        n = self.n
        out = flat.copy()
        out[2 * n : 3 * n] = self.lap.factor.solve(flat[2 * n : 3 * n])
        out[3 * n :] = self.lap.factor.solve(flat[3 * n :])
        return out

    def lower(self, flat: np.ndarray) -> np.ndarray:
        n = self.n
        out = flat.copy()
        out[2 * n : 3 * n] = self.lap.matrix @ flat[2 * n : 3 * n]
        out[3 * n :] = self.lap.matrix @ flat[3 * n :]
        return out

    def advance(self, flat: np.ndarray, source: Optional[np.ndarray] = None) -> np.ndarray:
        """One step on a flat state; ``source`` is the nodal v-equation forcing."""
        if self.mode == "weak-adjoint":
            if source is not None:
                raise ValueError("the weak adjoint carries no source")
            return self.lower(self._solve(self._plus @ self.lift(flat)))
        rhs = self._plus @ flat
        if source is not None:
            rhs[self.n : 2 * self.n] += self.dt * source
        return self._solve(rhs)

    def step(self, state: StateVector, source=None) -> StateVector:
        return StateVector.from_flat(self.advance(state.flat(), source))


def step(state: StateVector, dt: float, coeffs: SystemCoefficients, lap: SparseOperator, mode: str = "damped") -> StateVector:
    return Stepper(lap, coeffs, dt, mode).step(state)


# -- energies -------------------------------------------------------------------


def energy_strong(state: StateVector, coeffs: SystemCoefficients, lap: Optional[SparseOperator] = None) -> float:
    lap = lap or assemble_laplacian(coeffs.grid)
    hd = coeffs.grid.cell_volume
    K = lap.matrix
    return 0.5 * hd * float(
        state.v @ state.v + coeffs.a * (state.u @ (K @ state.u)) + state.z @ state.z + state.y @ (K @ state.y)
    )


def energy_mixed(state: StateVector, coeffs: SystemCoefficients, lap: Optional[SparseOperator] = None, tol: float = 1e-10):
    """Return ``(e1, e2tilde, Em)``; the ``z`` part is measured in H^-1."""
    lap = lap or assemble_laplacian(coeffs.grid)
    hd = coeffs.grid.cell_volume
    e1 = 0.5 * hd * float(coeffs.a * (state.u @ (lap.matrix @ state.u)) + state.v @ state.v)
    hm1 = 0.0
    if np.any(state.z):
        hm1 = float(state.z @ poisson_solve(lap, state.z, tol=tol))
    e2 = 0.5 * hd * (hm1 + float(state.y @ state.y))
    return e1, e2, e1 + e2


# -- simulation -----------------------------------------------------------------


@dataclass
class Problem:
    """Resolved numerical setup shared by every run on one scenario."""

    grid: Grid
    coeffs: SystemCoefficients
    horizon: float
    dt: Optional[float] = None
    sample_stride: int = 1
    poisson_tol: float = 1e-10
    lap: SparseOperator = field(default=None, repr=False)

    def __post_init__(self):
        if self.lap is None:
            self.lap = assemble_laplacian(self.grid)
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        target = self.dt if self.dt is not None else default_dt(self.grid, self.coeffs.a)
        self.n_steps = max(1, int(np.ceil(self.horizon / target - 1e-9)))
        self.dt = self.horizon / self.n_steps

    def with_coeffs(self, coeffs: SystemCoefficients) -> "Problem":
        return Problem(self.grid, coeffs, self.horizon, self.dt, self.sample_stride, self.poisson_tol, self.lap)

    def with_horizon(self, horizon: float) -> "Problem":
        return Problem(self.grid, self.coeffs, horizon, self.dt, self.sample_stride, self.poisson_tol, self.lap)


@dataclass
class EnergyTrace:
    times: np.ndarray
    E: np.ndarray
    e1: np.ndarray
    e2tilde: np.ndarray
    Em: np.ndarray
    dissipation: np.ndarray  # dt * sum c |v_mid|^2 h^d accumulated since previous sample

    COLUMNS = ("t", "E", "e1", "e2tilde", "Em", "dissipation")

    def columns(self) -> dict:
        return {
            "t": self.times,
            "E": self.E,
            "e1": self.e1,
            "e2tilde": self.e2tilde,
            "Em": self.Em,
            "dissipation": self.dissipation,
        }


@dataclass
class VelocityTrace:
    """Midpoint velocities ``psi_t`` at half steps on the support of ``c``."""

    times: np.ndarray
    nodes: np.ndarray
    values: np.ndarray  # (steps, len(nodes))
    weights: np.ndarray  # c at ``nodes``

    @property
    def observed(self) -> np.ndarray:
        return self.values * self.weights


@dataclass
class SimulationResult:
    trace: EnergyTrace
    final: StateVector
    velocity: Optional[VelocityTrace] = None
    steps: int = 0

    def __iter__(self):
        return iter((self.trace, self.final, self.velocity))


def simulate(
    problem,
    initial: StateVector,
    mode: str = "damped",
    record: bool = False,
    stepper: Optional[Stepper] = None,
    mixed: bool = True,
) -> SimulationResult:
    """Advance ``initial`` to the horizon, sampling energies every ``sample_stride`` steps."""
    if hasattr(problem, "problem"):
        problem = problem.problem()
    coeffs, lap, grid = problem.coeffs, problem.lap, problem.grid
    if stepper is None:
        stepper = Stepper(lap, coeffs, problem.dt, mode)
    hd = grid.cell_volume
    c = coeffs.c.samples
    n = grid.size
    dt = abs(problem.dt)

    def sample(state):
        E = energy_strong(state, coeffs, lap)
        if mixed:
            e1, e2, em = energy_mixed(state, coeffs, lap, problem.poisson_tol)
        else:
            e1 = e2 = em = np.nan
        return E, e1, e2, em

    times, rows, diss = [0.0], [sample(initial)], [0.0]
    support = np.flatnonzero(c > 0)
    velocities = np.empty((problem.n_steps, support.size)) if record else None
    flat = initial.flat()
    acc = 0.0
    for k in range(problem.n_steps):
        new = stepper.advance(flat)
        v_mid = 0.5 * (flat[n : 2 * n] + new[n : 2 * n])
        if mode == "damped":
            acc += dt * hd * float(c @ (v_mid * v_mid))
        if record:
            velocities[k] = v_mid[support]
        flat = new
        if (k + 1) % problem.sample_stride == 0 or k + 1 == problem.n_steps:
            times.append((k + 1) * problem.dt)
            rows.append(sample(StateVector.from_flat(flat)))
            diss.append(acc)
            acc = 0.0
    rows = np.array(rows)
    trace = EnergyTrace(np.array(times), rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3], np.array(diss))
    vel = None
    if record:
        half = (np.arange(problem.n_steps) + 0.5) * problem.dt
        vel = VelocityTrace(half, support, velocities, c[support])
    return SimulationResult(trace, StateVector.from_flat(flat), vel, problem.n_steps)


# -- decay fits -----------------------------------------------------------------


@dataclass
class DecayFit:
    M: float
    theta: float
    residual: float
    window: tuple
    amplitude: float  # exp(intercept) of the log-linear fit, in energy units
    decay_not_observed: bool = False
    n_samples: int = 0

    def bound(self, t, E0):
        return self.M * np.exp(-self.theta * np.asarray(t)) * E0


def fit_decay(trace: EnergyTrace, which: str = "strong", window=None) -> DecayFit:
    """Least-squares fit of ``log E`` against ``t`` with a certified prefactor ``M``.

    The rate comes from the samples inside ``window`` (default ``[0.2 T, T]``);
    ``M`` is the smallest constant, at least 1, for which
    ``E(t) <= M exp(-theta t) E(0)`` holds at every sample with ``t <= t_max``.
    """
    series = {"strong": trace.E, "mixed": trace.Em}[which]
    t = trace.times
    if window is None:
        window = (0.2 * t[-1], t[-1])
    t_min, t_max = window
    sel = (t >= t_min - 1e-12) & (t <= t_max + 1e-12)
    if sel.sum() < 10:
        raise DegenerateWindow(f"window {window} holds {int(sel.sum())} samples, need at least 10")
    E = series[sel]
    if np.any(~(E > 0)) or not series[0] > 0:
        raise NonPositiveEnergy("energy must be strictly positive on the fit window")
    ts = t[sel]
    slope, intercept = np.polyfit(ts, np.log(E), 1)
    resid = np.log(E) - (slope * ts + intercept)
    theta = -float(slope)
    not_observed = theta <= 1e-12
    if not_observed:
        theta = 0.0
    # certify every sample up to the window end, not only those inside it
    upto = t <= t_max + 1e-12
    M = float(np.max(series[upto] * np.exp(theta * t[upto]) / series[0]))
    return DecayFit(
        M=max(1.0, M),
        theta=theta,
        residual=float(np.sqrt(np.mean(resid**2))),
        window=(float(t_min), float(t_max)),
        amplitude=float(np.exp(intercept)),
        decay_not_observed=not_observed,
        n_samples=int(sel.sum()),
    )
