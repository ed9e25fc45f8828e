"""Discrete HUM: adjoint solves, the Gramian, its inversion and closed-loop checks.

Conventions
-----------
The controlled system is the conservative one (``c`` enters only through the
control) with a midpoint forcing ``c * f_k`` on the ``v`` equation. The adjoint
state ``Phi`` runs the homogeneous system forward (strong space) or its adjoint
in the weak inner product (weak space); its observation is the midpoint
velocity ``g_k = psi_t(t_{k+1/2})``. For the midpoint scheme one has exactly::

    <U_N, Phi_N>_G - <U_0, Phi_0>_G = dt h^d sum_k (c f_k) . g_k

so choosing ``f = g`` of a second adjoint state and solving backwards from a
zero terminal state defines ``Lambda`` with
``<Lambda Phi, Phi~>_G = dt h^d sum_k c g_k . g~_k``. No time derivative of the
trace is ever formed: the pairing above is the discrete integration by parts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .discretization import Grid, cg_solve, eigenmode, eigenmode_indices, laplacian_eigenvalues
from .dynamics import Problem, StateVector, Stepper, energy_strong
from .errors import ConservationViolated, ZeroInitialData

CONSERVATION_TOL = 1e-7
SPACES = ("strong", "weak")


def default_space(a: float) -> str:
    """The space in which the Gramian is coercive: strong for ``a = 1``, weak otherwise."""
    return "strong" if a == 1.0 else "weak"


def default_horizon(grid: Grid, a: float) -> float:
    """Heuristic observability time: 1.5 round trips across the diameter at the slowest speed."""
    return 1.5 * 2.0 * grid.domain.diameter / np.sqrt(min(a, 1.0))


@dataclass
class AdjointData:
    state: StateVector
    space: str = "strong"

    def __post_init__(self):
        if self.space not in SPACES:
            raise ValueError(f"space must be one of {SPACES}, got {self.space!r}")

    def flat(self) -> np.ndarray:
        return self.state.flat()


@dataclass
class ControlTrace:
    """Half-step times, the observed ``psi_t`` on ``supp c`` and the forcing ``c psi_t``."""

    times: np.ndarray
    nodes: np.ndarray
    velocity: np.ndarray  # (steps, len(nodes))
    weights: np.ndarray  # c on ``nodes``

    @property
    def control(self) -> np.ndarray:
        return self.velocity * self.weights

    def source(self, k: int, size: int) -> np.ndarray:
        """Nodal forcing of step ``k`` on the full grid."""
        out = np.zeros(size)
        out[self.nodes] = self.control[k]
        return out

    def columns(self) -> dict:
        cols = {"t": self.times}
        ctl = self.control
        for j, node in enumerate(self.nodes):
            cols[f"node{node}"] = ctl[:, j]
        return cols

    def scaled(self, alpha: float) -> "ControlTrace":
        return ControlTrace(self.times, self.nodes, alpha * self.velocity, self.weights)


@dataclass
class AdjointSummary:
    initial_energy: float
    final_energy: float
    drift: float
    final: StateVector


@dataclass
class GramianReport:
    minimizer: AdjointData
    iterations: int
    history: list
    observability_ratio: float
    terminal_residual: float
    control: ControlTrace = field(repr=False)
    cg_residual: float = float("nan")

    def summary(self) -> str:
        return "\n".join(
            [
                f"space: {self.minimizer.space}",
                f"cg_iterations: {self.iterations}",
                f"cg_final_residual: {self.cg_residual!r}",
                f"observability_ratio: {self.observability_ratio!r}",
                f"terminal_residual: {self.terminal_residual!r}",
            ]
        )


class HumContext:
    """Steppers, Gram weights and the time grid shared by every HUM operation on one problem."""

    def __init__(self, problem: Problem, space: Optional[str] = None):
        if hasattr(problem, "problem"):
            problem = problem.problem()
        self.problem = problem
        self.space = space or default_space(problem.coeffs.a)
        if self.space not in SPACES:
            raise ValueError(f"space must be one of {SPACES}, got {self.space!r}")
        self.grid = problem.grid
        self.lap = problem.lap
        self.n = self.grid.size
        self.dt = problem.dt
        self.steps = problem.n_steps
        coeffs = problem.coeffs
        self.c = coeffs.c.samples
        self.support = np.flatnonzero(self.c > 0)
        adjoint_mode = "homogeneous" if self.space == "strong" else "weak-adjoint"
        self.adjoint = Stepper(self.lap, coeffs, self.dt, adjoint_mode)
        self.forward = Stepper(self.lap, coeffs, self.dt, "homogeneous")
        self.backward = Stepper(self.lap, coeffs, -self.dt, "homogeneous")

    # -- inner products ---------------------------------------------------------

    def gram_apply(self, flat: np.ndarray) -> np.ndarray:
        n, hd, K = self.n, self.grid.cell_volume, self.lap.matrix
        u, v, y, z = (flat[i * n : (i + 1) * n] for i in range(4))
        a = self.problem.coeffs.a
        if self.space == "strong":
            parts = [a * (K @ u), v, K @ y, z]
        else:
            parts = [a * (K @ u), v, y, self.lap.factor.solve(z)]
        return hd * np.concatenate(parts)

    def inner(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.dot(x, self.gram_apply(y)))

    def norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(x, x), 0.0)))

    def conserved(self, flat: np.ndarray) -> float:
        """Invariant of the adjoint flow: the strong energy of the lifted state."""
        if self.space == "weak":
            flat = self.adjoint.lift(flat)
        return energy_strong(StateVector.from_flat(flat), self.problem.coeffs, self.lap)

    # -- building blocks ---------------------------------------------------------

    def observe(self, phi0: np.ndarray):
        """Run the adjoint flow, returning ``(psi_t at half steps on supp c, Phi_N)``."""
        n = self.n
        trace = np.empty((self.steps, self.support.size))
        flat = np.asarray(phi0, dtype=float)
        for k in range(self.steps):
            new = self.adjoint.advance(flat)
            trace[k] = 0.5 * (flat[n : 2 * n] + new[n : 2 * n])[self.support]
            flat = new
        return trace, flat

    def trace_object(self, trace: np.ndarray) -> ControlTrace:
        times = (np.arange(self.steps) + 0.5) * self.dt
        return ControlTrace(times, self.support, trace, self.c[self.support])

    def observability_integral(self, trace: np.ndarray) -> float:
        w = self.c[self.support]
        return float(self.dt * self.grid.cell_volume * np.sum(w * trace * trace))

    def retrograde(self, trace: np.ndarray) -> np.ndarray:
        """Initial state of the controlled system driven to zero at ``T`` by ``c * trace``."""
        flat = np.zeros(4 * self.n)
        w = self.c[self.support]
        src = np.zeros(self.n)
        for k in range(self.steps - 1, -1, -1):
            src[self.support] = w * trace[k]
            flat = self.backward.advance(flat, src)
        return flat

    def controlled(self, u0: np.ndarray, trace: Optional[np.ndarray]) -> np.ndarray:
        flat = np.asarray(u0, dtype=float)
        src = np.zeros(self.n)
        w = self.c[self.support]
        for k in range(self.steps):
            if trace is None:
                flat = self.forward.advance(flat)
            else:
                src[self.support] = w * trace[k]
                flat = self.forward.advance(flat, src)
        return flat

    def gramian(self, phi0: np.ndarray) -> np.ndarray:
        trace, _ = self.observe(phi0)
        return -self.retrograde(trace)

    # -- low-mode subspace -------------------------------------------------------

    def low_mode_basis(self, modes: int) -> np.ndarray:
        """Columns form a ``G``-orthonormal basis of the ``modes`` lowest sine modes per component."""
        a = self.problem.coeffs.a
        lam = laplacian_eigenvalues(self.grid)
        idx = eigenmode_indices(self.grid, modes)
        order = np.argsort(lam, kind="stable")[:modes]
        n = self.n
        cols = []
        # G-norm of a unit-L2 mode in each block: sqrt of the block weight's eigenvalue
        if self.space == "strong":
            weights = lambda mu: (np.sqrt(a * mu), 1.0, np.sqrt(mu), 1.0)
        else:
            weights = lambda mu: (np.sqrt(a * mu), 1.0, 1.0, 1.0 / np.sqrt(mu))
        for block in range(4):
            for k, i in zip(idx, order):
                col = np.zeros(4 * n)
                col[block * n : (block + 1) * n] = eigenmode(self.grid, k) / weights(lam[i])[block]
                cols.append(col)
        return np.array(cols).T


def _context(problem, space, ctx) -> HumContext:
    if ctx is not None:
        return ctx
    return HumContext(problem, space)


def _as_flat(data) -> np.ndarray:
    if isinstance(data, AdjointData):
        return data.flat()
    if isinstance(data, StateVector):
        return data.flat()
    return np.asarray(data, dtype=float)


def solve_adjoint(phi0, problem=None, space: Optional[str] = None, ctx: Optional[HumContext] = None):
    """Run the conservative adjoint flow and return ``(summary, ControlTrace)``.

    Raises ``ConservationViolated`` when the invariant drifts by more than
    ``1e-7`` relative, which only happens for a misconfigured scheme.
    """
    if isinstance(phi0, AdjointData) and space is None:
        space = phi0.space
    ctx = _context(problem, space, ctx)
    flat = _as_flat(phi0)
    e0 = ctx.conserved(flat)
    trace, final = ctx.observe(flat)
    e1 = ctx.conserved(final)
    drift = abs(e1 - e0) / e0 if e0 > 0 else abs(e1)
    if drift > CONSERVATION_TOL:
        raise ConservationViolated(f"adjoint invariant drifted by {drift:.3e} relative", drift=drift)
    summary = AdjointSummary(e0, e1, drift, StateVector.from_flat(final))
    return summary, ctx.trace_object(trace)


def observability_ratio(phi0, problem=None, space: Optional[str] = None, ctx: Optional[HumContext] = None) -> float:
    """``dt h^d sum c |psi_t|^2`` over the half-step trace, divided by ``||Phi_0||^2``."""
    if isinstance(phi0, AdjointData) and space is None:
        space = phi0.space
    ctx = _context(problem, space, ctx)
    flat = _as_flat(phi0)
    norm2 = ctx.inner(flat, flat)
    if not norm2 > 0:
        raise ZeroInitialData("observability ratio needs nonzero initial data")
    trace, _ = ctx.observe(flat)
    return ctx.observability_integral(trace) / norm2


def apply_gramian(phi0, problem=None, space: Optional[str] = None, ctx: Optional[HumContext] = None) -> AdjointData:
    """``Lambda Phi_0``: observe ``Phi_0``, then solve the retrograde controlled system from zero."""
    if isinstance(phi0, AdjointData) and space is None:
        space = phi0.space
    ctx = _context(problem, space, ctx)
    return AdjointData(StateVector.from_flat(ctx.gramian(_as_flat(phi0))), ctx.space)


def assemble_gramian(problem=None, space: Optional[str] = None, ctx: Optional[HumContext] = None) -> np.ndarray:
    """Dense ``Lambda`` built column by column from unit vectors (small grids only)."""
    ctx = _context(problem, space, ctx)
    N = 4 * ctx.n
    cols = np.empty((N, N))
    e = np.zeros(N)
    for j in range(N):
        e[j] = 1.0
        cols[:, j] = ctx.gramian(e)
        e[j] = 0.0
    return cols


def hum_solve(
    u0,
    problem=None,
    tol: float = 1e-10,
    space: Optional[str] = None,
    tikhonov: float = 0.0,
    maxiter: Optional[int] = None,
    ctx: Optional[HumContext] = None,
    callback: Optional[Callable[[np.ndarray], None]] = None,
) -> GramianReport:
    """Solve ``Lambda Phi_0 = -U_0`` by CG in the tagged inner product and verify the control."""
    if not 0.0 < tol < 1.0:
        raise ValueError(f"tol must lie in (0, 1), got {tol}")
    ctx = _context(problem, space, ctx)
    rhs = -_as_flat(u0)
    N = rhs.size

    def apply(x):
        out = ctx.gramian(x)
        if tikhonov:
            out = out + tikhonov * x
        return out

    if not np.any(rhs):
        phi = np.zeros(N)
        trace = np.zeros((ctx.steps, ctx.support.size))
        return GramianReport(
            AdjointData(StateVector.from_flat(phi), ctx.space), 0, [0.0], 0.0, 0.0, ctx.trace_object(trace), 0.0
        )
    result = cg_solve(apply, rhs, inner=ctx.inner, tol=tol, maxiter=maxiter or 20 * N, callback=callback)
    phi = result.solution
    trace, _ = ctx.observe(phi)
    control = ctx.trace_object(trace)
    norm2 = ctx.inner(phi, phi)
    ratio = ctx.observability_integral(trace) / norm2 if norm2 > 0 else 0.0
    terminal = verify_control(u0, control, ctx=ctx)
    return GramianReport(
        AdjointData(StateVector.from_flat(phi), ctx.space),
        result.iterations,
        result.history,
        ratio,
        terminal,
        control,
        float(result.history[-1]),
    )


def verify_control(u0, control: Optional[ControlTrace], problem=None, space: Optional[str] = None, ctx: Optional[HumContext] = None) -> float:
    """Run the controlled system from ``U_0`` and return ``||U(T)|| / ||U_0||``."""
    ctx = _context(problem, space, ctx)
    flat = _as_flat(u0)
    if control is not None and control.velocity.shape != (ctx.steps, ctx.support.size):
        raise ValueError(
            f"control trace has shape {control.velocity.shape}, expected {(ctx.steps, ctx.support.size)}"
        )
    trace = None if control is None else control.velocity
    final = ctx.controlled(flat, trace)
    u_norm = ctx.norm(flat)
    if u_norm == 0.0:
        return ctx.norm(final)
    return ctx.norm(final) / u_norm


# -- observability estimates -----------------------------------------------------


@dataclass
class ObservabilityEstimate:
    random_ratios: np.ndarray
    iterate_ratios: np.ndarray
    modes: int

    @property
    def minimum(self) -> float:
        return float(min(self.random_ratios.min(), self.iterate_ratios.min()))


def observability_estimate(
    problem=None,
    seed: int = 0,
    n_random: int = 50,
    n_iterates: int = 20,
    modes: int = 10,
    space: Optional[str] = None,
    ctx: Optional[HumContext] = None,
) -> ObservabilityEstimate:
    """Lower estimate of the observability constant on the ``modes`` lowest sine modes.

    Random ``Phi_0`` draw standard normal coordinates in a ``G``-orthonormal
    basis of the low modes. The inverse-power iterates run on ``Lambda``
    compressed to the same subspace, whose matrix costs one adjoint solve per
    basis vector. High grid modes are left out on purpose: their group
    velocity vanishes as ``h -> 0``, so no grid-independent bound covers them.
    """
    ctx = _context(problem, space, ctx)
    basis = ctx.low_mode_basis(modes)
    traces = [ctx.observe(basis[:, j])[0] for j in range(basis.shape[1])]
    w = ctx.c[ctx.support] * ctx.dt * ctx.grid.cell_volume
    flat_traces = np.array([t.ravel() for t in traces])
    weight = np.tile(w, ctx.steps)
    Q = (flat_traces * weight) @ flat_traces.T
    Q = 0.5 * (Q + Q.T)

    rng = np.random.default_rng(seed)
    coefs = rng.standard_normal((n_random, Q.shape[0]))
    random_ratios = np.einsum("ij,jk,ik->i", coefs, Q, coefs) / np.einsum("ij,ij->i", coefs, coefs)

    x = rng.standard_normal(Q.shape[0])
    iterate_ratios = []
    for _ in range(n_iterates):
        try:
            x = np.linalg.solve(Q, x)
        except np.linalg.LinAlgError:
            iterate_ratios.append(0.0)
            break
        x /= np.linalg.norm(x)
        iterate_ratios.append(float(x @ Q @ x))
    return ObservabilityEstimate(random_ratios, np.array(iterate_ratios), modes)


def random_adjoint_data(grid: Grid, rng: np.random.Generator, smooth_modes: Optional[int] = None) -> np.ndarray:
    """Seeded random flat state; nodal white noise or a random low-mode combination."""
    n = grid.size
    if smooth_modes is None:
        return rng.standard_normal(4 * n)
    idx = eigenmode_indices(grid, smooth_modes)
    modes = np.array([eigenmode(grid, k) for k in idx])
    return np.concatenate([rng.standard_normal(smooth_modes) @ modes for _ in range(4)])
