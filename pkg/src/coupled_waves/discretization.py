"""Uniform grids, the Dirichlet Laplacian, discrete norms and a CG kernel.

Fields are flat arrays over interior nodes in row-major (C) order of the
``(n_x[, n_y])`` node array. Homogeneous Dirichlet values are eliminated, so
``-Delta_h`` is symmetric positive definite.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import fft

from .errors import BreakdownNonSPD, GridMismatch, NoConvergence
from .geometry import Domain

# above this many unknowns the H^-1 path falls back to CG
DIRECT_SOLVE_CAP = 250_000


@dataclass(frozen=True)
class Grid:
    domain: Domain
    n: tuple

    def __post_init__(self):
        n = tuple(int(k) for k in np.atleast_1d(self.n))
        object.__setattr__(self, "n", n)
        if len(n) != self.domain.dim:
            raise ValueError(f"grid has {len(n)} axes but domain has {self.domain.dim}")
        if min(n) < 3:
            raise ValueError(f"need at least 3 interior nodes per axis, got {n}")

    @classmethod
    def uniform(cls, domain: Domain, n) -> "Grid":
        if np.isscalar(n):
            n = (int(n),) * domain.dim
        return cls(domain, tuple(n))

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def h(self) -> tuple:
        return tuple(L / (k + 1) for L, k in zip(self.domain.extents, self.n))

    @property
    def shape(self) -> tuple:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def cell_volume(self) -> float:
        """Quadrature weight h^d of the nodal sum."""
        return float(np.prod(self.h))

    @property
    def min_h(self) -> float:
        return min(self.h)

    def axis_coordinates(self, axis: int) -> np.ndarray:
        h = self.h[axis]
        return h * np.arange(1, self.n[axis] + 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        """(size, dim) array of interior node coordinates."""
        axes = [self.axis_coordinates(i) for i in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def check_same(self, other: "Grid") -> None:
        if self != other:
            raise GridMismatch(f"grids differ: {self.n} on {self.domain} vs {other.n} on {other.domain}")


def _second_difference(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, 2.0 / h**2)
    off = np.full(n - 1, -1.0 / h**2)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """The negative Dirichlet Laplacian ``-Delta_h`` on a grid."""

    grid: Grid
    matrix: sp.csr_matrix = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, x):
        return self.matrix @ x

    @cached_property
    def factor(self):
        return spla.splu(self.matrix.tocsc())

    @cached_property
    def smallest_eigenvalue(self) -> float:
        return float(laplacian_eigenvalues(self.grid).min())


def assemble_laplacian(grid: Grid) -> SparseOperator:
    blocks = [_second_difference(k, h) for k, h in zip(grid.n, grid.h)]
    if grid.dim == 1:
        mat = blocks[0]
    else:
        nx, ny = grid.n
        mat = sp.kron(blocks[0], sp.identity(ny)) + sp.kron(sp.identity(nx), blocks[1])
    mat = sp.csr_matrix(mat)
    mat.sort_indices()
    return SparseOperator(grid, mat)


def laplacian_eigenvalues(grid: Grid) -> np.ndarray:
    """Closed-form spectrum of ``-Delta_h``, flattened in node order."""
    per_axis = []
    for k, h, L in zip(grid.n, grid.h, grid.domain.extents):
        idx = np.arange(1, k + 1)
        per_axis.append(4.0 / h**2 * np.sin(idx * np.pi * h / (2 * L)) ** 2)
    total = per_axis[0]
    for lam in per_axis[1:]:
        total = np.add.outer(total, lam)
    return np.asarray(total).ravel()


def laplacian_power(op: SparseOperator, f, power: float) -> np.ndarray:
    """Apply ``(-Delta_h)^power`` through the orthonormal sine transform."""
    grid = op.grid
    arr = np.asarray(f).reshape(grid.shape + np.shape(f)[1:])
    axes = tuple(range(grid.dim))
    coef = fft.dstn(arr, type=1, norm="ortho", axes=axes)
    lam = laplacian_eigenvalues(grid).reshape(grid.shape)
    scale = lam**power
    coef = coef * scale.reshape(scale.shape + (1,) * (coef.ndim - grid.dim))
    return fft.idstn(coef, type=1, norm="ortho", axes=axes).reshape(np.shape(f))


def eigenmode(grid: Grid, k: Sequence[int]) -> np.ndarray:
    """Discrete sine eigenvector with wave indices ``k``, unit discrete L2 norm."""
    k = tuple(np.atleast_1d(k))
    factors = [
        np.sin(ki * np.pi * grid.axis_coordinates(i) / grid.domain.extents[i]) for i, ki in enumerate(k)
    ]
    mode = factors[0]
    for f in factors[1:]:
        mode = np.multiply.outer(mode, f)
    mode = np.asarray(mode).ravel()
    return mode / norm_l2(mode, grid)


def eigenmode_indices(grid: Grid, count: int) -> list:
    """The ``count`` lowest eigen-index tuples, ordered by eigenvalue."""
    ranges = [range(1, k + 1) for k in grid.n]
    lam = laplacian_eigenvalues(grid)
    idx = list(itertools.product(*ranges))
    order = np.argsort(lam, kind="stable")[:count]
    return [idx[i] for i in order]


class CGResult(NamedTuple):
    solution: np.ndarray
    iterations: int
    history: list


def _euclidean(x, y):
    return float(np.dot(x, y))


def cg_solve(
    apply: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    inner: Optional[Callable[[np.ndarray, np.ndarray], float]] = None,
    tol: float = 1e-10,
    maxiter: Optional[int] = None,
    x0: Optional[np.ndarray] = None,
    callback: Optional[Callable[[np.ndarray], None]] = None,
) -> CGResult:
    """Conjugate gradients for a map that is SPD with respect to ``inner``.

    Convergence is declared when ``|r| <= tol * |rhs|`` in the norm induced
    by ``inner``. ``history`` holds the relative residual after every
    iteration, starting with the initial one.
    """
    inner = inner or _euclidean
    rhs = np.asarray(rhs, dtype=float)
    if maxiter is None:
        maxiter = max(10 * rhs.size, 100)
    rhs_norm = np.sqrt(max(inner(rhs, rhs), 0.0))
    if rhs_norm == 0.0:
        return CGResult(np.zeros_like(rhs), 0, [0.0])

    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    r = rhs - apply(x) if x0 is not None else rhs.copy()
    p = r.copy()
    rr = inner(r, r)
    history = [float(np.sqrt(rr) / rhs_norm)]
    if history[0] <= tol:
        return CGResult(x, 0, history)

    for it in range(1, maxiter + 1):
        q = apply(p)
        curvature = inner(p, q)
        if curvature <= 0.0:
            raise BreakdownNonSPD(
                f"non-positive curvature {curvature:.3e} at iteration {it}; the map is not SPD"
            )
        alpha = rr / curvature
        with np.errstate(over="ignore", invalid="ignore"):
            x += alpha * p
            r -= alpha * q
            rr_new = inner(r, r)
        if not np.isfinite(rr_new) or not np.all(np.isfinite(x)):
            raise NoConvergence(
                f"CG diverged at iteration {it} (best residual {min(history):.3e}); the map is numerically singular",
                iterations=it,
                residual=min(history),
            )
        history.append(float(np.sqrt(max(rr_new, 0.0)) / rhs_norm))
        if callback is not None:
            callback(x)
        if history[-1] <= tol:
            return CGResult(x, it, history)
        p = r + (rr_new / rr) * p
        rr = rr_new

    raise NoConvergence(
        f"CG did not reach tol={tol:g} in {maxiter} iterations (residual {history[-1]:.3e})",
        iterations=maxiter,
        residual=history[-1],
    )


def poisson_solve(op: SparseOperator, rhs, tol: float = 1e-10, method: str = "auto", maxiter=None):
    """Solve ``-Delta_h x = rhs`` to relative residual ``tol``."""
    if not 0.0 < tol < 1.0:
        raise ValueError(f"tol must lie in (0, 1), got {tol}")
    rhs = np.asarray(rhs, dtype=float)
    if method == "auto":
        method = "direct" if op.dimension <= DIRECT_SOLVE_CAP else "cg"
    if method == "direct":
        x = op.factor.solve(rhs)
        bnorm = np.linalg.norm(rhs)
        if bnorm > 0 and np.linalg.norm(op.matrix @ x - rhs) > tol * bnorm:
            # the factorization is exact up to rounding; polish with CG if not
            x = cg_solve(op.matrix.dot, rhs, tol=tol, x0=x, maxiter=maxiter).solution
        return x
    if method == "cg":
        return cg_solve(op.matrix.dot, rhs, tol=tol, maxiter=maxiter).solution
    raise ValueError(f"unknown method {method!r}")


def norm_l2(f, grid: Grid) -> float:
    f = np.asarray(f, dtype=float)
    return float(np.sqrt(grid.cell_volume * np.dot(f, f)))


def gradient_squares(f, grid: Grid) -> float:
    """Sum of squared forward difference quotients, boundary zeros included."""
    arr = np.asarray(f, dtype=float).reshape(grid.shape)
    total = 0.0
    for axis, h in enumerate(grid.h):
        pad = [(0, 0)] * grid.dim
        pad[axis] = (1, 1)
        d = np.diff(np.pad(arr, pad), axis=axis) / h
        total += float(np.sum(d * d))
    return total


def norm_h1(f, grid: Grid, a: float = 1.0) -> float:
    return float(np.sqrt(a * grid.cell_volume * gradient_squares(f, grid)))


def norm_hminus1(f, grid: Grid, op: SparseOperator, tol: float = 1e-10) -> float:
    f = np.asarray(f, dtype=float)
    if not np.any(f):
        return 0.0
    w = poisson_solve(op, f, tol=tol)
    return float(np.sqrt(max(grid.cell_volume * np.dot(f, w), 0.0)))
