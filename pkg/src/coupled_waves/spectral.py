"""Discrete generators, spectra and resolvent norms on the imaginary axis.

Operator norms are taken in the energy inner product of the chosen space:
``strong`` uses ``(a H^1_0) x L^2 x H^1_0 x L^2``, ``weak`` uses
``(a H^1_0) x L^2 x L^2 x H^-1``. With Gram matrix ``G`` the norm of ``X`` is
the Euclidean norm of ``G^{1/2} X G^{-1/2}``; the square roots are exact
through the sine transform that diagonalizes ``-Delta_h``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize_scalar

from .discretization import Grid, SparseOperator, assemble_laplacian, laplacian_power
from .dynamics import SystemCoefficients, generator_matrix
from .errors import OnSpectrum, SizeCap, SolverError

SPACES = ("strong", "weak")
DENSE_CAP = 4 * 2500
ON_SPECTRUM_RTOL = 1e-9


@dataclass(eq=False)
class GeneratorMatrix:
    sparse: sp.csr_matrix = field(repr=False)
    space: str
    lap: SparseOperator = field(repr=False)
    coeffs: SystemCoefficients = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.sparse.shape[0]

    @property
    def n(self) -> int:
        return self.lap.dimension

    @cached_property
    def dense(self) -> np.ndarray:
        return self.sparse.toarray()

    def _block_weights(self):
        hd = self.lap.grid.cell_volume
        a = self.coeffs.a
        if self.space == "strong":
            return [(a * hd, 1.0), (hd, 0.0), (hd, 1.0), (hd, 0.0)]
        return [(a * hd, 1.0), (hd, 0.0), (hd, 0.0), (hd, -1.0)]

    @cached_property
    def gram(self) -> np.ndarray:
        K = self.lap.matrix.toarray()
        n = self.n
        eye = np.eye(n)
        blocks = []
        for w, p in self._block_weights():
            if p == 0.0:
                blocks.append(w * eye)
            elif p == 1.0:
                blocks.append(w * K)
            else:
                blocks.append(w * np.linalg.inv(K))
        return sla.block_diag(*blocks)

    def gram_sqrt(self, x, sign: int = 1) -> np.ndarray:
        """Apply ``G^{sign/2}`` to a real or complex vector (or column stack)."""
        x = np.asarray(x)
        if np.iscomplexobj(x):
            return self.gram_sqrt(x.real, sign) + 1j * self.gram_sqrt(x.imag, sign)
        n = self.n
        out = np.empty_like(x, dtype=float)
        for i, (w, p) in enumerate(self._block_weights()):
            blk = x[i * n : (i + 1) * n]
            scaled = laplacian_power(self.lap, blk, sign * p / 2) if p != 0.0 else blk
            out[i * n : (i + 1) * n] = w ** (sign / 2) * scaled
        return out

    def inner(self, x, y) -> float:
        return float(np.dot(self.gram_sqrt(x), self.gram_sqrt(y)))

    @cached_property
    def symmetrized(self) -> np.ndarray:
        """Dense ``G^{1/2} A G^{-1/2}``; its Euclidean geometry is the tagged one."""
        right = self.gram_sqrt(np.eye(self.dimension), -1)
        return self.gram_sqrt(self.dense @ right, 1)

    def dissipativity_defect(self) -> float:
        """Largest eigenvalue of the symmetric part of ``G A`` (<= 0 when dissipative)."""
        GA = self.gram @ self.dense
        return float(np.linalg.eigvalsh(0.5 * (GA + GA.T)).max())


def assemble_generator(
    grid: Grid,
    coeffs: SystemCoefficients,
    space: str = "strong",
    lap: Optional[SparseOperator] = None,
    dense_cap: Optional[int] = DENSE_CAP,
) -> GeneratorMatrix:
    if space not in SPACES:
        raise ValueError(f"space must be one of {SPACES}, got {space!r}")
    if dense_cap is not None and 4 * grid.size > dense_cap:
        raise SizeCap(f"generator dimension {4 * grid.size} exceeds the dense cap {dense_cap}")
    lap = lap or assemble_laplacian(grid)
    A = generator_matrix(lap, coeffs, "damped")
    return GeneratorMatrix(A, space, lap, coeffs)


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    abscissa: float


def spectrum(gen: GeneratorMatrix, subsystem: Optional[str] = None) -> Spectrum:
    """Eigenvalues sorted by decreasing real part, and the spectral abscissa.

    With ``b = 0`` the two waves decouple; ``subsystem="u"`` or ``"y"`` then
    restricts to the invariant block of that wave.
    """
    mat = gen.dense
    if subsystem is not None:
        if subsystem not in ("u", "y"):
            raise ValueError(f"subsystem must be 'u' or 'y', got {subsystem!r}")
        if np.any(gen.coeffs.b.samples != 0):
            raise ValueError("the wave blocks are only invariant when b vanishes")
        n = gen.n
        sl = slice(0, 2 * n) if subsystem == "u" else slice(2 * n, 4 * n)
        mat = mat[sl, sl]
    try:
        ev = sla.eigvals(mat)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"eigenvalue solver failed: {exc}") from exc
    order = np.lexsort((ev.imag, -ev.real))
    ev = ev[order]
    return Spectrum(ev, float(ev.real.max()))


def _on_spectrum_threshold(beta: float) -> float:
    return ON_SPECTRUM_RTOL * max(1.0, abs(beta))


def smallest_singular_value(gen: GeneratorMatrix, beta: float, method: str = "auto") -> float:
    """``sigma_min(i beta - A)`` in the tagged geometry."""
    if method == "auto":
        method = "dense" if gen.dimension <= 400 else "sparse"
    if method == "dense":
        shifted = 1j * beta * np.eye(gen.dimension) - gen.symmetrized
        return float(sla.svdvals(shifted).min())
    if method != "sparse":
        raise ValueError(f"unknown method {method!r}")
    N = gen.dimension
    shifted = (1j * beta * sp.identity(N, format="csc") - gen.sparse.tocsc()).tocsc()
    try:
        lu = spla.splu(shifted)
    except RuntimeError:  # exactly singular
        return 0.0

    def normal(x):
        w = lu.solve(gen.gram_sqrt(x, -1).astype(complex))
        w = gen.gram_sqrt(w, 1)
        w = gen.gram_sqrt(w, 1)
        w = lu.solve(w.astype(complex), trans="H")
        return gen.gram_sqrt(w, -1)

    op = spla.LinearOperator((N, N), matvec=normal, dtype=complex)
    rng = np.random.default_rng(0)
    v0 = rng.standard_normal(N) + 0j
    top = spla.eigsh(op, k=1, which="LA", v0=v0, tol=1e-12, return_eigenvectors=False, ncv=min(N, 30))[0]
    if not np.isfinite(top) or top <= 0:
        return 0.0
    return float(1.0 / np.sqrt(top.real))


def resolvent_norm(gen: GeneratorMatrix, beta: float, method: str = "auto") -> float:
    """``||(i beta I - A_h)^{-1}||`` in the tagged inner product."""
    sigma = smallest_singular_value(gen, beta, method)
    if sigma <= _on_spectrum_threshold(beta):
        raise OnSpectrum(f"i*{beta:.12g} lies on the discrete spectrum (sigma_min={sigma:.3e})", beta=beta)
    return 1.0 / sigma


@dataclass
class ResolventCurve:
    betas: np.ndarray
    norms: np.ndarray  # nan at flagged points
    flagged: np.ndarray
    refined: np.ndarray

    @property
    def sup(self) -> float:
        vals = self.norms[~self.flagged]
        return float(vals.max()) if vals.size else float("nan")

    @property
    def sup_beta(self) -> float:
        vals = np.where(self.flagged, -np.inf, self.norms)
        return float(self.betas[int(np.argmax(vals))])

    @property
    def flagged_betas(self) -> np.ndarray:
        return self.betas[self.flagged]

    def columns(self) -> dict:
        return {"beta": self.betas, "norm": self.norms, "flagged": self.flagged.astype(int)}


def resolvent_scan(
    gen: GeneratorMatrix,
    beta_max: float,
    n_points: int,
    refine: Optional[int] = 20,
    seeds: Sequence[float] = (),
    extra_betas: Sequence[float] = (),
    method: str = "auto",
    jobs: int = 1,
) -> ResolventCurve:
    """Scan ``[0, beta_max]`` uniformly, then sharpen the largest local peaks.

    ``refine`` local maxima of the sampled norm (all of them when ``None``)
    are maximized by bounded scalar search between their grid neighbours,
    and so is a window of one grid step around every entry of ``seeds``
    (see ``spectral_seeds``). ``extra_betas`` are evaluated as given. Points
    found on the spectrum are flagged and carry no norm.
    """
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    grid_betas = np.linspace(0.0, beta_max, n_points)
    betas = np.concatenate([grid_betas, np.asarray(extra_betas, dtype=float)])

    def sigma(beta):
        return smallest_singular_value(gen, float(beta), method)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            sig = np.array(list(pool.map(sigma, betas)))
    else:
        sig = np.array([sigma(b) for b in betas])

    refined_b, refined_s = [], []
    gs = sig[:n_points]
    peaks = [
        i
        for i in range(n_points)
        if (i == 0 or gs[i] <= gs[i - 1]) and (i == n_points - 1 or gs[i] <= gs[i + 1])
    ]
    peaks.sort(key=lambda i: gs[i])
    if refine is not None:
        peaks = peaks[:refine]
    step = grid_betas[1] - grid_betas[0]
    brackets = [(grid_betas[max(i - 1, 0)], grid_betas[min(i + 1, n_points - 1)], gs[i]) for i in peaks]
    for s in seeds:
        if 0.0 <= s <= beta_max:
            lo, hi = max(s - step, 0.0), min(s + step, beta_max)
            brackets.append((lo, hi, min(sigma(lo), sigma(hi))))
    for lo, hi, start in brackets:
        if hi <= lo:
            continue
        res = minimize_scalar(sigma, bounds=(lo, hi), method="bounded", options={"xatol": 1e-11 * max(1.0, hi)})
        if res.fun < start:
            refined_b.append(float(res.x))
            refined_s.append(float(res.fun))

    all_b = np.concatenate([betas, refined_b])
    all_s = np.concatenate([sig, refined_s])
    refined = np.concatenate([np.zeros(len(betas), bool), np.ones(len(refined_b), bool)])
    order = np.argsort(all_b, kind="stable")
    all_b, all_s, refined = all_b[order], all_s[order], refined[order]
    flagged = np.array([s <= _on_spectrum_threshold(b) for b, s in zip(all_b, all_s)])
    with np.errstate(divide="ignore"):
        norms = np.where(flagged, np.nan, 1.0 / np.where(flagged, 1.0, all_s))
    return ResolventCurve(all_b, norms, flagged, refined)


def spectral_seeds(gen: GeneratorMatrix, beta_max: float, count: int = 20) -> np.ndarray:
    """Frequencies of the ``count`` eigenvalues closest to the imaginary axis."""
    ev = spectrum(gen).eigenvalues
    ev = ev[(ev.imag >= 0) & (ev.imag <= beta_max)]
    order = np.argsort(-ev.real, kind="stable")[:count]
    return np.sort(ev.imag[order])
