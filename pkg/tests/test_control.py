import numpy as np
import pytest

from coupled_waves.control import (
    AdjointData,
    HumContext,
    apply_gramian,
    assemble_gramian,
    default_horizon,
    default_space,
    hum_solve,
    observability_estimate,
    observability_ratio,
    random_adjoint_data,
    solve_adjoint,
    verify_control,
)
from coupled_waves.discretization import Grid
from coupled_waves.dynamics import Problem, StateVector
from coupled_waves.errors import NoConvergence, ZeroInitialData
from coupled_waves.geometry import Domain

from conftest import coupled_coefficients, first_mode_state


def make_problem(n=20, a=1.0, horizon=3.0, **kw):
    g = Grid.uniform(Domain.interval(1.0), n)
    return Problem(g, coupled_coefficients(g, a=a, **kw), horizon)


@pytest.fixture(scope="module")
def strong_ctx():
    return HumContext(make_problem())


@pytest.fixture(scope="module")
def strong_gramian(strong_ctx):
    return assemble_gramian(ctx=strong_ctx)


@pytest.fixture(scope="module")
def weak_ctx():
    return HumContext(make_problem(a=2.0, b_box=(0.6, 0.9), c_box=(0.4, 1.0), horizon=4.0))


def gram_matrix(ctx):
    return np.array([ctx.gram_apply(e) for e in np.eye(4 * ctx.n)]).T


def test_default_space_and_horizon():
    assert default_space(1.0) == "strong" and default_space(2.0) == "weak"
    g = Grid.uniform(make_problem().grid.domain, 10)
    assert default_horizon(g, 1.0) == pytest.approx(3.0)
    assert default_horizon(g, 0.25) == pytest.approx(6.0)
    with pytest.raises(ValueError):
        AdjointData(StateVector.zeros(3), "mild")


@pytest.mark.parametrize("space", ["strong", "weak"])
def test_adjoint_conserves_invariant(space):
    ctx = HumContext(make_problem(a=1.5), space)
    phi = random_adjoint_data(ctx.grid, np.random.default_rng(0))
    summary, trace = solve_adjoint(phi, ctx=ctx)
    assert summary.drift < 1e-11
    assert trace.velocity.shape == (ctx.steps, ctx.support.size)
    assert list(trace.columns())[0] == "t"


def test_zero_adjoint_data(strong_ctx):
    with pytest.raises(ZeroInitialData):
        observability_ratio(np.zeros(80), ctx=strong_ctx)
    summary, trace = solve_adjoint(np.zeros(80), ctx=strong_ctx)
    assert summary.drift == 0.0 and not np.any(trace.velocity)
    assert not np.any(apply_gramian(np.zeros(80), ctx=strong_ctx).flat())


def test_zero_target_needs_no_control(strong_ctx):
    rep = hum_solve(np.zeros(80), ctx=strong_ctx)
    assert rep.iterations == 0 and rep.terminal_residual == 0.0
    assert not np.any(rep.control.control)


def test_uncoupled_second_wave_is_unobservable():
    ctx = HumContext(make_problem(b_plateau=0.0))
    g = ctx.grid
    zero = np.zeros(g.size)
    phi = StateVector(zero, zero, np.sin(np.pi * g.nodes[:, 0]), zero).flat()
    assert observability_ratio(phi, ctx=ctx) == 0.0
    assert not np.any(ctx.gramian(phi))


def test_undamped_problem_has_zero_estimate():
    ctx = HumContext(make_problem(c_plateau=0.0))
    est = observability_estimate(ctx=ctx, n_random=5, n_iterates=3, modes=3)
    assert est.minimum == 0.0


def test_low_mode_basis_orthonormal(strong_ctx, weak_ctx):
    for ctx in (strong_ctx, weak_ctx):
        B = ctx.low_mode_basis(4)
        G = np.array([[ctx.inner(B[:, i], B[:, j]) for j in range(B.shape[1])] for i in range(B.shape[1])])
        assert np.allclose(G, np.eye(16), atol=1e-10)


def test_gramian_self_adjoint_positive(strong_ctx, strong_gramian):
    GL = gram_matrix(strong_ctx) @ strong_gramian
    assert np.allclose(GL, GL.T, atol=1e-12 * np.abs(GL).max())
    assert np.linalg.eigvalsh(0.5 * (GL + GL.T)).min() > 0


def test_gramian_pairing_matches_observation(strong_ctx):
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal(80), rng.standard_normal(80)
    tx, _ = strong_ctx.observe(x)
    ty, _ = strong_ctx.observe(y)
    w = strong_ctx.c[strong_ctx.support]
    pairing = strong_ctx.dt * strong_ctx.grid.cell_volume * np.sum(w * tx * ty)
    assert strong_ctx.inner(strong_ctx.gramian(x), y) == pytest.approx(pairing, rel=1e-12)


def test_weak_gramian_self_adjoint_positive(weak_ctx):
    L = assemble_gramian(ctx=weak_ctx)
    GL = gram_matrix(weak_ctx) @ L
    assert np.allclose(GL, GL.T, atol=1e-11 * np.abs(GL).max())
    assert np.linalg.eigvalsh(0.5 * (GL + GL.T)).min() > 0


def test_hum_drives_state_to_rest(strong_ctx):
    u0 = first_mode_state(strong_ctx.grid).flat()
    rep = hum_solve(u0, ctx=strong_ctx, tol=1e-10)
    assert rep.terminal_residual <= 1e-8
    assert rep.cg_residual <= 1e-10
    # in the strong space the homogeneous flow is an isometry, so the terminal and CG residuals coincide
    assert rep.terminal_residual == pytest.approx(rep.cg_residual, rel=1e-4, abs=1e-14)
    assert isinstance(rep.cg_residual, float)
    assert "cg_iterations" in rep.summary()


def test_hum_weak_space(weak_ctx):
    u0 = random_adjoint_data(weak_ctx.grid, np.random.default_rng(1), smooth_modes=3)
    rep = hum_solve(u0, ctx=weak_ctx, tol=1e-10)
    assert rep.terminal_residual <= 1e-7
    assert rep.minimizer.space == "weak"


def test_tolerance_controls_terminal_residual(strong_ctx):
    u0 = random_adjoint_data(strong_ctx.grid, np.random.default_rng(2), smooth_modes=4)
    terminals = [hum_solve(u0, ctx=strong_ctx, tol=t).terminal_residual for t in (1e-3, 1e-6, 1e-9)]
    assert terminals[0] > terminals[1] > terminals[2]
    assert terminals[2] <= 1e-8


def test_hum_is_linear_in_target(strong_ctx):
    u0 = random_adjoint_data(strong_ctx.grid, np.random.default_rng(4), smooth_modes=4)
    one = hum_solve(u0, ctx=strong_ctx)
    two = hum_solve(2.0 * u0, ctx=strong_ctx)
    assert np.allclose(two.minimizer.flat(), 2.0 * one.minimizer.flat(), rtol=1e-12, atol=0)
    assert two.iterations == one.iterations


def test_minimizer_norm_bound(strong_ctx, strong_gramian):
    # C ||Phi||^2 <= <Lambda Phi, Phi> = ||U_0|| ||Phi|| with C the smallest eigenvalue of Lambda
    G = gram_matrix(strong_ctx)
    Gh = np.linalg.cholesky(G)
    sym = Gh.T @ strong_gramian @ np.linalg.inv(Gh.T)
    c_min = np.linalg.eigvalsh(0.5 * (sym + sym.T)).min()
    rng = np.random.default_rng(5)
    for _ in range(3):
        u0 = rng.standard_normal(80)
        rep = hum_solve(u0, ctx=strong_ctx)
        phi = rep.minimizer.flat()
        assert strong_ctx.norm(phi) <= strong_ctx.norm(u0) / c_min * (1 + 1e-6)
        assert rep.observability_ratio >= c_min * (1 - 1e-6)
        cost = strong_ctx.observability_integral(strong_ctx.observe(phi)[0])
        assert cost == pytest.approx(-strong_ctx.inner(u0, phi), rel=1e-6)


def test_verify_control_without_control(strong_ctx):
    u0 = random_adjoint_data(strong_ctx.grid, np.random.default_rng(6))
    assert verify_control(u0, None, ctx=strong_ctx) == pytest.approx(1.0, rel=1e-10)
    rep = hum_solve(u0, ctx=strong_ctx, tol=1e-4)
    bad = strong_ctx.trace_object(rep.control.velocity[:-1])
    with pytest.raises(ValueError):
        verify_control(u0, bad, ctx=strong_ctx)


def test_hum_rejects_bad_tolerance(strong_ctx):
    with pytest.raises(ValueError):
        hum_solve(np.ones(80), ctx=strong_ctx, tol=0.0)


def test_ill_posed_configuration_fails_to_converge():
    # the coupling sits outside the damped region's reach, so Lambda is numerically singular
    p = make_problem(n=30, b_box=(0.05, 0.35), c_box=(0.6, 0.95))
    u0 = first_mode_state(p.grid).flat()
    with pytest.raises(NoConvergence):
        hum_solve(u0, p, tol=1e-10, maxiter=300)


def test_observability_estimate_reproducible(strong_ctx):
    one = observability_estimate(ctx=strong_ctx, seed=3, n_random=10, n_iterates=5, modes=4)
    two = observability_estimate(ctx=strong_ctx, seed=3, n_random=10, n_iterates=5, modes=4)
    assert one.minimum == two.minimum > 0
    assert one.iterate_ratios[-1] <= one.random_ratios.min() * (1 + 1e-9)
