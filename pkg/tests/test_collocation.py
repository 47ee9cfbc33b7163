import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinn.adaptivity import AdaptiveConfig
from spinn.basis import chebyshev, hermite
from spinn.collocation import (
    ButcherTableau,
    NetConfig,
    SolveFailed,
    SolverState,
    StepLoss,
    advance_step,
    assemble_step_loss,
    collocation_solve_scalar,
    gauss_legendre_tableau,
    solve,
    step_count,
)
from spinn.expansion import SpectralExpansion, l2_error
from spinn.net import TrainConfig
from spinn.problems import ProblemSpec, builtin, discretize, initial_expansion

S3 = math.sqrt(3)


def small_net(seed=0, epochs=100_000, tol=1e-12):
    return NetConfig(hidden=100, layers=5, train=TrainConfig(lr=5e-4, max_epochs=epochs, tol=tol, seed=seed))


def scalar_problem(beta=2.0):
    # one Hermite mode under diffusion: w' = -beta^2/2 w
    return ProblemSpec("scalar", "real-line", (hermite(beta),), 0, "diffusion", initial=lambda x: np.exp(-x * x))


def frozen_problem(order=8):
    return ProblemSpec("frozen", "real-line", (hermite(1.0),), order, "diffusion",
                       initial=lambda x: np.exp(-x * x / 3) * np.cos(x), kappa=0.0)


# tableau ----------------------------------------------------------------------

def test_tableau_k1_k2():
    t1 = gauss_legendre_tableau(1)
    np.testing.assert_allclose(t1.c, [0.5], atol=1e-15)
    np.testing.assert_allclose(t1.a, [[0.5]], atol=1e-15)
    np.testing.assert_allclose(t1.b, [1.0], atol=1e-15)
    t2 = gauss_legendre_tableau(2)
    np.testing.assert_allclose(t2.c, [0.5 - S3 / 6, 0.5 + S3 / 6], atol=1e-14)
    np.testing.assert_allclose(t2.b, [0.5, 0.5], atol=1e-14)
    np.testing.assert_allclose(t2.a, [[0.25, 0.25 - S3 / 6], [0.25 + S3 / 6, 0.25]], atol=1e-14)


@pytest.mark.parametrize("k", range(1, 6))
def test_tableau_order_conditions(k):
    tab = gauss_legendre_tableau(k)
    assert tab.stages == k
    for q in range(1, 2 * k + 1):
        assert np.sum(tab.b * tab.c ** (q - 1)) == pytest.approx(1 / q, abs=1e-12)
    np.testing.assert_allclose(tab.a.sum(axis=1), tab.c, atol=1e-12)
    # collocation (stage order K) conditions
    for q in range(1, k + 1):
        np.testing.assert_allclose(tab.a @ tab.c ** (q - 1), tab.c ** q / q, atol=1e-12)


def test_tableau_validation():
    with pytest.raises(ValueError):
        gauss_legendre_tableau(0)


@pytest.mark.parametrize("k", [1, 2])
def test_scalar_one_step_error_slope(k):
    tab = gauss_legendre_tableau(k)
    dts = np.array([0.2, 0.1, 0.05])
    errs = [abs(collocation_solve_scalar(-1.0, 1.0, dt, tab)[1] - math.exp(-dt)) for dt in dts]
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert slope >= 2 * k + 0.5


# step loss --------------------------------------------------------------------

def test_loss_zero_for_constant_solution():
    p = frozen_problem()
    u = initial_expansion(p)
    tab = gauss_legendre_tableau(3)
    assert assemble_step_loss(p, u, [u.coeffs] * 4, tab, 0.1) == 0.0


def test_loss_vanishes_at_exact_stage_solution():
    p = scalar_problem(2.0)
    u = initial_expansion(p)
    for k in (1, 2, 4):
        tab = gauss_legendre_tableau(k)
        stages, end = collocation_solve_scalar(-2.0, u.coeffs[0], 0.1, tab)
        outs = [[s] for s in stages] + [[end]]
        assert assemble_step_loss(p, u, outs, tab, 0.1) <= 1e-20


def test_loss_is_quadratic_in_perturbation():
    p = scalar_problem(1.5)
    u = initial_expansion(p)
    tab = gauss_legendre_tableau(2)
    stages, end = collocation_solve_scalar(-1.125, u.coeffs[0], 0.2, tab)
    base = np.array([[s] for s in stages] + [[end]])
    vals = []
    for eps in (1e-2, 1e-3):
        y = base.copy()
        y[1, 0] += eps
        vals.append(assemble_step_loss(p, u, y, tab, 0.2))
    assert vals[0] / vals[1] == pytest.approx(100, rel=1e-6)


def test_loss_gradient_matches_finite_differences():
    p = builtin("bounded-advection")
    u = initial_expansion(p)
    tab = gauss_legendre_tableau(3)
    op = discretize(p, u)
    loss = StepLoss(op, op.pack(u), tab, 0.05, 0.3)
    y = np.random.default_rng(0).normal(size=(4, op.size))
    _, dy = loss(y)
    fd = np.zeros_like(y)
    h = 1e-6
    for idx in np.ndindex(y.shape):
        yp, ym = y.copy(), y.copy()
        yp[idx] += h
        ym[idx] -= h
        fd[idx] = (loss.value(yp) - loss.value(ym)) / (2 * h)
    np.testing.assert_allclose(dy, fd, rtol=1e-6, atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.permutations(range(3)), st.integers(0, 1000))
def test_loss_invariant_under_stage_permutation(perm, seed):
    p = builtin("heat-source")
    u = initial_expansion(p, order=10)
    tab = gauss_legendre_tableau(3)
    perm = list(perm)
    ptab = ButcherTableau(tab.c[perm], tab.a[np.ix_(perm, perm)], tab.b[perm])
    y = np.random.default_rng(seed).normal(size=(4, 11))
    yp = np.vstack([y[perm], y[-1:]])
    a = assemble_step_loss(p, u, y, tab, 0.1, t0=0.2)
    b = assemble_step_loss(p, u, yp, ptab, 0.1, t0=0.2)
    assert b == pytest.approx(a, rel=1e-12)


def test_assemble_rejects_wrong_shape():
    p = frozen_problem()
    u = initial_expansion(p)
    with pytest.raises(ValueError):
        assemble_step_loss(p, u, [u.coeffs] * 3, gauss_legendre_tableau(3), 0.1)


def test_boundary_penalty_enters_loss():
    p = builtin("bounded-advection")
    u = initial_expansion(p)
    tab = gauss_legendre_tableau(1)
    y = [u.coeffs, u.coeffs]
    with_bc = assemble_step_loss(p, u, y, tab, 0.01)
    without = assemble_step_loss(p, u, y, tab, 0.01, bc=False)
    e1 = np.cos(np.arange(9) * 0.0)  # T_i(1) = 1
    gap = [u.coeffs @ e1 - math.cos(3 * (1 + 0.005)), u.coeffs @ e1 - math.cos(3 * 1.01)]
    assert with_bc - without == pytest.approx(sum(g * g for g in gap), rel=1e-10)


# stepping ---------------------------------------------------------------------

def test_zero_problem_stays_zero():
    p = ProblemSpec("zero", "real-line", (hermite(1.0),), 8, "diffusion", initial=lambda x: 0 * x)
    u = initial_expansion(p)
    u1, rec, _ = advance_step(u, p, gauss_legendre_tableau(4), 0.1, small_net(), AdaptiveConfig(), SolverState())
    assert rec.loss <= 1e-12
    assert np.max(np.abs(u1.coeffs)) <= 1e-6


def test_frozen_operator_keeps_coefficients():
    p = frozen_problem()
    u = initial_expansion(p)
    u1, rec, _ = advance_step(u, p, gauss_legendre_tableau(4), 0.1, small_net(), AdaptiveConfig(), SolverState())
    assert rec.loss <= 1e-12
    np.testing.assert_allclose(u1.coeffs, u.coeffs, atol=1e-6)


@pytest.mark.xfail(strict=True, reason="the N=8 projection floor of this solution already exceeds 1e-4")
def test_heat_one_step_at_order_8():
    p = builtin("heat-source")
    u = initial_expansion(p, order=8)
    assert l2_error(u, lambda x: p.exact(x, 0.0)) > 1e-4  # oracle floor, holds
    records, _ = solve(p, 0.1, 0.1, 4, small_net(), u0=u)
    assert records[0].l2_error <= 1e-4


def test_heat_one_step():
    p = builtin("heat-source")
    u = initial_expansion(p)
    records, u1 = solve(p, 0.1, 0.1, 4, small_net(), u0=u, timing=False)
    assert len(records) == 1
    rec = records[0]
    assert rec.l2_error <= 1e-4
    # adaptivity off: the basis is unchanged
    assert rec.beta == [0.8] and rec.x_l == [0.0] and rec.N == 24
    assert math.isnan(rec.wall_ms)


def test_solve_is_deterministic():
    p = builtin("heat-source")
    u = initial_expansion(p, order=10)
    a, ua = solve(p, 0.2, 0.1, 2, small_net(seed=3, epochs=300), u0=u, timing=False)
    b, ub = solve(p, 0.2, 0.1, 2, small_net(seed=3, epochs=300), u0=u, timing=False)
    assert [r.loss for r in a] == [r.loss for r in b]
    np.testing.assert_array_equal(ua.coeffs, ub.coeffs)


def test_solve_with_adaptivity_records_new_basis():
    p = builtin("halfline-advection")
    adaptive = AdaptiveConfig(scaling=True, p_refine=True)
    records, u = solve(p, 0.1, 0.05, 2, small_net(epochs=2000), adaptive=adaptive, timing=False)
    assert len(records) == 2
    assert records[-1].beta == [u.basis.beta] and records[-1].N == u.order


def test_step_count():
    assert step_count(1.0, 0.1) == 10
    assert step_count(0.1, 0.1) == 1
    with pytest.raises(ValueError):
        step_count(1.0, 0.3)
    with pytest.raises(ValueError):
        step_count(0.0, 0.1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_solve_failure_keeps_partial_records():
    p = builtin("heat-source")
    u = initial_expansion(p, order=10)
    net = NetConfig(hidden=20, layers=2, train=TrainConfig(lr=1e3, max_epochs=2000, tol=1e-12))
    with pytest.raises(SolveFailed) as info:
        solve(p, 1.0, 0.1, 2, net, u0=u)
    assert isinstance(info.value.records, list)
    assert isinstance(info.value.expansion, SpectralExpansion)


def test_strong_bc_needs_chebyshev():
    with pytest.raises(ValueError):
        discretize(builtin("halfline-advection"), initial_expansion(builtin("halfline-advection")), strong_bc=True)
    p = builtin("bounded-advection")
    op = discretize(p, initial_expansion(p), strong_bc=True)
    assert op.norm.shape == (9, 9)


def test_complex_problem_packs_real_and_imaginary_parts():
    p = builtin("schrodinger")
    u = initial_expansion(p, order=6)
    op = discretize(p, u)
    w = op.pack(u)
    assert w.shape == (14,)
    np.testing.assert_array_equal(op.unpack(w).coeffs, u.coeffs)


def test_chebyshev_stepper_on_bounded_problem():
    p = builtin("bounded-advection")
    records, u = solve(p, 0.02, 0.01, 4, small_net(epochs=20000), timing=False)
    assert records[-1].l2_error <= 1e-3
    assert isinstance(u.basis, type(chebyshev()))
