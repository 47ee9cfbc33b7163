import numpy as np
import pytest

from spinn.basis import hermite, hermite_second_derivative, project
from spinn.collocation import NetConfig, gauss_legendre_tableau
from spinn.inverse import (
    SourceLoss,
    WindowLoss,
    infer_parameter,
    observe_projected,
    recover_source,
    source_observations,
    truncation_floor,
    two_sided_residuals,
)
from spinn.net import TrainConfig
from spinn.problems import ProblemSpec, builtin

N = 16
DESC = hermite(0.8)


def homogeneous_problem():
    # u_t = u_xx with no source
    exact = lambda x, t: np.exp(-x * x / (4 * (t + 1))) / np.sqrt(t + 1)
    return ProblemSpec("gauss", "real-line", (DESC,), N, "diffusion", initial=lambda x: exact(x, 0.0),
                       exact=exact)


def net(epochs, seed=0, tol=1e-12, lr=5e-4):
    return NetConfig(hidden=100, layers=5, train=TrainConfig(lr=lr, max_epochs=epochs, tol=tol, seed=seed))


def exact_window(p, tab, dt, n=N):
    left = project(lambda x: p.exact(x, 0.0), DESC, n)
    right = project(lambda x: p.exact(x, dt), DESC, n)
    stages = np.array([project(lambda x, t=c * dt: p.exact(x, t), DESC, n) for c in tab.c])
    return left, stages, right


def test_two_sided_residuals_vanish_for_consistent_data():
    tab = gauss_legendre_tableau(2)
    rates = np.array([[1.0, -2.0], [0.5, 0.25]])
    left = np.array([0.3, 0.1])
    x = left + 0.1 * tab.a @ rates
    right = left + 0.1 * tab.b @ rates
    rl, rr = two_sided_residuals(x, left, right, rates, tab, 0.1)
    np.testing.assert_allclose(rl, 0, atol=1e-15)
    np.testing.assert_allclose(rr, 0, atol=1e-15)


def test_true_diffusivity_beats_wrong_one():
    p = builtin("diffusivity-inference")
    tab = gauss_legendre_tableau(6)
    dt = 0.1
    left, stages, right = exact_window(p, tab, dt, 20)
    src = np.array([project(lambda x, t=c * dt: p.source(x, t), DESC, 20) for c in tab.c])
    loss = WindowLoss(hermite_second_derivative(20, 0.8), src, left, right, tab, dt)
    at2 = loss(stages, np.array([2.0]))[0]
    at3 = loss(stages, np.array([3.0]))[0]
    assert at2 < at3
    assert at2 < 1e-10


def test_window_loss_gradients_vs_finite_differences():
    p = builtin("diffusivity-inference")
    tab = gauss_legendre_tableau(3)
    left, stages, right = exact_window(p, tab, 0.1, 8)
    loss = WindowLoss(hermite_second_derivative(8, 0.8), None, left, right, tab, 0.1)
    x = stages + 0.01 * np.random.default_rng(0).normal(size=stages.shape)
    _, dx, dth = loss(x, np.array([1.7]))
    h = 1e-6
    fd_th = (loss(x, np.array([1.7 + h]))[0] - loss(x, np.array([1.7 - h]))[0]) / (2 * h)
    assert dth[0] == pytest.approx(fd_th, rel=1e-6)
    xp, xm = x.copy(), x.copy()
    xp[1, 2] += h
    xm[1, 2] -= h
    assert dx[1, 2] == pytest.approx((loss(xp, np.array([1.7]))[0] - loss(xm, np.array([1.7]))[0]) / (2 * h),
                                     rel=1e-6)


def test_unidentifiable_parameter_has_zero_gradient():
    tab = gauss_legendre_tableau(3)
    u = np.random.default_rng(1).normal(size=9)
    loss = WindowLoss(np.zeros((9, 9)), None, u, u, tab, 0.1)
    x = np.tile(u, (3, 1)) + 0.01
    vals = [loss(x, np.array([th]))[0] for th in (0.5, 2.0, 9.0)]
    assert vals[0] == vals[1] == vals[2]
    assert loss(x, np.array([2.0]))[2][0] == 0.0


def test_infer_parameter_runs_and_records():
    p = builtin("diffusivity-inference")
    tab = gauss_legendre_tableau(2)
    res = infer_parameter(p, tab, 0.1, windows=2, theta_init=1.0, net=net(200), order=10, timing=False)
    assert len(res.theta) == len(res.sse) == len(res.records) == 2
    for s, a, b in zip(res.sse, res.sse_left, res.sse_right):
        assert a >= 0 and b >= 0 and s == pytest.approx(a + b)
    assert [r.step for r in res.records] == [1, 2]
    assert res.records[-1].t == pytest.approx(0.2)


def test_infer_parameter_rejects_other_problems():
    with pytest.raises(ValueError):
        infer_parameter(builtin("bounded-advection"), gauss_legendre_tableau(2), 0.1)


def test_observations_are_seeded():
    p = builtin("heat-source")
    a = observe_projected(p, 0.1, 1e-2, DESC, 8, seed=3)
    b = observe_projected(p, 0.1, 1e-2, DESC, 8, seed=3)
    c = observe_projected(p, 0.1, 1e-2, DESC, 8, seed=4)
    np.testing.assert_array_equal(a, b)
    assert np.any(a != c)


# source recovery --------------------------------------------------------------

def test_source_loss_gradient_and_penalty():
    p = builtin("heat-source")
    tab = gauss_legendre_tableau(3)
    left, stages, right = exact_window(p, tab, 0.2, 8)
    loss = SourceLoss(hermite_second_derivative(8, 0.8), left, right, stages, tab, 0.2, lam=0.3)
    h = np.random.default_rng(2).normal(size=(3, 9))
    v, dh = loss(h)
    sl, sr, _, _ = loss.parts(h)
    assert v == pytest.approx(sl + sr + 0.3 * np.sum(h * h))
    eps = 1e-6
    hp, hm = h.copy(), h.copy()
    hp[2, 4] += eps
    hm[2, 4] -= eps
    assert dh[2, 4] == pytest.approx((loss(hp)[0] - loss(hm)[0]) / (2 * eps), rel=1e-6)


def test_zero_source_is_recovered():
    p = homogeneous_problem()
    tab = gauss_legendre_tableau(4)
    obs = source_observations(p, DESC, N, tab, 0.2)
    # the source loss carries dt^2, so its curvature is small and a larger step is stable
    res = recover_source(obs, 0.0, DESC, N, tab, 0.2, net(6000, tol=1e-14, lr=2e-2))
    assert res.h_norm <= 1e-4


def test_heavy_penalty_drives_source_to_zero():
    p = builtin("heat-source")
    tab = gauss_legendre_tableau(4)
    obs = source_observations(p, DESC, N, tab, 0.2)
    free = recover_source(obs, 0.0, DESC, N, tab, 0.2, net(5000, lr=2e-2))
    # the penalty curvature 2 lambda bounds the stable step
    heavy = recover_source(obs, 1e3, DESC, N, tab, 0.2, net(5000, lr=1e-5))
    assert heavy.h_norm <= 1e-3
    assert heavy.sse0 > free.sse0


def test_recover_source_validation():
    tab = gauss_legendre_tableau(2)
    obs = (np.zeros(9), np.zeros((2, 9)), np.zeros(9))
    with pytest.raises(ValueError):
        recover_source(obs, -1.0, DESC, 8, tab, 0.1)
    with pytest.raises(ValueError):
        recover_source(obs, 0.0, DESC, 10, tab, 0.1)


def test_truncation_floor_decreases_with_order():
    f = builtin("heat-source").source
    times = [0.05, 0.15]
    floors = [truncation_floor(f, DESC, n, times) for n in (6, 12, 16, 24)]
    assert all(a > b for a, b in zip(floors, floors[1:]))
    assert floors[-1] < 1e-4
