"""Diffusivity inference and regularized source recovery on the Hermite heat problem.

Both tasks fit the K stage values of one window [t_j, t_j + dt] against data
at both ends.  With stage rates M_r the two residual families are

    left:   X_s - U(t_j)     - dt * sum_r a_sr          M_r
    right:  X_s - U(t_j+dt)  - dt * sum_r (a_sr - b_r)  M_r

and the loss is the sum of their squared coefficient norms.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .adaptivity import AdaptiveConfig, AdaptiveState, adapt, indicators
from .basis import BasisDescriptor, Family, hermite_second_derivative, project, quadrature_rule
from .collocation import ButcherTableau, NetConfig, StepRecord, _carry_params, _step_seed
from .expansion import SpectralExpansion, l2_error
from .net import init_mlp, train
from .problems import ProblemSpec, observe_noisy


def _two_sided(tab: ButcherTableau):
    a = tab.a
    return a, a - tab.b[None, :]


def two_sided_residuals(x, u_left, u_right, rates, tab: ButcherTableau, dt: float):
    """(left, right) residual arrays, each (K, m), for stage values x and stage rates."""
    cl, cr = _two_sided(tab)
    return x - u_left - dt * (cl @ rates), x - u_right - dt * (cr @ rates)


def _backprop_rates(rl, rr, tab, dt):
    """d(|rl|^2 + |rr|^2) / d rates."""
    cl, cr = _two_sided(tab)
    return -2 * dt * (cl.T @ rl + cr.T @ rr)


def project_observation(values: np.ndarray, desc: BasisDescriptor, n: int, q: int) -> np.ndarray:
    return project(np.asarray(values, dtype=float), desc, n, q)


def observation_rule(desc: BasisDescriptor, n: int):
    return quadrature_rule(desc, n + 41)


def observe_projected(p: ProblemSpec, t: float, sigma: float, desc: BasisDescriptor, n: int, seed: int) -> np.ndarray:
    """Noisy node values at time t, projected onto (desc, n)."""
    rule = observation_rule(desc, n)
    vals = observe_noisy(p, t, sigma, rule.nodes, seed)
    return project_observation(vals, desc, n, len(rule))


def _obs_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, 7919, index]).generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# parameter inference
# ---------------------------------------------------------------------------

@dataclass
class WindowLoss:
    """Two-sided loss in the stage values X (K, m) and the operator scale theta."""

    d: np.ndarray
    src: np.ndarray | None
    u_left: np.ndarray
    u_right: np.ndarray
    tab: ButcherTableau
    dt: float

    def rates(self, x, theta):
        r = theta * (x @ self.d.T)
        return r if self.src is None else r + self.src

    def parts(self, x, theta):
        rl, rr = two_sided_residuals(x, self.u_left, self.u_right, self.rates(x, theta), self.tab, self.dt)
        return float(np.sum(rl * rl)), float(np.sum(rr * rr)), rl, rr

    def __call__(self, x, theta_arr):
        theta = float(theta_arr[0])
        sl, sr, rl, rr = self.parts(x, theta)
        g_rates = _backprop_rates(rl, rr, self.tab, self.dt)
        dx = 2 * rl + 2 * rr + theta * (g_rates @ self.d)
        dtheta = float(np.sum(g_rates * (x @ self.d.T)))
        return sl + sr, dx, np.array([dtheta])


@dataclass
class InferenceResult:
    theta: list[float]
    sse: list[float]
    sse_left: list[float]
    sse_right: list[float]
    stages: list[list[SpectralExpansion]]
    records: list[StepRecord] = field(default_factory=list)


def infer_parameter(p: ProblemSpec, tab: ButcherTableau, dt: float, windows: int = 1, sigma: float = 0.0,
                    theta_init: float = 1.0, net: NetConfig | None = None, adaptive: AdaptiveConfig | None = None,
                    order: int | None = None, seed: int = 0, timing: bool = True) -> InferenceResult:
    """Estimate the diffusivity window by window from noisy snapshots at t_j = j dt."""
    if p.operator != "diffusion" or p.bases[0].family is not Family.HERMITE:
        raise ValueError("parameter inference is implemented for the Hermite diffusion problem")
    net = net or NetConfig()
    adaptive = adaptive or AdaptiveConfig()
    n = p.order if order is None else order
    desc = p.bases[0]
    inputs = tab.c[:, None]
    theta = np.array([theta_init], dtype=float)
    params = None
    res = InferenceResult([], [], [], [], [])
    u_left = observe_projected(p, 0.0, sigma, desc, n, _obs_seed(seed, 0))
    ad_state = AdaptiveState.start(SpectralExpansion(desc, u_left), adaptive)
    prev_left = None
    for j in range(windows):
        t0 = time.perf_counter()
        tj = j * dt
        u_right = observe_projected(p, tj + dt, sigma, desc, n, _obs_seed(seed, j + 1))
        src = None
        if p.source is not None:
            src = np.array([project(lambda x, t=tj + c * dt: p.source(x, t), desc, n) for c in tab.c])
        loss = WindowLoss(hermite_second_derivative(n, desc.beta), src, u_left, u_right, tab, dt)
        dims = [1] + [net.hidden] * net.layers + [n + 1]
        if params is None or not net.warm_start:
            params = init_mlp(dims, _step_seed(net.train.seed, j))
            params.biases[-1] = u_left.copy()
        elif prev_left is not None:
            params.biases[-1] = params.biases[-1] + (u_left - prev_left)
        out = train(params, inputs, loss, net.train, extra=theta)
        params, theta = out.params, out.extra
        sl, sr, _, _ = loss.parts(out.outputs, float(theta[0]))
        res.theta.append(float(theta[0]))
        res.sse.append(sl + sr)
        res.sse_left.append(sl)
        res.sse_right.append(sr)
        res.stages.append([SpectralExpansion(desc, w) for w in out.outputs])

        # next window: the right snapshot becomes the left one; adapt the basis on it
        right = SpectralExpansion(desc, u_right)
        prev_left = u_left
        if adaptive.any_enabled:
            right, cmap, ad_state = adapt(right, ad_state, adaptive)
            if right.basis != desc:
                params = _carry_params(params, cmap)
                prev_left = cmap @ u_left
                desc = right.basis
        u_left = right.coeffs
        res.records.append(StepRecord(
            step=j + 1, t=tj + dt, loss=sl + sr, l2_error=_stage_error(p, res.stages[-1], tab, tj, dt),
            F=indicators(right), beta=[desc.beta], x_l=[desc.x_l], N=n, epochs=out.epochs,
            wall_ms=(time.perf_counter() - t0) * 1e3 if timing else math.nan,
        ))
    return res


def _stage_error(p: ProblemSpec, stages, tab, tj, dt):
    """RMS over stage times of the L2 error of the inferred intermediate solutions."""
    if p.exact is None:
        return None
    errs = [l2_error(e, lambda x, t=tj + c * dt: p.exact(x, t)) for e, c in zip(stages, tab.c)]
    return math.sqrt(float(np.mean(np.square(errs))))


# ---------------------------------------------------------------------------
# source recovery
# ---------------------------------------------------------------------------

@dataclass
class SourceLoss:
    """Two-sided loss in the source coefficients H (K, m) with known stage data."""

    d: np.ndarray
    u_left: np.ndarray
    u_right: np.ndarray
    u_stages: np.ndarray
    tab: ButcherTableau
    dt: float
    lam: float

    def parts(self, h):
        rates = self.u_stages @ self.d.T + h
        rl, rr = two_sided_residuals(self.u_stages, self.u_left, self.u_right, rates, self.tab, self.dt)
        return float(np.sum(rl * rl)), float(np.sum(rr * rr)), rl, rr

    def __call__(self, h):
        sl, sr, rl, rr = self.parts(h)
        dh = _backprop_rates(rl, rr, self.tab, self.dt) + 2 * self.lam * h
        return sl + sr + self.lam * float(np.sum(h * h)), dh


@dataclass
class SourceRecoveryResult:
    h: np.ndarray
    times: np.ndarray
    sse0: float
    sse_left: float
    sse_right: float
    reconstruction_error: float | None
    h_norm: float
    epochs: int
    history: list[float]


def source_observations(p: ProblemSpec, desc: BasisDescriptor, n: int, tab: ButcherTableau, dt: float,
                        t0: float = 0.0, sigma: float = 0.0, seed: int = 0):
    """Projected noisy snapshots at t0, the stage times and t0 + dt."""
    left = observe_projected(p, t0, sigma, desc, n, _obs_seed(seed, 0))
    stages = np.array([observe_projected(p, t0 + c * dt, sigma, desc, n, _obs_seed(seed, 1 + s))
                       for s, c in enumerate(tab.c)])
    right = observe_projected(p, t0 + dt, sigma, desc, n, _obs_seed(seed, 1 + tab.stages))
    return left, stages, right


def recover_source(observations, lam: float, desc: BasisDescriptor, n: int, tab: ButcherTableau, dt: float,
                   net: NetConfig | None = None, t0: float = 0.0, true_source=None) -> SourceRecoveryResult:
    """Fit the source expansion h(t) on one window; u enters only as data."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if desc.family is not Family.HERMITE:
        raise ValueError("source recovery is implemented for Hermite bases")
    net = net or NetConfig()
    left, stages, right = (np.asarray(o, dtype=float) for o in observations)
    if stages.shape != (tab.stages, n + 1) or left.shape != (n + 1,) or right.shape != (n + 1,):
        raise ValueError("observations must be coefficient vectors of order N (K stages in the middle)")
    loss = SourceLoss(hermite_second_derivative(n, desc.beta), left, right, stages, tab, dt, lam)
    params = init_mlp([1] + [net.hidden] * net.layers + [n + 1], net.train.seed)
    out = train(params, tab.c[:, None], loss, net.train)
    h = out.outputs
    sl, sr, _, _ = loss.parts(h)
    times = t0 + tab.c * dt
    err = None
    if true_source is not None:
        errs = [l2_error(SpectralExpansion(desc, hs), lambda x, t=t: true_source(x, t)) for hs, t in zip(h, times)]
        err = math.sqrt(float(np.mean(np.square(errs))))
    return SourceRecoveryResult(h, times, sl + sr, sl, sr, err, float(np.sqrt(np.sum(h * h))),
                                out.epochs, out.history)


def truncation_floor(f, desc: BasisDescriptor, n: int, times, q: int = 400) -> float:
    """RMS over ``times`` of the L2 distance between f and its order-n projection (oversampled)."""
    errs = []
    for t in times:
        c = project(lambda x: f(x, t), desc, n, q)
        errs.append(l2_error(SpectralExpansion(desc, c), lambda x: f(x, t), q))
    return math.sqrt(float(np.mean(np.square(errs))))
