"""Gauss-Legendre collocation tableaux, the per-step residual loss and the time loop.

Within one step [t_j, t_j + dt] a network maps the local time fraction
tau in {c_1, ..., c_K, 1} to coefficient vectors.  The loss is the squared
implicit Runge-Kutta residual of those vectors (plus boundary penalties),
and the output at tau = 1 becomes the next expansion.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .adaptivity import AdaptiveConfig, AdaptiveState, adapt, indicators
from .basis import QuadratureError, gauss_legendre
from .expansion import MultiExpansion, SpectralExpansion, l2_error
from .net import MlpParams, TrainConfig, TrainingDiverged, init_mlp, train
from .problems import ProblemSpec, StepOperator, discretize, initial_expansion


@dataclass(frozen=True)
class ButcherTableau:
    c: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @property
    def stages(self) -> int:
        return len(self.c)


def gauss_legendre_tableau(k: int) -> ButcherTableau:
    """K-stage Gauss-Legendre collocation scheme (order 2K)."""
    if not 1 <= k <= 10:
        raise ValueError("stage count must be in 1..10")
    try:
        x, _ = gauss_legendre(k)
    except QuadratureError as exc:
        raise QuadratureError(f"shifted Legendre roots failed for K={k}") from exc
    c = (np.asarray(x) + 1) / 2
    # Lagrange basis on c, integrated exactly by a K-point Gauss rule on each interval
    gx, gw = gauss_legendre(k)
    gx, gw = np.asarray(gx), np.asarray(gw)

    def lagrange(s, tau):
        out = np.ones_like(tau)
        for r in range(k):
            if r != s:
                out *= (tau - c[r]) / (c[s] - c[r])
        return out

    a = np.empty((k, k))
    b = np.empty(k)
    for s in range(k):
        b[s] = 0.5 * gw @ lagrange(s, (gx + 1) / 2)
        for r in range(k):
            tau = c[r] * (gx + 1) / 2
            a[r, s] = 0.5 * c[r] * gw @ lagrange(s, tau)
    return ButcherTableau(c, a, b)


def collocation_solve_scalar(lam: float, w0: float, dt: float, tab: ButcherTableau) -> tuple[np.ndarray, float]:
    """Exact stage values and endpoint for w' = lam w (no network involved)."""
    k = tab.stages
    stages = np.linalg.solve(np.eye(k) - dt * lam * tab.a, np.full(k, w0))
    return stages, w0 + dt * lam * tab.b @ stages


@dataclass
class StepLoss:
    """Residual loss of one step as a function of the (K+1, m) output batch.

    Row s < K of the batch is the stage value at c_s; row K is the endpoint.
    """

    op: StepOperator
    w_prev: np.ndarray
    tab: ButcherTableau
    dt: float
    t0: float
    _mats: list = field(default=None, repr=False)
    _src: np.ndarray = field(default=None, repr=False)
    _bc: list = field(default=None, repr=False)

    def __post_init__(self):
        k = self.tab.stages
        self.a_ext = np.vstack([self.tab.a, self.tab.b[None, :]])
        times = [self.t0 + c * self.dt for c in self.tab.c]
        if self.op.time_dependent:
            self._mats = [self.op.matrix(t) for t in times]
        else:
            self._mats = [self.op.matrix(self.t0)] * k
        src = [self.op.source(t) for t in times]
        self._src = None if src[0] is None else np.array(src)
        ends = times + [self.t0 + self.dt]
        self._bc = [(e, np.array([g(t) for t in ends])) for e, g in self.op.boundary_rows]

    def rates(self, y: np.ndarray, scale: float = 1.0) -> np.ndarray:
        k = self.tab.stages
        if not self.op.time_dependent:
            mw = scale * (y[:k] @ self._mats[0].T)
        else:
            mw = np.array([scale * (self._mats[r] @ y[r]) for r in range(k)])
        if self._src is not None:
            mw = mw + self._src
        return mw

    def residual(self, y: np.ndarray, scale: float = 1.0) -> np.ndarray:
        return y - self.w_prev - self.dt * (self.a_ext @ self.rates(y, scale))

    def _norm(self, r):
        return r if self.op.norm is None else r @ self.op.norm

    def value(self, y: np.ndarray, scale: float = 1.0) -> float:
        return self(y, scale)[0]

    def __call__(self, y: np.ndarray, scale: float = 1.0):
        """Loss and its gradient with respect to the output batch."""
        k = self.tab.stages
        r = self.residual(y, scale)
        v = self._norm(r)
        loss = float(np.sum(r * v))
        dy = 2 * v
        s = self.a_ext.T @ v
        if not self.op.time_dependent:
            dy[:k] -= 2 * self.dt * scale * (s @ self._mats[0])
        else:
            for q in range(k):
                dy[q] -= 2 * self.dt * scale * (s[q] @ self._mats[q])
        for e, g in self._bc:
            res = y @ e - g
            loss += float(res @ res)
            dy += 2 * res[:, None] * e[None, :]
        if not math.isfinite(loss):
            raise FloatingPointError("non-finite collocation loss")
        return loss, dy

    def scale_gradient(self, y: np.ndarray, scale: float) -> float:
        """d loss / d scale, where scale multiplies the operator (not the source)."""
        k = self.tab.stages
        r = self.residual(y, scale)
        v = self._norm(r)
        lw = self.rates(y, 1.0) - (0 if self._src is None else self._src)
        return float(-2 * self.dt * np.sum((self.a_ext.T @ v) * lw[:k]))


def assemble_step_loss(problem: ProblemSpec, u_prev, stage_outputs, tab: ButcherTableau, dt: float,
                       t0: float = 0.0, bc: bool = True, strong_bc: bool = False) -> float:
    """Collocation residual loss for explicit stage/endpoint coefficient vectors."""
    op = discretize(problem, u_prev, strong_bc=strong_bc)
    if not bc:
        op.boundary_rows = []
    y = np.array([op.pack(_as_like(u_prev, s)) for s in stage_outputs], dtype=float)
    if y.shape != (tab.stages + 1, op.size):
        raise ValueError("need K+1 coefficient vectors in u_prev's basis and order")
    return StepLoss(op, op.pack(u_prev), tab, dt, t0).value(y)


def _as_like(u_prev, s):
    if isinstance(s, (SpectralExpansion, MultiExpansion)):
        if isinstance(s, SpectralExpansion) and (s.basis != u_prev.basis or s.order != u_prev.order):
            raise ValueError("stage output basis differs from u_prev")
        return s
    if isinstance(u_prev, MultiExpansion):
        return MultiExpansion(u_prev.bases, u_prev.index_set, s)
    return SpectralExpansion(u_prev.basis, s)


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

@dataclass
class NetConfig:
    hidden: int = 100
    layers: int = 5
    warm_start: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.hidden < 1 or self.layers < 0:
            raise ValueError("hidden width must be >= 1 and layer count >= 0")


@dataclass
class StepRecord:
    step: int
    t: float
    loss: float
    l2_error: float | None
    F: list[float]
    beta: list[float]
    x_l: list[float]
    N: int
    epochs: int
    wall_ms: float

    def __post_init__(self):
        if self.loss < 0 or (self.l2_error is not None and self.l2_error < 0):
            raise ValueError("loss and error must be non-negative")


@dataclass
class SolverState:
    """What carries over between steps besides the expansion itself."""

    step: int = 0
    t: float = 0.0
    params: MlpParams | None = None
    prev_w: np.ndarray | None = None  # packed W_prev of the last step, in current coordinates
    adaptive: AdaptiveState | None = None


def _bases_of(e):
    return list(e.bases) if isinstance(e, MultiExpansion) else [e.basis]


def _order_of(e):
    return e.index_set.cap if isinstance(e, MultiExpansion) else e.order


def stage_inputs(tab: ButcherTableau) -> np.ndarray:
    return np.append(tab.c, 1.0)[:, None]


def _step_seed(base: int, step: int) -> int:
    return int(np.random.SeedSequence([base, step]).generate_state(1, dtype=np.uint64)[0])


def _start_params(op: StepOperator, w_prev: np.ndarray, net: NetConfig, state: SolverState) -> MlpParams:
    dims = [1] + [net.hidden] * net.layers + [op.size]
    if net.warm_start and state.params is not None and state.params.dims == dims and state.prev_w is not None:
        p = state.params.copy()
        p.biases[-1] = p.biases[-1] + (w_prev - state.prev_w)
        return p
    p = init_mlp(dims, _step_seed(net.train.seed, state.step))
    p.biases[-1] = w_prev.copy()
    return p


def _carry_params(p: MlpParams, pmap: np.ndarray) -> MlpParams:
    """Push the output layer through a linear change of coefficient coordinates."""
    p = p.copy()
    p.weights[-1] = p.weights[-1] @ pmap.T
    p.biases[-1] = pmap @ p.biases[-1]
    p.dims[-1] = pmap.shape[0]
    return p


def advance_step(u_prev, problem: ProblemSpec, tab: ButcherTableau, dt: float, net: NetConfig,
                 adaptive: AdaptiveConfig, state: SolverState, strong_bc: bool = False, timing: bool = True):
    """One s-PINN step.  Returns (u_next, record, new_state)."""
    t_start = time.perf_counter()
    op = discretize(problem, u_prev, strong_bc=strong_bc)
    w_prev = op.pack(u_prev)
    loss = StepLoss(op, w_prev, tab, dt, state.t)
    p0 = _start_params(op, w_prev, net, state)
    res = train(p0, stage_inputs(tab), loss, net.train)
    u_next = op.unpack(res.outputs[-1])

    ad_state = state.adaptive or AdaptiveState.start(u_prev, adaptive)
    params = res.params
    prev_w = w_prev
    if adaptive.any_enabled:
        u_next, cmap, ad_state = adapt(u_next, ad_state, adaptive)
        new_op = discretize(problem, u_next, strong_bc=strong_bc)
        pmap = new_op.pack_map(cmap)
        params = _carry_params(params, pmap)
        prev_w = pmap @ w_prev
    t_next = state.t + dt
    err = None
    if problem.exact is not None:
        exact = problem.exact
        err = l2_error(u_next, lambda *xs: exact(*xs, t_next))
    rec = StepRecord(
        step=state.step + 1, t=t_next, loss=res.history[-1], l2_error=err,
        F=indicators(u_next), beta=[b.beta for b in _bases_of(u_next)],
        x_l=[b.x_l for b in _bases_of(u_next)], N=_order_of(u_next), epochs=res.epochs,
        wall_ms=(time.perf_counter() - t_start) * 1e3 if timing else math.nan,
    )
    new_state = SolverState(state.step + 1, t_next, params, prev_w, ad_state)
    return u_next, rec, new_state


class SolveFailed(RuntimeError):
    def __init__(self, message, records, expansion):
        super().__init__(message)
        self.records = records
        self.expansion = expansion


def step_count(t_end: float, dt: float) -> int:
    if not (dt > 0 and t_end > 0):
        raise ValueError("t_end and dt must be positive")
    m = round(t_end / dt)
    if m < 1 or abs(m * dt - t_end) > 1e-12 * max(1.0, t_end):
        raise ValueError(f"t_end={t_end} is not an integer multiple of dt={dt}")
    return m


def solve(problem: ProblemSpec, t_end: float, dt: float, stages: int = 4, net: NetConfig | None = None,
          adaptive: AdaptiveConfig | None = None, u0=None, strong_bc: bool = False, timing: bool = True,
          callback=None):
    """March from the projected initial condition to t_end.  Returns (records, final expansion)."""
    net = net or NetConfig()
    adaptive = adaptive or AdaptiveConfig()
    m = step_count(t_end, dt)
    tab = gauss_legendre_tableau(stages)
    u = u0 if u0 is not None else initial_expansion(problem)
    state = SolverState(adaptive=AdaptiveState.start(u, adaptive))
    records: list[StepRecord] = []
    for _ in range(m):
        try:
            u, rec, state = advance_step(u, problem, tab, dt, net, adaptive, state, strong_bc, timing)
        except (TrainingDiverged, FloatingPointError, ValueError) as exc:
            raise SolveFailed(f"step {state.step + 1} failed: {exc}", records, u) from exc
        records.append(rec)
        if callback is not None:
            callback(rec)
    return records, u
