"""Crank-Nicolson spectral-Galerkin baseline for the Hermite heat equation."""

from __future__ import annotations

import math
import time

import numpy as np

from .adaptivity import AdaptiveConfig, AdaptiveState, adapt, indicators
from .basis import Family, hermite_second_derivative
from .collocation import StepRecord, step_count
from .expansion import SpectralExpansion, l2_error
from .problems import ProblemSpec, StepOperator, discretize, initial_expansion


def hermite_laplacian(n: int, beta: float) -> np.ndarray:
    """Symmetric band matrix of d^2/dx^2 on the first n+1 generalized Hermite functions."""
    if n < 2:
        raise ValueError("N must be >= 2")
    return hermite_second_derivative(n, beta)


def cn_step(op: StepOperator, w: np.ndarray, t: float, dt: float) -> np.ndarray:
    d = op.matrix(t)
    eye = np.eye(len(w))
    lhs = eye - 0.5 * dt * d
    rhs = (eye + 0.5 * dt * d) @ w
    f0, f1 = op.source(t), op.source(t + dt)
    if f0 is not None:
        rhs = rhs + 0.5 * dt * (f0 + f1)
    return np.linalg.solve(lhs, rhs)


def cn_solve(problem: ProblemSpec, dt: float, t_end: float, adaptive: AdaptiveConfig | None = None,
             order: int | None = None, u0: SpectralExpansion | None = None, timing: bool = True):
    """March the Galerkin system with Crank-Nicolson.  Returns (records, final expansion)."""
    if problem.dim != 1 or problem.bases[0].family is not Family.HERMITE or problem.complex:
        raise ValueError("Crank-Nicolson baseline covers real 1-D Hermite heat problems only")
    if problem.operator not in ("diffusion", "laplacian"):
        raise ValueError("Crank-Nicolson baseline needs a diffusion operator")
    adaptive = adaptive or AdaptiveConfig()
    m = step_count(t_end, dt)
    u = u0 if u0 is not None else initial_expansion(problem, order=order)
    state = AdaptiveState.start(u, adaptive)
    records = []
    t = 0.0
    for j in range(m):
        t0 = time.perf_counter()
        op = discretize(problem, u)
        # D is negative semidefinite, so I - dt/2 D is invertible for dt > 0
        w = cn_step(op, op.pack(u), t, dt)
        u = op.unpack(w)
        t = (j + 1) * dt
        if adaptive.any_enabled:
            u, _, state = adapt(u, state, adaptive)
        err = None
        if problem.exact is not None:
            tt = t
            err = l2_error(u, lambda x: problem.exact(x, tt))
        records.append(StepRecord(
            step=j + 1, t=t, loss=0.0, l2_error=err, F=indicators(u), beta=[u.basis.beta],
            x_l=[u.basis.x_l], N=u.order, epochs=0,
            wall_ms=(time.perf_counter() - t0) * 1e3 if timing else math.nan,
        ))
    return records, u
