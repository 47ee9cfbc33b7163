"""Between-step controllers for the scaling factor, the centre and the order.

The three update rules are pure functions of their inputs.  :func:`adapt`
chains them for a whole expansion and returns the linear map it applied to
the coefficients, so callers can carry other coefficient-space state (a
network output layer, say) across the change of basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import Family, reprojection_matrix
from .expansion import (
    MultiExpansion,
    SpectralExpansion,
    axis_reprojection,
    directional_indicator,
    frequency_indicator,
)

MOVE_GRID = 5


@dataclass(frozen=True)
class AdaptiveConfig:
    q: float = 0.95
    nu: float = 1 / 0.95
    rho: float = 1.5
    rho0: float = 2.0
    gamma_ratio: float = 1.3
    d_min: float = 0.004
    d_max: float = 0.1
    move_threshold: float = 1.001
    scaling: bool = False
    moving: bool = False
    p_refine: bool = False
    p_decrease: bool = False
    max_scalings: int = 20
    min_order: int = 4

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise ValueError("q must lie in (0, 1)")
        if not self.nu > 1:
            raise ValueError("nu must be > 1")
        if not (self.rho > 1 and self.rho0 > 1):
            raise ValueError("rho and rho0 must be > 1")
        if not self.gamma_ratio >= 1:
            raise ValueError("gamma_ratio must be >= 1")
        if not 0 < self.d_min <= self.d_max:
            raise ValueError("need 0 < d_min <= d_max")
        if not self.move_threshold > 1:
            raise ValueError("move_threshold must be > 1")
        if self.max_scalings < 1:
            raise ValueError("max_scalings must be >= 1")

    @property
    def any_enabled(self) -> bool:
        return self.scaling or self.moving or self.p_refine


@dataclass
class AdaptiveState:
    f_ref: list[float]
    rho: list[float]

    @classmethod
    def start(cls, e, cfg: AdaptiveConfig) -> "AdaptiveState":
        f = indicators(e)
        return cls(list(f), [cfg.rho] * len(f))

    def __post_init__(self):
        if any(not 0 <= f <= 1 for f in self.f_ref):
            raise ValueError("reference indicators must lie in [0, 1]")
        if any(r < 1 for r in self.rho):
            raise ValueError("rho must be >= 1")


def indicators(e) -> list[float]:
    if isinstance(e, MultiExpansion):
        return [directional_indicator(e, k) for k in range(e.index_set.dim)]
    return [frequency_indicator(e)]


def scaling_update(f_prev: float, f_curr: float, beta: float, cfg: AdaptiveConfig) -> float:
    if f_prev > 0 and f_curr / f_prev > cfg.nu:
        return cfg.q * beta
    return beta


def p_refine_update(f_prev: float, f_curr: float, n: int, rho: float, cfg: AdaptiveConfig) -> tuple[int, float]:
    if n < 1:
        raise ValueError("order must be >= 1")
    if f_prev > 0 and f_curr > rho * f_prev:
        return n + 1, rho * cfg.gamma_ratio
    if cfg.p_decrease and f_curr < f_prev / cfg.rho0 and n > cfg.min_order:
        return n - 1, rho
    return n, rho


def move_candidates(cfg: AdaptiveConfig) -> np.ndarray:
    d = np.geomspace(cfg.d_min, cfg.d_max, MOVE_GRID)
    return np.concatenate([-d[::-1], d])


def move_update(e: SpectralExpansion, cfg: AdaptiveConfig) -> float:
    """Greedy search for a better centre among x_L +- delta."""
    if e.basis.family is not Family.HERMITE:
        raise ValueError("moving needs a Hermite basis")
    f_now = frequency_indicator(e)
    x_l = e.basis.x_l
    if f_now == 0:
        return x_l
    best, best_f = x_l, math.inf
    for d in move_candidates(cfg):
        cand = _reproject(e, e.basis.replace(x_l=x_l + d))
        f = frequency_indicator(cand)
        if f < best_f:
            best, best_f = x_l + d, f
    if best_f == 0 or f_now / best_f > cfg.move_threshold:
        return best
    return x_l


def _reproject(e: SpectralExpansion, new_basis, new_order=None) -> SpectralExpansion:
    n_new = e.order if new_order is None else new_order
    r = reprojection_matrix(e.basis, e.order, new_basis, n_new)
    return SpectralExpansion(new_basis, r @ e.coeffs)


def adapt(e, state: AdaptiveState, cfg: AdaptiveConfig):
    """Apply the enabled controllers to ``e``.

    Returns ``(new_expansion, coefficient_map, new_state)`` where
    ``new_expansion.coeffs == coefficient_map @ e.coeffs``.
    """
    if isinstance(e, MultiExpansion):
        return _adapt_multi(e, state, cfg)
    f_ref = state.f_ref[0]
    rho = state.rho[0]
    m = np.eye(e.order + 1)
    changed = False
    f_curr = frequency_indicator(e)

    if cfg.moving:
        x_new = move_update(e, cfg)
        if x_new != e.basis.x_l:
            r = reprojection_matrix(e.basis, e.order, e.basis.replace(x_l=x_new), e.order)
            e = SpectralExpansion(e.basis.replace(x_l=x_new), r @ e.coeffs)
            m = r @ m
            changed = True

    if cfg.scaling:
        beta = e.basis.beta
        f_now = frequency_indicator(e)
        trial = scaling_update(f_ref, f_curr, beta, cfg)
        best = None
        for _ in range(cfg.max_scalings):
            if trial == beta:
                break
            nb = e.basis.replace(beta=trial)
            r = reprojection_matrix(e.basis, e.order, nb, e.order)
            cand = SpectralExpansion(nb, r @ e.coeffs)
            f_c = frequency_indicator(cand)
            if not f_c < f_now:
                break
            best, f_now = (cand, r), f_c
            trial = cfg.q * trial
        if best is not None:
            e, r = best
            m = r @ m
            changed = True

    if cfg.p_refine:
        n_new, rho_new = p_refine_update(f_ref, frequency_indicator(e), e.order, rho, cfg)
        if n_new != e.order:
            pad = np.eye(n_new + 1, e.order + 1)
            e = SpectralExpansion(e.basis, pad @ e.coeffs)
            m = pad @ m
            rho = rho_new
            changed = True

    if changed:
        f_ref = frequency_indicator(e)
    return e, m, AdaptiveState([f_ref], [rho])


def _adapt_multi(e: MultiExpansion, state: AdaptiveState, cfg: AdaptiveConfig):
    if cfg.moving or cfg.p_refine:
        raise ValueError("only scaling is available for multi-dimensional expansions")
    m = np.eye(len(e.coeffs))
    f_ref = list(state.f_ref)
    if not cfg.scaling:
        return e, m, AdaptiveState(f_ref, list(state.rho))
    cap = e.index_set.cap
    for k in range(e.index_set.dim):
        f_curr = directional_indicator(e, k)
        beta = e.bases[k].beta
        trial = scaling_update(f_ref[k], f_curr, beta, cfg)
        f_now = f_curr
        best = None
        for _ in range(cfg.max_scalings):
            if trial == beta:
                break
            nb = e.bases[k].replace(beta=trial)
            r = axis_reprojection(e.index_set, k, reprojection_matrix(e.bases[k], cap, nb, cap))
            bases = list(e.bases)
            bases[k] = nb
            cand = MultiExpansion(tuple(bases), e.index_set, r @ e.coeffs)
            f_c = directional_indicator(cand, k)
            if not f_c < f_now:
                break
            best, f_now = (cand, r), f_c
            trial = cfg.q * trial
        if best is not None:
            e, r = best
            m = r @ m
            f_ref[k] = f_now
    return e, m, AdaptiveState(f_ref, list(state.rho))
