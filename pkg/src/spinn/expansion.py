"""Spectral expansions, the frequency indicator, reprojection and multi-index sets."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .basis import (
    BasisDescriptor,
    basis_matrix,
    indicator_weights,
    quadrature_rule,
    reprojection_matrix,
)

FULL_TENSOR = -math.inf


@dataclass
class SpectralExpansion:
    """u_N(x) = sum_i coeffs[i] * phi_i(x); complex coefficients for complex fields."""

    basis: BasisDescriptor
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.atleast_1d(np.asarray(self.coeffs))
        if self.coeffs.ndim != 1 or len(self.coeffs) == 0:
            raise ValueError("coefficients must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coefficients must be finite")
        if not np.iscomplexobj(self.coeffs):
            self.coeffs = self.coeffs.astype(float)

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.coeffs)

    def __call__(self, x):
        return evaluate(self, x)


@dataclass(frozen=True)
class MultiIndexSet:
    dim: int
    cap: int
    hyperbolicity: float
    indices: tuple[tuple[int, ...], ...]

    def __len__(self):
        return len(self.indices)

    def as_array(self) -> np.ndarray:
        return np.array(self.indices, dtype=int).reshape(len(self.indices), self.dim)

    def position(self) -> dict[tuple[int, ...], int]:
        return {n: k for k, n in enumerate(self.indices)}


@dataclass
class MultiExpansion:
    bases: tuple[BasisDescriptor, ...]
    index_set: MultiIndexSet
    coeffs: np.ndarray = field(default=None)

    def __post_init__(self):
        self.bases = tuple(self.bases)
        if len(self.bases) != self.index_set.dim:
            raise ValueError("one basis descriptor per dimension is required")
        if self.coeffs is None:
            self.coeffs = np.zeros(len(self.index_set))
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (len(self.index_set),):
            raise ValueError("coefficient count must equal index-set size")

    def __call__(self, *coords):
        return evaluate(self, *coords)


def _admitted(n: Sequence[int], cap: int, gamma: float) -> bool:
    if gamma == FULL_TENSOR:
        return max(n) <= cap
    inf_norm = max(n)
    if inf_norm == 0:
        return True
    mix = math.prod(max(k, 1) for k in n)
    lhs = mix * inf_norm ** (-gamma)
    rhs = cap ** (1 - gamma)
    return lhs <= rhs * (1 + 1e-12)


def hyperbolic_index_set(dim: int, cap: int, gamma: float = FULL_TENSOR) -> MultiIndexSet:
    """Indices n in [0, cap]^dim with |n|_mix * |n|_inf^-gamma <= cap^(1 - gamma).

    ``gamma = -inf`` (or the string ``"full"``) selects the full tensor product.
    """
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if isinstance(gamma, str):
        if gamma != "full":
            raise ValueError(f"unknown hyperbolicity {gamma!r}")
        gamma = FULL_TENSOR
    if not gamma < 1:
        raise ValueError("hyperbolicity must be < 1")
    idx = tuple(n for n in itertools.product(range(cap + 1), repeat=dim) if _admitted(n, cap, gamma))
    return MultiIndexSet(dim, cap, gamma, idx)


def evaluate(e, *coords):
    """Point values of a 1-D or multi-dimensional expansion."""
    if isinstance(e, MultiExpansion):
        idx = e.index_set.as_array()
        shape = np.broadcast(*[np.asarray(c, dtype=float) for c in coords]).shape
        flat = [np.broadcast_to(np.asarray(c, dtype=float), shape).ravel() for c in coords]
        total = np.ones((len(idx), flat[0].size))
        for k, (b, xk) in enumerate(zip(e.bases, flat)):
            phi = basis_matrix(b, e.index_set.cap, xk)
            total *= phi[idx[:, k]]
        out = e.coeffs @ total
        return out.reshape(shape) if shape else float(out[0])
    (x,) = coords
    phi = basis_matrix(e.basis, e.order, np.atleast_1d(x))
    out = e.coeffs @ phi
    return out if np.ndim(x) else out[0]


def _indicator(energy: np.ndarray, gammas: np.ndarray) -> float:
    n = len(energy) - 1
    if n < 1:
        raise ValueError("frequency indicator needs order >= 1")
    weighted = gammas * energy
    total = weighted.sum()
    if total == 0:
        return 0.0
    top = weighted[n - n // 3 + 1:].sum()
    return math.sqrt(top / total)


def frequency_indicator(e: SpectralExpansion) -> float:
    """Share of weighted coefficient energy held by the top third of the modes."""
    energy = np.abs(e.coeffs) ** 2
    return _indicator(energy, indicator_weights(e.basis, e.order))


def directional_indicator(e: MultiExpansion, axis: int) -> float:
    """Frequency indicator along one axis, other indices summed out."""
    idx = e.index_set.as_array()
    cap = e.index_set.cap
    energy = np.zeros(cap + 1)
    np.add.at(energy, idx[:, axis], e.coeffs ** 2)
    return _indicator(energy, indicator_weights(e.bases[axis], cap))


def reproject(e: SpectralExpansion, new_basis: BasisDescriptor, new_order: int | None = None) -> SpectralExpansion:
    """Re-express ``e`` in another basis of the same family (and optionally new order)."""
    new_order = e.order if new_order is None else new_order
    r = reprojection_matrix(e.basis, e.order, new_basis, new_order)
    return SpectralExpansion(new_basis, r @ e.coeffs)


def axis_reprojection(index_set: MultiIndexSet, axis: int, r: np.ndarray) -> np.ndarray:
    """Apply a 1-D reprojection matrix along one axis of a multi-index set."""
    idx = index_set.as_array()
    pos = index_set.position()
    out = np.zeros((len(idx), len(idx)))
    for a, n in enumerate(index_set.indices):
        for j in range(index_set.cap + 1):
            m = list(n)
            m[axis] = j
            b = pos.get(tuple(m))
            if b is not None:
                out[a, b] = r[n[axis], j]
    return out


def reproject_multi(e: MultiExpansion, axis: int, new_basis: BasisDescriptor) -> MultiExpansion:
    cap = e.index_set.cap
    r = reprojection_matrix(e.bases[axis], cap, new_basis, cap)
    bases = list(e.bases)
    bases[axis] = new_basis
    return MultiExpansion(tuple(bases), e.index_set, axis_reprojection(e.index_set, axis, r) @ e.coeffs)


_DEFAULT_ERROR_NODES = {1: 200, 2: 80, 3: 32}


def l2_error(e, reference: Callable, q: int | None = None) -> float:
    """Discrete L2 distance between an expansion and a reference function."""
    if isinstance(e, MultiExpansion):
        q = q or _DEFAULT_ERROR_NODES.get(e.index_set.dim, 24)
        rules = [quadrature_rule(b, q) for b in e.bases]
        grids = np.meshgrid(*[r.nodes for r in rules], indexing="ij")
        w = np.ones(grids[0].shape)
        for k, r in enumerate(rules):
            shape = [1] * len(rules)
            shape[k] = -1
            w = w * r.lebesgue_weights.reshape(shape)
        diff = evaluate(e, *grids) - reference(*grids)
        return math.sqrt(float(np.sum(w * np.abs(diff) ** 2)))
    rule = quadrature_rule(e.basis, q or _DEFAULT_ERROR_NODES[1])
    diff = evaluate(e, rule.nodes) - reference(rule.nodes)
    return math.sqrt(float(np.sum(rule.lebesgue_weights * np.abs(diff) ** 2)))
