"""Spectral basis families, Gauss rules, projections and coefficient-space derivatives.

Four families are supported:

* ``hermite``   generalized Hermite functions on the real line, orthonormal in L2
* ``laguerre``  generalized Laguerre functions on the half line, orthonormal in L2
* ``chebyshev`` Chebyshev polynomials on [-1, 1] with Gauss-Lobatto collocation
* ``mmgf``      modified mapped Gegenbauer functions on the real line

Scaled/translated Hermite functions follow the convention

    phi_i(x) = sqrt(beta) * psi_i(beta * (x - x_L))

with ``psi_i`` the physicists' Hermite functions normalised to unit L2 norm.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

NEWTON_MAX_ITER = 100
NEWTON_TOL = 1e-14


class QuadratureError(RuntimeError):
    """Raised when Gauss node computation fails to converge."""


class Family(str, enum.Enum):
    HERMITE = "hermite"
    LAGUERRE = "laguerre"
    CHEBYSHEV = "chebyshev"
    MMGF = "mmgf"


@dataclass(frozen=True)
class BasisDescriptor:
    family: Family
    beta: float = 1.0
    x_l: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not math.isfinite(self.x_l):
            raise ValueError("x_l must be finite")
        if self.family is Family.LAGUERRE and self.x_l != 0.0:
            raise ValueError("Laguerre functions live on [0, inf); x_l must be 0")
        if self.family is Family.MMGF and self.lam < -0.5:
            raise ValueError(f"gegenbauer lambda must be >= -1/2, got {self.lam}")

    def replace(self, **changes) -> "BasisDescriptor":
        return dataclasses.replace(self, **changes)

    @property
    def orthonormal(self) -> bool:
        return self.family in (Family.HERMITE, Family.LAGUERRE)

    def check_domain(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("evaluation points must be finite")
        if self.family is Family.LAGUERRE and np.any(x < 0):
            raise ValueError("Laguerre basis is defined on x >= 0")
        if self.family is Family.CHEBYSHEV and np.any(np.abs(x) > 1 + 1e-12):
            raise ValueError("Chebyshev basis is defined on [-1, 1]")
        return x


def hermite(beta=1.0, x_l=0.0) -> BasisDescriptor:
    return BasisDescriptor(Family.HERMITE, beta, x_l)


def laguerre(beta=1.0) -> BasisDescriptor:
    return BasisDescriptor(Family.LAGUERRE, beta)


def chebyshev() -> BasisDescriptor:
    return BasisDescriptor(Family.CHEBYSHEV)


def mmgf(beta=1.0, lam=0.0) -> BasisDescriptor:
    return BasisDescriptor(Family.MMGF, beta, 0.0, lam)


# ---------------------------------------------------------------------------
# raw recurrences (unit scaling, no translation)
# ---------------------------------------------------------------------------

def _hermite_functions(n: int, y: np.ndarray) -> np.ndarray:
    """Orthonormal Hermite functions psi_0..psi_n at y, shape (n+1, *y.shape)."""
    out = np.empty((n + 1,) + y.shape)
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * y * y)
    if n >= 1:
        out[1] = math.sqrt(2.0) * y * out[0]
    for k in range(1, n):
        out[k + 1] = math.sqrt(2.0 / (k + 1)) * y * out[k] - math.sqrt(k / (k + 1)) * out[k - 1]
    return out


def _laguerre_functions(n: int, y: np.ndarray) -> np.ndarray:
    """exp(-y/2) L_k(y) for k = 0..n; orthonormal on [0, inf)."""
    out = np.empty((n + 1,) + y.shape)
    out[0] = np.exp(-0.5 * y)
    if n >= 1:
        out[1] = (1.0 - y) * out[0]
    for k in range(1, n):
        out[k + 1] = ((2 * k + 1 - y) * out[k] - k * out[k - 1]) / (k + 1)
    return out


def _chebyshev_polys(n: int, y: np.ndarray) -> np.ndarray:
    out = np.empty((n + 1,) + y.shape)
    out[0] = 1.0
    if n >= 1:
        out[1] = y
    for k in range(1, n):
        out[k + 1] = 2 * y * out[k] - out[k - 1]
    return out


def _gegenbauer_polys(n: int, lam: float, y: np.ndarray) -> np.ndarray:
    out = np.empty((n + 1,) + y.shape)
    out[0] = 1.0
    if n >= 1:
        out[1] = 2 * lam * y
    for k in range(1, n):
        out[k + 1] = (2 * y * (k + lam) * out[k] - (k + 2 * lam - 1) * out[k - 1]) / (k + 1)
    return out


def _legendre_polys(n: int, y: np.ndarray) -> np.ndarray:
    out = np.empty((n + 1,) + y.shape)
    out[0] = 1.0
    if n >= 1:
        out[1] = y
    for k in range(1, n):
        out[k + 1] = ((2 * k + 1) * y * out[k] - k * out[k - 1]) / (k + 1)
    return out


def _gegenbauer_norm2(k: int, lam: float) -> float:
    # int_{-1}^{1} (C_k^lam)^2 (1-y^2)^(lam-1/2) dy, lam != 0
    log_h = (math.log(math.pi) + (1 - 2 * lam) * math.log(2) + math.lgamma(k + 2 * lam)
             - math.lgamma(k + 1) - math.log(k + lam) - 2 * math.lgamma(lam))
    return math.exp(log_h)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def basis_matrix(desc: BasisDescriptor, n: int, x) -> np.ndarray:
    """Values phi_i(x_k) for i = 0..n; shape (n+1, len(x))."""
    if n < 0:
        raise ValueError("order must be non-negative")
    x = desc.check_domain(np.atleast_1d(x))
    fam, b = desc.family, desc.beta
    if fam is Family.HERMITE:
        return math.sqrt(b) * _hermite_functions(n, b * (x - desc.x_l))
    if fam is Family.LAGUERRE:
        return math.sqrt(b) * _laguerre_functions(n, b * x)
    if fam is Family.CHEBYSHEV:
        return _chebyshev_polys(n, np.clip(x, -1.0, 1.0))
    bx = b * x
    r = np.sqrt(1.0 + bx * bx)
    y = bx / r
    if desc.lam == 0.0:
        return _chebyshev_polys(n, y) / r
    return _gegenbauer_polys(n, desc.lam, y) * r ** -(desc.lam + 1)


def eval_basis(desc: BasisDescriptor, i: int, x):
    """phi_i(x) for a single order index; scalar in, scalar out."""
    if i < 0:
        raise ValueError("order index must be non-negative")
    vals = basis_matrix(desc, i, x)[i]
    return float(vals[0]) if np.ndim(x) == 0 else vals


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Nodes with two weight sets.

    ``weights`` realise the family's own inner product (Chebyshev weight for
    the Chebyshev family, plain Lebesgue measure otherwise); ``lebesgue_weights``
    always approximate the plain integral of g over the natural domain.
    """

    nodes: np.ndarray
    weights: np.ndarray
    lebesgue_weights: np.ndarray

    def __len__(self):
        return len(self.nodes)


def _newton(f_df: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]], x0: np.ndarray) -> np.ndarray:
    x = np.array(x0, dtype=float)
    for _ in range(NEWTON_MAX_ITER):
        f, df = f_df(x)
        dx = f / df
        x = x - dx
        if np.all(np.abs(dx) <= NEWTON_TOL * np.maximum(1.0, np.abs(x))):
            return x
    raise QuadratureError(f"Newton iteration did not converge within {NEWTON_MAX_ITER} steps")


def _jacobi_guess(diag: np.ndarray, off: np.ndarray) -> np.ndarray:
    if len(diag) == 1:
        return diag.copy()
    return np.linalg.eigvalsh(np.diag(diag) + np.diag(off, 1) + np.diag(off, -1))


def _check_sorted(nodes):
    if len(nodes) > 1 and not np.all(np.diff(nodes) > 0):
        raise QuadratureError("Gauss nodes not distinct; root finding failed")


@lru_cache(maxsize=256)
def gauss_hermite(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and Lebesgue weights integrating g(y) over R (beta=1, x_L=0)."""
    guess = _jacobi_guess(np.zeros(q), np.sqrt(np.arange(1, q) / 2.0))

    def f_df(y):
        psi = _hermite_functions(q, y)
        return psi[q], math.sqrt(2.0 * q) * psi[q - 1] - y * psi[q]

    y = np.sort(_newton(f_df, guess))
    _check_sorted(y)
    w = 1.0 / np.sum(_hermite_functions(q - 1, y) ** 2, axis=0)
    return y, w


@lru_cache(maxsize=256)
def gauss_laguerre(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Interior Gauss-Laguerre nodes and Lebesgue weights on [0, inf)."""
    k = np.arange(q)
    guess = _jacobi_guess(2 * k + 1.0, -np.arange(1, q, dtype=float))

    def f_df(y):
        lf = _laguerre_functions(q, y)
        # polynomial derivative L_q' = q (L_q - L_{q-1}) / y, scaled by exp(-y/2)
        return lf[q], q * (lf[q] - lf[q - 1]) / y

    y = np.sort(_newton(f_df, guess))
    _check_sorted(y)
    w = 1.0 / np.sum(_laguerre_functions(q - 1, y) ** 2, axis=0)
    return y, w


@lru_cache(maxsize=256)
def gauss_legendre(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    k = np.arange(1, q)
    guess = _jacobi_guess(np.zeros(q), k / np.sqrt(4.0 * k * k - 1))

    def f_df(y):
        p = _legendre_polys(q, y)
        return p[q], q * (y * p[q] - p[q - 1]) / (y * y - 1)

    y = np.sort(_newton(f_df, guess))
    _check_sorted(y)
    p = _legendre_polys(q - 1, y)
    norm = (2 * np.arange(q) + 1) / 2.0
    w = 1.0 / np.sum(norm[:, None] * p ** 2, axis=0)
    return y, w


@lru_cache(maxsize=256)
def gauss_gegenbauer(q: int, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss nodes/weights for the weight (1-y^2)^(lam-1/2), lam > -1/2, lam != 0."""
    k = np.arange(1, q)
    off = np.sqrt(k * (k + 2 * lam - 1) / (4.0 * (k + lam) * (k + lam - 1)))
    guess = _jacobi_guess(np.zeros(q), off)

    def f_df(y):
        c = _gegenbauer_polys(q, lam, y)
        return c[q], (q * y * c[q] - (q + 2 * lam - 1) * c[q - 1]) / (y * y - 1)

    y = np.sort(_newton(f_df, guess))
    _check_sorted(y)
    c = _gegenbauer_polys(q - 1, lam, y)
    h = np.array([_gegenbauer_norm2(j, lam) for j in range(q)])
    w = 1.0 / np.sum(c ** 2 / h[:, None], axis=0)
    return y, w


def chebyshev_lobatto(q: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """CGL nodes (ascending), Chebyshev-weight weights and Clenshaw-Curtis weights."""
    if q < 2:
        raise ValueError("Chebyshev-Gauss-Lobatto needs at least 2 nodes")
    n = q - 1
    theta = np.pi * np.arange(n, -1, -1) / n
    nodes = np.cos(theta)
    nodes[0], nodes[-1] = -1.0, 1.0
    if n % 2 == 0:
        nodes[n // 2] = 0.0
    cw = np.full(q, np.pi / n)
    cw[[0, -1]] = np.pi / (2 * n)
    # Clenshaw-Curtis weights on the same nodes
    cc = np.zeros(q)
    for k in range(q):
        s = 0.0
        for j in range(1, n // 2 + 1):
            bj = 1.0 if 2 * j == n else 2.0
            s += bj / (4.0 * j * j - 1) * math.cos(2 * j * theta[k])
        ck = 1.0 if k in (0, n) else 2.0
        cc[k] = ck / n * (1.0 - s)
    return nodes, cw, cc


def quadrature_rule(desc: BasisDescriptor, q: int) -> QuadratureRule:
    """Gauss rule of the family with ``q`` nodes, mapped to (beta, x_L)."""
    if q < 1:
        raise ValueError("quadrature needs at least one node")
    fam, b = desc.family, desc.beta
    if fam is Family.HERMITE:
        y, w = gauss_hermite(q)
        x, lw = desc.x_l + y / b, w / b
        return QuadratureRule(x, lw, lw)
    if fam is Family.LAGUERRE:
        y, w = gauss_laguerre(q)
        return QuadratureRule(y / b, w / b, w / b)
    if fam is Family.CHEBYSHEV:
        x, cw, cc = chebyshev_lobatto(q)
        return QuadratureRule(x, cw, cc)
    # MMGF: x = y / (beta sqrt(1 - y^2)), dx = dy / (beta (1 - y^2)^{3/2})
    if desc.lam == 0.0:
        j = np.arange(q)
        y = np.sort(np.cos((2 * j + 1) * np.pi / (2 * q)))
        w = np.full(q, np.pi / q)
        lw = w / (b * (1 - y * y))
    else:
        y, w = gauss_gegenbauer(q, desc.lam)
        lw = w * (1 - y * y) ** (-desc.lam - 1) / b
    x = y / (b * np.sqrt(1 - y * y))
    return QuadratureRule(x, lw, lw)


def default_quadrature_size(n: int) -> int:
    return n + 41


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def projection_matrix(desc: BasisDescriptor, n: int, rule: QuadratureRule) -> np.ndarray:
    """Matrix P (n+1, Q) mapping node values to coefficients."""
    phi = basis_matrix(desc, n, rule.nodes)
    weighted = phi * rule.weights
    norms = np.sum(weighted * phi, axis=1)
    return weighted / norms[:, None]


def project(f, desc: BasisDescriptor, n: int, q: int | None = None) -> np.ndarray:
    """Coefficients <f, phi_i> / <phi_i, phi_i> computed by the family's Gauss rule.

    ``f`` is either a callable or the values of f at the nodes of a rule of
    size ``q`` (``q`` defaults to ``len(f)`` in that case).
    """
    if callable(f):
        rule = quadrature_rule(desc, q or default_quadrature_size(n))
        values = np.asarray(f(rule.nodes))
    else:
        values = np.asarray(f)
        q = q or len(values)
        if len(values) != q:
            raise ValueError(f"got {len(values)} node values for a {q}-node rule")
        rule = quadrature_rule(desc, q)
    if values.shape != rule.nodes.shape:
        values = np.broadcast_to(values, rule.nodes.shape)
    return projection_matrix(desc, n, rule) @ values


# ---------------------------------------------------------------------------
# derivatives in coefficient space
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DerivativeMap:
    """Linear map from the coefficients of u to those of d^order u / dx^order.

    ``matrix`` has ``n + 1`` columns; for Hermite it has ``order`` extra rows
    because the derivative of phi_n leaves the span of phi_0..phi_n.
    """

    order: int
    matrix: np.ndarray

    def entry(self, i: int, j: int) -> float:
        return float(self.matrix[i, j])

    def square(self) -> np.ndarray:
        m = self.matrix.shape[1]
        return self.matrix[:m, :m]

    def __call__(self, coeffs):
        return self.matrix @ np.asarray(coeffs)


def _hermite_d1(n: int, beta: float, extra: int) -> np.ndarray:
    m = np.zeros((n + 1 + extra, n + 1 + extra))
    for i in range(n + 1 + extra):
        if i >= 1:
            m[i - 1, i] = beta * math.sqrt(i / 2.0)
        if i + 1 < n + 1 + extra:
            m[i + 1, i] = -beta * math.sqrt((i + 1) / 2.0)
    return m


def hermite_second_derivative(n: int, beta: float, rows: int | None = None) -> np.ndarray:
    rows = n + 1 if rows is None else rows
    m = np.zeros((rows, n + 1))
    b2 = beta * beta
    for j in range(n + 1):
        if j < rows:
            m[j, j] = -b2 * (j + 0.5)
        if j + 2 < rows:
            m[j + 2, j] = b2 * math.sqrt((j + 1) * (j + 2)) / 2.0
        if j >= 2:
            m[j - 2, j] = b2 * math.sqrt(j * (j - 1)) / 2.0
    return m


def _chebyshev_d1(n: int) -> np.ndarray:
    m = np.zeros((n + 1, n + 1))
    for j in range(n + 1):
        e = np.zeros(n + 1)
        e[j] = 1.0
        d = np.polynomial.chebyshev.chebder(e) if n > 0 else np.zeros(1)
        m[: len(d), j] = d
    return m


def _laguerre_d1(n: int, beta: float) -> np.ndarray:
    # d/dx phi_j = beta * (-phi_j / 2 - sum_{k<j} phi_k)
    m = -beta * np.tril(np.ones((n + 1, n + 1)), -1).T
    np.fill_diagonal(m, -beta / 2.0)
    return m


def derivative_map(desc: BasisDescriptor, n: int, order: int = 1) -> DerivativeMap:
    if order not in (1, 2):
        raise ValueError("derivative order must be 1 or 2")
    fam = desc.family
    if fam is Family.HERMITE:
        if order == 1:
            return DerivativeMap(1, _hermite_d1(n, desc.beta, 1)[:, : n + 1])
        return DerivativeMap(2, hermite_second_derivative(n, desc.beta, rows=n + 3))
    if fam is Family.LAGUERRE:
        d1 = _laguerre_d1(n, desc.beta)
        return DerivativeMap(order, d1 if order == 1 else d1 @ d1)
    if fam is Family.CHEBYSHEV:
        d1 = _chebyshev_d1(n)
        return DerivativeMap(order, d1 if order == 1 else d1 @ d1)
    raise ValueError(f"no coefficient-space derivative for family {fam.value}")


def derivative_values(desc: BasisDescriptor, n: int, x, order: int = 1) -> np.ndarray:
    """d^order phi_i / dx^order at x, shape (n+1, len(x))."""
    dm = derivative_map(desc, n, order).matrix
    phi = basis_matrix(desc, dm.shape[0] - 1, x)
    return dm.T @ phi


def gram(desc: BasisDescriptor, n: int, rule: QuadratureRule) -> np.ndarray:
    phi = basis_matrix(desc, n, rule.nodes)
    return (phi * rule.lebesgue_weights) @ phi.T


def indicator_weights(desc: BasisDescriptor, n: int) -> np.ndarray:
    """gamma_i used by the frequency indicator."""
    if desc.family is Family.CHEBYSHEV:
        g = np.full(n + 1, np.pi / 2)
        g[0] = np.pi
        return g
    return np.ones(n + 1)


def reprojection_matrix(old: BasisDescriptor, n_old: int, new: BasisDescriptor, n_new: int,
                        q: int | None = None) -> np.ndarray:
    """R with new_coeffs = R @ old_coeffs, evaluated on a rule of the new basis."""
    if old.family is not new.family:
        raise ValueError(f"cannot reproject {old.family.value} onto {new.family.value}")
    if old == new:
        r = np.zeros((n_new + 1, n_old + 1))
        k = min(n_new, n_old) + 1
        r[:k, :k] = np.eye(k)
        return r
    rule = quadrature_rule(new, q or reprojection_quadrature_size(n_old, n_new))
    phi_old = basis_matrix(old, n_old, rule.nodes)
    return projection_matrix(new, n_new, rule) @ phi_old.T


def reprojection_quadrature_size(n_old: int, n_new: int) -> int:
    return 2 * max(n_old, n_new) + 40


def weighted_norm_matrix(desc: BasisDescriptor, n: int) -> np.ndarray:
    """Gram matrix of the spatial norm used by collocation losses."""
    if desc.family is Family.CHEBYSHEV:
        rule = quadrature_rule(desc, n + 1)
        phi = basis_matrix(desc, n, rule.nodes)
        return (phi * rule.weights) @ phi.T
    if desc.orthonormal:
        return np.eye(n + 1)
    rule = quadrature_rule(desc, default_quadrature_size(n))
    return gram(desc, n, rule)


__all__: Sequence[str] = (
    "Family", "BasisDescriptor", "QuadratureRule", "DerivativeMap", "QuadratureError",
    "hermite", "laguerre", "chebyshev", "mmgf",
    "eval_basis", "basis_matrix", "quadrature_rule", "project", "projection_matrix",
    "derivative_map", "derivative_values", "hermite_second_derivative",
    "reprojection_matrix", "indicator_weights", "gram", "weighted_norm_matrix",
)
