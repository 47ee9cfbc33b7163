"""Built-in PDE problems and their spatial operators in coefficient space.

Every operator is linear in the expansion coefficients, so a problem reduces
(for a given basis and order) to a matrix ``L(t)`` plus an optional source
vector ``f(t)``:  dW/dt = L(t) W + f(t).  :class:`StepOperator` carries that
pair together with the spatial norm and the boundary rows used by the
collocation loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .basis import (
    BasisDescriptor,
    Family,
    basis_matrix,
    chebyshev,
    derivative_values,
    hermite,
    hermite_second_derivative,
    laguerre,
    mmgf,
    project,
    projection_matrix,
    quadrature_rule,
    weighted_norm_matrix,
)
from .net import MlpParams, TrainConfig, forward, init_mlp, train
from .expansion import (
    MultiExpansion,
    SpectralExpansion,
    axis_reprojection,
    hyperbolic_index_set,
)


@dataclass
class ProblemSpec:
    id: str
    domain: str
    bases: tuple[BasisDescriptor, ...]
    order: int
    operator: str  # advection | diffusion | laplacian | schrodinger
    initial: Callable
    exact: Callable | None = None
    source: Callable | None = None
    velocity: Callable | None = None
    kappa: float = 1.0
    boundary: list[tuple[float, Callable[[float], float]]] = field(default_factory=list)
    complex: bool = False
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.bases)


# ---------------------------------------------------------------------------
# analytic data
# ---------------------------------------------------------------------------

def _heat_exact(x, t):
    return np.sin(x) / np.sqrt(t + 1) * np.exp(-x * x / (4 * (t + 1)))


def _heat_source(x, t):
    return (x * np.cos(x) + (t + 1) * np.sin(x)) * (t + 1) ** -1.5 * np.exp(-x * x / (4 * (t + 1)))


def _heat_source_kappa(kappa):
    """f = u_t - kappa u_xx for the decaying sin-Gaussian solution."""

    def f(x, t):
        s = t + 1
        g = np.exp(-x * x / (4 * s))
        u_t = np.sin(x) * g * (x * x / (4 * s ** 2.5) - 0.5 * s ** -1.5)
        u_xx = g / np.sqrt(s) * (-np.sin(x) - x * np.cos(x) / s + np.sin(x) * (x * x / (4 * s * s) - 1 / (2 * s)))
        return u_t - kappa * u_xx

    return f


def schrodinger_exact(zeta=1.0, k=1.0):
    def psi(x, t):
        z = zeta + 1j * t
        return np.exp(1j * k * (x - k * t) - (x - 2 * k * t) ** 2 / (4 * z)) / np.sqrt(z)

    return psi


def fit_target(x, t):
    """Algebraically decaying target used for the function-fitting comparison."""
    return 8 * x * np.sin(3 * x) / (x * x + 4) ** 2 * t


def builtin(pid: str, **params) -> ProblemSpec:
    if pid == "bounded-advection":
        return ProblemSpec(
            pid, "bounded-interval", (chebyshev(),), 8, "advection",
            initial=lambda x: np.cos(x + 2),
            exact=lambda x, t: np.cos((t + 1) * (x + 2)),
            velocity=lambda x, t: (x + 2) / (t + 1),
            boundary=[(1.0, lambda t: math.cos(3 * (t + 1)))],
        )
    if pid == "halfline-advection":
        return ProblemSpec(
            pid, "half-line", (laguerre(2.0),), 8, "advection",
            initial=lambda x: np.exp(-x),
            exact=lambda x, t: np.exp(-x / (t + 1)),
            velocity=lambda x, t: -x / (t + 1),
            boundary=[(0.0, lambda t: 1.0)],
        )
    if pid == "heat2d":
        def exact(x, y, t):
            return np.exp(-x * x / (4 * (t + 3)) - y * y / (4 * (t + 2))) / np.sqrt((t + 3) * (t + 2))
        return ProblemSpec(
            pid, "real-plane", (hermite(0.4), hermite(0.5)), 8, "laplacian",
            initial=lambda x, y: exact(x, y, 0.0), exact=exact,
            params={"hyperbolicity": -math.inf},
        )
    if pid == "heat3d":
        def exact(x, y, z, t):
            return (np.exp(-x * x / (4 * (t + 3)) - y * y / (4 * (t + 2)) - z * z / (4 * (t + 1)))
                    / np.sqrt((t + 3) * (t + 2) * (t + 1)))
        return ProblemSpec(
            pid, "real-3-space", (hermite(0.4), hermite(0.5), hermite(0.7)), 9, "laplacian",
            initial=lambda x, y, z: exact(x, y, z, 0.0), exact=exact,
            params={"hyperbolicity": 0.0},
        )
    if pid == "schrodinger":
        zeta = float(params.get("zeta", 1.0))
        k = float(params.get("k", 1.0))
        psi = schrodinger_exact(zeta, k)
        return ProblemSpec(
            pid, "real-line", (hermite(0.8),), 24, "schrodinger",
            initial=lambda x: psi(x, 0.0), exact=psi, complex=True,
            params={"zeta": zeta, "k": k},
        )
    if pid == "heat-source":
        return ProblemSpec(
            pid, "real-line", (hermite(0.8),), 24, "diffusion",
            initial=lambda x: np.exp(-x * x / 4) * np.sin(x),
            exact=_heat_exact, source=_heat_source, kappa=1.0,
        )
    if pid == "diffusivity-inference":
        kappa = float(params.get("kappa", 2.0))
        return ProblemSpec(
            pid, "real-line", (hermite(0.8),), 20, "diffusion",
            initial=lambda x: np.exp(-x * x / 4) * np.sin(x),
            exact=_heat_exact, source=_heat_source_kappa(kappa), kappa=kappa,
            params={"kappa": kappa},
        )
    raise KeyError(f"unknown problem id {pid!r}")


BUILTIN_IDS = (
    "bounded-advection", "halfline-advection", "heat2d", "heat3d",
    "schrodinger", "heat-source", "diffusivity-inference",
)


# ---------------------------------------------------------------------------
# initial expansions
# ---------------------------------------------------------------------------

def initial_expansion(p: ProblemSpec, bases=None, order=None, hyperbolicity=None):
    bases = tuple(bases or p.bases)
    order = p.order if order is None else order
    if p.dim == 1:
        if p.complex:
            c = (project(lambda x: p.initial(x).real, bases[0], order)
                 + 1j * project(lambda x: p.initial(x).imag, bases[0], order))
        else:
            c = project(p.initial, bases[0], order)
        return SpectralExpansion(bases[0], c)
    gamma = p.params.get("hyperbolicity", -math.inf) if hyperbolicity is None else hyperbolicity
    iset = hyperbolic_index_set(p.dim, order, gamma)
    return MultiExpansion(bases, iset, project_multi(p.initial, bases, iset))


def project_multi(f, bases, iset, q=None) -> np.ndarray:
    """Tensor-product Gauss projection onto the functions of an index set."""
    q = q or iset.cap + 21
    rules = [quadrature_rule(b, q) for b in bases]
    mats = [projection_matrix(b, iset.cap, r) for b, r in zip(bases, rules)]
    grids = np.meshgrid(*[r.nodes for r in rules], indexing="ij")
    vals = np.asarray(f(*grids))
    for k, m in enumerate(mats):
        vals = np.moveaxis(np.tensordot(m, vals, axes=([1], [k])), 0, k)
    idx = iset.as_array()
    return vals[tuple(idx.T)]


# ---------------------------------------------------------------------------
# coefficient-space operators
# ---------------------------------------------------------------------------

def _advection_matrix(desc: BasisDescriptor, n: int, velocity, t: float) -> np.ndarray:
    rule = quadrature_rule(desc, n + 1)
    dphi = derivative_values(desc, n, rule.nodes, 1)
    pm = projection_matrix(desc, n, rule)
    return pm @ (velocity(rule.nodes, t)[:, None] * dphi.T)


def laplacian_matrix(bases, iset) -> np.ndarray:
    """Galerkin Laplacian restricted to an index set (couplings leaving it dropped)."""
    cap = iset.cap
    total = np.zeros((len(iset), len(iset)))
    for k, b in enumerate(bases):
        total += axis_reprojection(iset, k, hermite_second_derivative(cap, b.beta))
    return total


def operator_matrix(p: ProblemSpec, e, t: float = 0.0) -> np.ndarray:
    """Matrix of the spatial operator acting on e's coefficients (complex: on the real/imag stack)."""
    if isinstance(e, MultiExpansion):
        if p.operator != "laplacian":
            raise ValueError(f"operator {p.operator!r} not available in several dimensions")
        if any(b.family is not Family.HERMITE for b in e.bases):
            raise ValueError("multi-dimensional Laplacian needs Hermite bases")
        return p.kappa * laplacian_matrix(e.bases, e.index_set)
    desc, n = e.basis, e.order
    if p.operator == "advection":
        if desc.family is Family.MMGF:
            raise ValueError("advection needs a family with a derivative map")
        return _advection_matrix(desc, n, p.velocity, t)
    if desc.family is not Family.HERMITE:
        raise ValueError(f"operator {p.operator!r} implemented for Hermite bases only")
    d2 = hermite_second_derivative(n, desc.beta)
    if p.operator in ("diffusion", "laplacian"):
        return p.kappa * d2
    if p.operator == "schrodinger":
        z = np.zeros_like(d2)
        return np.block([[z, -d2], [d2, z]])
    raise ValueError(f"unknown operator {p.operator!r}")


def apply_operator(p: ProblemSpec, e, t: float = 0.0):
    """M[e] as an expansion of the same shape (source terms excluded)."""
    mat = operator_matrix(p, e, t)
    if isinstance(e, MultiExpansion):
        return MultiExpansion(e.bases, e.index_set, mat @ e.coeffs)
    if e.is_complex:
        m = e.order + 1
        v = mat @ np.concatenate([e.coeffs.real, e.coeffs.imag])
        return SpectralExpansion(e.basis, v[:m] + 1j * v[m:])
    return SpectralExpansion(e.basis, mat @ e.coeffs)


@dataclass
class StepOperator:
    """dW/dt = L(t) W + f(t) in packed real coordinates, plus norm and boundary rows."""

    problem: ProblemSpec
    template: object
    size: int
    norm: np.ndarray | None
    boundary_rows: list[tuple[np.ndarray, Callable[[float], float]]]
    time_dependent: bool
    _static: np.ndarray | None = None
    _source_proj: tuple | None = None

    def matrix(self, t: float) -> np.ndarray:
        if not self.time_dependent:
            if self._static is None:
                self._static = operator_matrix(self.problem, self.template, 0.0)
            return self._static
        return operator_matrix(self.problem, self.template, t)

    def source(self, t: float) -> np.ndarray | None:
        if self.problem.source is None:
            return None
        if self._source_proj is None:
            desc, n = self.template.basis, self.template.order
            rule = quadrature_rule(desc, n + 41)
            self._source_proj = (rule.nodes, projection_matrix(desc, n, rule))
        nodes, pm = self._source_proj
        return pm @ self.problem.source(nodes, t)

    def pack(self, e) -> np.ndarray:
        if isinstance(e, SpectralExpansion) and self.problem.complex:
            c = np.asarray(e.coeffs, dtype=complex)
            return np.concatenate([c.real, c.imag])
        return np.asarray(e.coeffs, dtype=float).copy()

    def unpack(self, w: np.ndarray):
        t = self.template
        if isinstance(t, MultiExpansion):
            return MultiExpansion(t.bases, t.index_set, np.array(w, dtype=float))
        if self.problem.complex:
            m = t.order + 1
            return SpectralExpansion(t.basis, w[:m] + 1j * w[m:])
        return SpectralExpansion(t.basis, np.array(w, dtype=float))

    def pack_map(self, coeff_map: np.ndarray) -> np.ndarray:
        """Lift a real coefficient-space linear map to packed coordinates."""
        if self.problem.complex and isinstance(self.template, SpectralExpansion):
            z = np.zeros_like(coeff_map)
            return np.block([[coeff_map, z], [z, coeff_map]])
        return coeff_map


def discretize(p: ProblemSpec, e, strong_bc: bool = False) -> StepOperator:
    if isinstance(e, MultiExpansion):
        return StepOperator(p, e, len(e.coeffs), None, [], False)
    desc, n = e.basis, e.order
    size = 2 * (n + 1) if p.complex else n + 1
    norm = None
    if not desc.orthonormal:
        norm = weighted_norm_matrix(desc, n)
    rows = []
    for xb, g in p.boundary:
        rows.append((basis_matrix(desc, n, np.array([xb]))[:, 0], g))
    if strong_bc:
        if desc.family is not Family.CHEBYSHEV or not p.boundary:
            raise ValueError("strong boundary imposition needs a Chebyshev basis with Dirichlet data")
        rule = quadrature_rule(desc, n + 1)
        w = rule.weights.copy()
        for xb, _ in p.boundary:
            w[np.argmin(np.abs(rule.nodes - xb))] = 0.0
        phi = basis_matrix(desc, n, rule.nodes)
        norm = (phi * w) @ phi.T
    return StepOperator(p, e, size, norm, rows, p.operator == "advection")


# ---------------------------------------------------------------------------
# noisy observations
# ---------------------------------------------------------------------------

def observe_noisy(p: ProblemSpec, t: float, sigma: float, nodes, seed: int) -> np.ndarray:
    """Exact solution at ``nodes`` plus i.i.d. N(0, sigma^2) noise."""
    if p.exact is None:
        raise ValueError(f"problem {p.id} has no analytic solution")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    nodes = np.asarray(getattr(nodes, "nodes", nodes), dtype=float)
    clean = np.asarray(p.exact(nodes, t), dtype=float)
    if sigma == 0:
        return clean
    rng = np.random.default_rng(seed)
    return clean + rng.normal(0.0, sigma, size=clean.shape)


# ---------------------------------------------------------------------------
# function fitting
# ---------------------------------------------------------------------------

@dataclass
class FitDataset:
    x: np.ndarray
    t: np.ndarray
    u: np.ndarray
    cauchy_scale: float = 12.0
    cauchy_loc: float = 0.0
    t_range: tuple[float, float] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if len(self.x) < 1 or not (len(self.x) == len(self.t) == len(self.u)):
            raise ValueError("dataset arrays must be non-empty and of equal length")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.u))):
            raise ValueError("dataset values must be finite")

    def __len__(self):
        return len(self.x)

    def split(self) -> tuple["FitDataset", "FitDataset"]:
        h = len(self) // 2
        a = FitDataset(self.x[:h], self.t[:h], self.u[:h], self.cauchy_scale, self.cauchy_loc, self.t_range, self.seed)
        b = FitDataset(self.x[h:], self.t[h:], self.u[h:], self.cauchy_scale, self.cauchy_loc, self.t_range, self.seed)
        return a, b


def sample_fit_dataset(n: int, seed: int = 0, scale: float = 12.0, loc: float = 0.0,
                       t_range=(0.0, 1.0), target=fit_target) -> FitDataset:
    """n (x, t, u) triples with Cauchy-distributed x and uniform t."""
    rng = np.random.default_rng(seed)
    x = loc + scale * rng.standard_cauchy(n)
    t = rng.uniform(t_range[0], t_range[1], n)
    return FitDataset(x, t, target(x, t), scale, loc, tuple(t_range), seed)


@dataclass
class FitResult:
    params: MlpParams
    mode: str
    basis: BasisDescriptor | None
    order: int | None
    train_mse: list[float]
    test_mse: list[float]

    def predict(self, x, t) -> np.ndarray:
        return _fit_predict(self.params, self.mode, self.basis, self.order, np.asarray(x, float),
                            np.asarray(t, float), "eval")


def _fit_predict(params, mode, basis, order, x, t, bn_mode):
    if mode == "spectral":
        w = forward(params, t[:, None], bn_mode)
        return np.sum(w * basis_matrix(basis, order, x).T, axis=1)
    return forward(params, np.column_stack([x, t]), bn_mode)[:, 0]


def fit_function(data: FitDataset, mode: str = "spectral", basis: BasisDescriptor | None = None,
                 order: int = 9, hidden: int = 10, layers: int | None = None,
                 cfg: TrainConfig | None = None, test: FitDataset | None = None) -> FitResult:
    """Least-squares fit of u(x, t) from samples, either through spectral coefficients or directly.

    Without an explicit ``test`` set the dataset is split in halves (train, test).
    The test MSE is evaluated every epoch with running batch-norm statistics.
    """
    if mode not in ("spectral", "direct"):
        raise ValueError("mode must be 'spectral' or 'direct'")
    if test is None:
        if len(data) < 2:
            raise ValueError("need at least 2 samples to split into train and test")
        data, test = data.split()
    if len(data) < 2:
        raise ValueError("training batch needs at least 2 samples for batch normalization")
    cfg = cfg or TrainConfig(lr=5e-4, max_epochs=10000, tol=0.0)
    if mode == "spectral":
        basis = basis or mmgf(0.5, 0.0)
        layers = 4 if layers is None else layers
        dims = [1] + [hidden] * layers + [order + 1]
        phi = basis_matrix(basis, order, data.x).T  # (n, N+1)
        inputs = data.t[:, None]

        def loss(out):
            r = np.sum(out * phi, axis=1) - data.u
            return float(np.mean(r * r)), (2 / len(r)) * r[:, None] * phi
    else:
        layers = 5 if layers is None else layers
        dims = [2] + [hidden] * layers + [1]
        inputs = np.column_stack([data.x, data.t])

        def loss(out):
            r = out[:, 0] - data.u
            return float(np.mean(r * r)), (2 / len(r)) * r[:, None]

    test_curve: list[float] = []

    def watch(epoch, value, p):
        pred = _fit_predict(p, mode, basis, order, test.x, test.t, "eval")
        test_curve.append(float(np.mean((pred - test.u) ** 2)))

    res = train(init_mlp(dims, cfg.seed), inputs, loss, cfg, callback=watch)
    watch(res.epochs, res.history[-1], res.params)
    return FitResult(res.params, mode, basis if mode == "spectral" else None,
                     order if mode == "spectral" else None, res.history, test_curve)
