"""Fully connected ReLU network with batch normalization and hand-written backprop.

The network maps a (small) batch of inputs to a batch of coefficient vectors.
Every hidden layer is ``affine -> batch-norm -> relu``; the output layer is a
plain affine map.  Training is full-batch gradient descent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
SNAPSHOT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, message, params=None, history=None):
        super().__init__(message)
        self.params = params
        self.history = history or []


@dataclass
class MlpParams:
    dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    gamma: list[np.ndarray]
    shift: list[np.ndarray]
    running_mean: list[np.ndarray]
    running_var: list[np.ndarray]

    @property
    def n_hidden(self) -> int:
        return len(self.dims) - 2

    def copy(self) -> "MlpParams":
        cp = lambda xs: [x.copy() for x in xs]
        return MlpParams(list(self.dims), cp(self.weights), cp(self.biases), cp(self.gamma),
                         cp(self.shift), cp(self.running_mean), cp(self.running_var))

    def trainable(self) -> list[np.ndarray]:
        return self.weights + self.biases + self.gamma + self.shift

    def parameter_count(self) -> int:
        return sum(a.size for a in self.trainable())

    def to_record(self) -> dict:
        flat = lambda xs: [x.ravel().tolist() for x in xs]
        return {
            "version": SNAPSHOT_VERSION,
            "dims": list(self.dims),
            "weights": flat(self.weights),
            "biases": flat(self.biases),
            "gamma": flat(self.gamma),
            "shift": flat(self.shift),
            "running_mean": flat(self.running_mean),
            "running_var": flat(self.running_var),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "MlpParams":
        if rec.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {rec.get('version')}")
        dims = list(rec["dims"])
        arr = lambda xs: [np.asarray(x, dtype=float) for x in xs]
        weights = [np.asarray(w, dtype=float).reshape(dims[k], dims[k + 1])
                   for k, w in enumerate(rec["weights"])]
        return cls(dims, weights, arr(rec["biases"]), arr(rec["gamma"]), arr(rec["shift"]),
                   arr(rec["running_mean"]), arr(rec["running_var"]))

    def dumps(self) -> str:
        return json.dumps(self.to_record())


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    gamma: list[np.ndarray]
    shift: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return self.weights + self.biases + self.gamma + self.shift


@dataclass
class TrainConfig:
    lr: float = 5e-4
    max_epochs: int = 100_000
    tol: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise ValueError("lr must be a finite non-negative number")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.tol >= 0:
            raise ValueError("tol must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")


def init_mlp(dims, seed: int = 0) -> MlpParams:
    """Uniform(-sqrt(a), sqrt(a)) weights with a = 1/fan_in; zero biases."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError("dims needs at least input and output sizes, all >= 1")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    hidden = dims[1:-1]
    return MlpParams(
        dims, weights, biases,
        gamma=[np.ones(h) for h in hidden],
        shift=[np.zeros(h) for h in hidden],
        running_mean=[np.zeros(h) for h in hidden],
        running_var=[np.ones(h) for h in hidden],
    )


def _as_batch(inputs, dim_in: int) -> np.ndarray:
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1:
        x = x[:, None] if dim_in == 1 else x[None, :]
    if x.ndim != 2 or x.shape[1] != dim_in or x.shape[0] == 0:
        raise ValueError(f"expected a non-empty batch of {dim_in}-dimensional inputs")
    return x


def forward(p: MlpParams, inputs, mode: str = "train", cache: list | None = None) -> np.ndarray:
    """Network outputs, shape (batch, out_dim).

    In train mode batch statistics normalise each hidden layer; eval mode uses
    the running averages.  When ``cache`` is a list it receives what the
    backward pass needs.
    """
    h = _as_batch(inputs, p.dims[0])
    if mode == "train" and h.shape[0] < 2 and p.n_hidden:
        raise ValueError("train-mode batch normalization needs a batch of at least 2")
    for k in range(p.n_hidden):
        a = h @ p.weights[k] + p.biases[k]
        if mode == "train":
            mu = a.mean(axis=0)
            var = a.var(axis=0)
        else:
            mu, var = p.running_mean[k], p.running_var[k]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        z = (a - mu) * inv_std
        y = p.gamma[k] * z + p.shift[k]
        out = np.maximum(y, 0.0)
        if cache is not None:
            cache.append((h, z, inv_std, y, mu, var))
        h = out
    if cache is not None:
        cache.append((h,))
    return h @ p.weights[-1] + p.biases[-1]


def backward(p: MlpParams, cache: list, d_out: np.ndarray) -> Gradients:
    """Reverse pass through a train-mode forward, given dLoss/dOutputs."""
    (h_last,) = cache[-1]
    gw = [None] * len(p.weights)
    gb = [None] * len(p.biases)
    gg = [None] * p.n_hidden
    gs = [None] * p.n_hidden
    gw[-1] = h_last.T @ d_out
    gb[-1] = d_out.sum(axis=0)
    dh = d_out @ p.weights[-1].T
    for k in range(p.n_hidden - 1, -1, -1):
        h_in, z, inv_std, y, _, _ = cache[k]
        dy = dh * (y > 0)
        gg[k] = np.sum(dy * z, axis=0)
        gs[k] = dy.sum(axis=0)
        dz = dy * p.gamma[k]
        m = z.shape[0]
        da = inv_std / m * (m * dz - dz.sum(axis=0) - z * np.sum(dz * z, axis=0))
        gw[k] = h_in.T @ da
        gb[k] = da.sum(axis=0)
        dh = da @ p.weights[k].T
    return Gradients(gw, gb, gg, gs)


LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


def loss_gradient(p: MlpParams, inputs, loss: LossFn) -> tuple[float, Gradients, np.ndarray]:
    """Loss value, exact parameter gradients and outputs for a train-mode pass.

    ``loss`` maps the output batch to ``(value, dvalue/doutputs)``.
    """
    cache: list = []
    out = forward(p, inputs, "train", cache)
    value, d_out = loss(out)
    if not math.isfinite(value):
        raise TrainingDiverged(f"non-finite loss {value}")
    return value, backward(p, cache, np.asarray(d_out, dtype=float)), out


def _update_running(p: MlpParams, cache: list):
    for k in range(p.n_hidden):
        _, _, _, _, mu, var = cache[k]
        p.running_mean[k] *= 1 - BN_MOMENTUM
        p.running_mean[k] += BN_MOMENTUM * mu
        p.running_var[k] *= 1 - BN_MOMENTUM
        p.running_var[k] += BN_MOMENTUM * var


@dataclass
class TrainResult:
    params: MlpParams
    history: list[float]
    outputs: np.ndarray
    epochs: int
    extra: np.ndarray | None = None
    converged: bool = False


ExtraLossFn = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray, np.ndarray]]


def train(p: MlpParams, inputs, loss, cfg: TrainConfig, extra=None,
          callback: Callable[[int, float, MlpParams], None] | None = None) -> TrainResult:
    """Full-batch gradient descent on ``loss`` until ``cfg.tol`` or ``cfg.max_epochs``.

    With ``extra`` (an array of additional trainable scalars) the loss signature
    is ``loss(outputs, extra) -> (value, d_outputs, d_extra)``.  An infinite
    tolerance disables early stopping.  ``outputs`` in the result are the
    train-mode outputs at the returned parameters.
    """
    p = p.copy()
    x = _as_batch(inputs, p.dims[0])
    theta = None if extra is None else np.array(extra, dtype=float)
    history: list[float] = []
    check_tol = math.isfinite(cfg.tol)
    last_good = p.copy()
    for epoch in range(cfg.max_epochs + 1):
        cache: list = []
        out = forward(p, x, "train", cache)
        if theta is None:
            value, d_out = loss(out)
            d_theta = None
        else:
            value, d_out, d_theta = loss(out, theta)
        if not math.isfinite(value):
            raise TrainingDiverged(f"loss became non-finite at epoch {epoch}", last_good, history)
        if epoch == cfg.max_epochs or (check_tol and value <= cfg.tol):
            history.append(float(value))
            return TrainResult(p, history, out, epoch, theta, check_tol and value <= cfg.tol)
        history.append(float(value))
        if callback is not None:
            callback(epoch, value, p)
        last_good = p
        grads = backward(p, cache, np.asarray(d_out, dtype=float))
        p = p.copy()
        _update_running(p, cache)
        if cfg.lr:
            for arr, g in zip(p.trainable(), grads.arrays()):
                arr -= cfg.lr * g
            if theta is not None:
                theta = theta - cfg.lr * np.asarray(d_theta, dtype=float)
    raise AssertionError("unreachable")
