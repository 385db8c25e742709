"""Deterministic training and differentiation of small prediction models.

Architectures: binary/multiclass logistic regression, linear regression,
and a two-hidden-layer ReLU MLP (softmax classification or scalar
regression head). Everything runs on flat float64 parameter vectors so
curvature code can treat models uniformly; per-architecture closed forms
live here and nowhere else.

Loss values are data losses only (cross-entropy or half squared error);
the l2 penalty ``beta/2 * ||theta||^2`` enters at the objective level so
that curvature matrices pick up an exact ``beta * I`` shift.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Dataset
from .errors import ConfigError, TrainingError
from .seeding import STREAM_TRAIN, rng

PARAMS_MAGIC = b"GINF"

_ARCH_CODES = {"lr_binary": 1, "lr_multiclass": 2, "linear": 3, "mlp": 4}
_ARCH_NAMES = {v: k for k, v in _ARCH_CODES.items()}


@dataclass(frozen=True)
class Arch:
    """Architecture descriptor; sizes fully determine the flat parameter layout."""

    kind: str
    dim: int
    n_outputs: int = 1
    hidden1: int = 0
    hidden2: int = 0

    def __post_init__(self):
        if self.kind not in _ARCH_CODES:
            raise ConfigError(f"unknown architecture kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigError("architecture dim must be positive")
        if self.kind == "lr_multiclass" and self.n_outputs < 2:
            raise ConfigError("lr_multiclass needs at least 2 classes")
        if self.kind == "mlp" and (self.hidden1 < 1 or self.hidden2 < 1):
            raise ConfigError("mlp hidden widths must be positive")

    @staticmethod
    def lr_binary(dim: int) -> "Arch":
        return Arch("lr_binary", dim, 1)

    @staticmethod
    def lr_multiclass(dim: int, n_classes: int) -> "Arch":
        return Arch("lr_multiclass", dim, n_classes)

    @staticmethod
    def linear(dim: int) -> "Arch":
        return Arch("linear", dim, 1)

    @staticmethod
    def mlp(dim: int, hidden1: int, hidden2: int, n_outputs: int) -> "Arch":
        return Arch("mlp", dim, n_outputs, hidden1, hidden2)

    @property
    def task(self) -> str:
        if self.kind == "lr_binary":
            return "binary"
        if self.kind == "lr_multiclass":
            return "multiclass"
        if self.kind == "linear":
            return "regression"
        return "multiclass" if self.n_outputs >= 2 else "regression"

    @property
    def is_convex(self) -> bool:
        return self.kind in ("lr_binary", "lr_multiclass", "linear")

    def blocks(self) -> list:
        """Ordered (name, offset, shape) table mapping blocks to theta slices."""
        if self.kind in ("lr_binary", "linear"):
            return [("w", 0, (self.dim,))]
        if self.kind == "lr_multiclass":
            return [("W", 0, (self.n_outputs, self.dim))]
        d, h1, h2, c = self.dim, self.hidden1, self.hidden2, self.n_outputs
        shapes = [("W1", (h1, d)), ("b1", (h1,)), ("W2", (h2, h1)),
                  ("b2", (h2,)), ("W3", (c, h2)), ("b3", (c,))]
        table, offset = [], 0
        for name, shape in shapes:
            table.append((name, offset, shape))
            offset += int(np.prod(shape))
        return table

    @property
    def param_count(self) -> int:
        name, offset, shape = self.blocks()[-1]
        return offset + int(np.prod(shape))


@dataclass(frozen=True)
class ModelParams:
    """Flat parameter vector plus its architecture."""

    theta: np.ndarray
    arch: Arch

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64).ravel()
        if theta.shape[0] != self.arch.param_count:
            raise ConfigError(
                f"theta has {theta.shape[0]} entries, {self.arch.kind} needs "
                f"{self.arch.param_count}")
        if not np.all(np.isfinite(theta)):
            raise ConfigError("theta contains non-finite values")
        object.__setattr__(self, "theta", theta)

    def block(self, name: str) -> np.ndarray:
        for bname, offset, shape in self.arch.blocks():
            if bname == name:
                return self.theta[offset:offset + int(np.prod(shape))].reshape(shape)
        raise KeyError(name)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings.

    ``epochs`` caps Newton iterations for the convex trainer and counts
    data passes for SGD. ``convergence_tol`` is the gradient-norm stop
    criterion for Newton.
    """

    optimizer: str = "newton_lr"
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 64
    weight_decay: float = 0.0
    momentum: float = 0.0
    seed: int = 0
    convergence_tol: float = 1e-10

    def __post_init__(self):
        if self.optimizer not in ("newton_lr", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if min(self.learning_rate, self.weight_decay, self.momentum,
               self.convergence_tol) < 0:
            raise ConfigError("rates, weight_decay, momentum, tol must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class TargetSpec:
    """Differentiable scalar of the parameters being attributed."""

    kind: str  # "mean_test_loss" | "single_example"
    dataset: Optional[Dataset] = None
    x: Optional[np.ndarray] = None
    y: object = None

    @staticmethod
    def mean_test_loss(dataset: Dataset) -> "TargetSpec":
        if dataset.n < 1:
            raise ConfigError("target dataset is empty")
        return TargetSpec("mean_test_loss", dataset=dataset)

    @staticmethod
    def single_example(x: np.ndarray, y) -> "TargetSpec":
        return TargetSpec("single_example", x=np.asarray(x, dtype=np.float64), y=y)

    def as_dataset(self, n_classes: Optional[int]) -> Dataset:
        if self.kind == "mean_test_loss":
            return self.dataset
        return Dataset(self.x[None, :], np.asarray([self.y]), n_classes, "target")


# ---------------------------------------------------------------------------
# forward passes


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=-1, keepdims=True)


def _one_hot(labels, n_classes):
    eye = np.eye(n_classes)
    return eye[np.asarray(labels, dtype=np.int64)]


class _MlpState:
    """Forward-pass cache shared by gradient, Jacobian, and HVP code."""

    def __init__(self, params: ModelParams, X: np.ndarray):
        self.W1 = params.block("W1")
        self.b1 = params.block("b1")
        self.W2 = params.block("W2")
        self.b2 = params.block("b2")
        self.W3 = params.block("W3")
        self.b3 = params.block("b3")
        self.X = X
        self.A1 = X @ self.W1.T + self.b1
        self.M1 = self.A1 > 0
        self.H1 = np.where(self.M1, self.A1, 0.0)
        self.A2 = self.H1 @ self.W2.T + self.b2
        self.M2 = self.A2 > 0
        self.H2 = np.where(self.M2, self.A2, 0.0)
        self.Z = self.H2 @ self.W3.T + self.b3


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def _check_dim(arch: Arch, X: np.ndarray):
    if X.shape[1] != arch.dim:
        raise ConfigError(f"feature dimension {X.shape[1]} != architecture dim {arch.dim}")


def logits_batch(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Raw model outputs, shape (n, n_outputs)."""
    X = _as_batch(X)
    _check_dim(params.arch, X)
    kind = params.arch.kind
    if kind in ("lr_binary", "linear"):
        return (X @ params.theta)[:, None]
    if kind == "lr_multiclass":
        return X @ params.block("W").T
    return _MlpState(params, X).Z


def probe_outputs(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Model outputs used for similarity probing.

    Class-probability rows for classifiers (binary gives the
    ``[p0, p1]`` pair), raw predictions for regression.
    """
    z = logits_batch(params, X)
    task = params.arch.task
    if task == "binary":
        p1 = _sigmoid(z[:, 0])
        return np.stack([1.0 - p1, p1], axis=1)
    if task == "multiclass":
        return _softmax(z)
    return z


def predict(params: ModelParams, x: np.ndarray):
    """Prediction for one example.

    Binary: probability of class 1. Multiclass: probability vector.
    Regression: raw prediction.
    """
    out = probe_outputs(params, np.asarray(x, dtype=np.float64))
    task = params.arch.task
    if task == "binary":
        return float(out[0, 1])
    if task == "multiclass":
        return out[0]
    return float(out[0, 0])


# ---------------------------------------------------------------------------
# losses and gradients


def example_losses(params: ModelParams, X: np.ndarray, Y) -> np.ndarray:
    """Per-example data losses (no l2 term)."""
    X = _as_batch(X)
    z = logits_batch(params, X)
    task = params.arch.task
    if task == "binary":
        y = np.asarray(Y, dtype=np.float64).ravel()
        zz = z[:, 0]
        return np.logaddexp(0.0, -zz) + (1.0 - y) * zz
    if task == "multiclass":
        y = np.asarray(Y, dtype=np.int64).ravel()
        if y.min(initial=0) < 0 or y.max(initial=0) >= params.arch.n_outputs:
            raise ConfigError("class label out of range")
        shifted = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1)) + z.max(axis=1)
        return lse - z[np.arange(z.shape[0]), y]
    t = np.asarray(Y, dtype=np.float64).ravel()
    return 0.5 * (z[:, 0] - t) ** 2


def loss(params: ModelParams, x: np.ndarray, y) -> float:
    """Data loss of a single example."""
    return float(example_losses(params, np.asarray(x, dtype=np.float64), [y])[0])


def residuals(params: ModelParams, X: np.ndarray, Y) -> np.ndarray:
    """Output-space residuals, shape (n, n_outputs).

    sigma - y for binary, softmax(z) - onehot(y) for multiclass,
    prediction - target for regression.
    """
    X = _as_batch(X)
    z = logits_batch(params, X)
    task = params.arch.task
    if task == "binary":
        y = np.asarray(Y, dtype=np.float64).ravel()
        return (_sigmoid(z[:, 0]) - y)[:, None]
    if task == "multiclass":
        return _softmax(z) - _one_hot(Y, params.arch.n_outputs)
    t = np.asarray(Y, dtype=np.float64).ravel()
    return (z[:, 0] - t)[:, None]


def _mlp_backward_per_example(state: _MlpState, dZ: np.ndarray) -> np.ndarray:
    n = state.X.shape[0]
    dH2 = dZ @ state.W3
    dA2 = dH2 * state.M2
    dH1 = dA2 @ state.W2
    dA1 = dH1 * state.M1
    gW1 = np.einsum("nh,nd->nhd", dA1, state.X).reshape(n, -1)
    gW2 = np.einsum("nh,nk->nhk", dA2, state.H1).reshape(n, -1)
    gW3 = np.einsum("nc,nh->nch", dZ, state.H2).reshape(n, -1)
    return np.concatenate([gW1, dA1, gW2, dA2, gW3, dZ], axis=1)


def example_grads(params: ModelParams, X: np.ndarray, Y) -> np.ndarray:
    """Exact per-example data-loss gradients, shape (n, p)."""
    X = _as_batch(X)
    R = residuals(params, X, Y)
    kind = params.arch.kind
    if kind in ("lr_binary", "linear"):
        return R[:, 0:1] * X
    if kind == "lr_multiclass":
        n = X.shape[0]
        return np.einsum("nc,nd->ncd", R, X).reshape(n, -1)
    return _mlp_backward_per_example(_MlpState(params, X), R)


def grad_example(params: ModelParams, x: np.ndarray, y) -> np.ndarray:
    """Exact gradient of one example's data loss."""
    return example_grads(params, np.asarray(x, dtype=np.float64), [y])[0]


def _weighted_grad(params: ModelParams, X: np.ndarray, Y, w: np.ndarray) -> np.ndarray:
    R = residuals(params, X, Y)
    kind = params.arch.kind
    if kind in ("lr_binary", "linear"):
        return X.T @ (w * R[:, 0])
    if kind == "lr_multiclass":
        return ((R * w[:, None]).T @ X).ravel()
    state = _MlpState(params, X)
    dZ = R * w[:, None]
    dH2 = dZ @ state.W3
    dA2 = dH2 * state.M2
    dH1 = dA2 @ state.W2
    dA1 = dH1 * state.M1
    return np.concatenate([
        (dA1.T @ X).ravel(), dA1.sum(axis=0),
        (dA2.T @ state.H1).ravel(), dA2.sum(axis=0),
        (dZ.T @ state.H2).ravel(), dZ.sum(axis=0),
    ])


def dataset_grad(params: ModelParams, dataset: Dataset,
                 weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Weighted sum of per-example gradients (uniform mean by default)."""
    w = np.full(dataset.n, 1.0 / dataset.n) if weights is None else np.asarray(weights)
    return _weighted_grad(params, dataset.features, dataset.labels, w)


def objective_value(params: ModelParams, dataset: Dataset, beta: float,
                    weights: Optional[np.ndarray] = None) -> float:
    """Weighted empirical risk plus the l2 penalty."""
    w = np.full(dataset.n, 1.0 / dataset.n) if weights is None else np.asarray(weights)
    data = float(w @ example_losses(params, dataset.features, dataset.labels))
    return data + 0.5 * beta * float(params.theta @ params.theta)


def objective_grad(params: ModelParams, dataset: Dataset, beta: float,
                   weights: Optional[np.ndarray] = None) -> np.ndarray:
    return dataset_grad(params, dataset, weights) + beta * params.theta


# ---------------------------------------------------------------------------
# curvature building blocks


def logit_jacobian(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Jacobian of the model outputs w.r.t. theta for one example, shape (p, n_outputs)."""
    return logit_jacobians(params, np.asarray(x, dtype=np.float64)[None, :])[0].T


def logit_jacobians(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Batch output Jacobians, shape (n, n_outputs, p)."""
    X = _as_batch(X)
    _check_dim(params.arch, X)
    arch = params.arch
    n, c = X.shape[0], arch.n_outputs
    kind = arch.kind
    if kind in ("lr_binary", "linear"):
        return X[:, None, :].copy()
    if kind == "lr_multiclass":
        J = np.zeros((n, c, arch.param_count))
        d = arch.dim
        for k in range(c):
            J[:, k, k * d:(k + 1) * d] = X
        return J
    state = _MlpState(params, X)
    eye = np.eye(c)
    DA2 = state.W3[None, :, :] * state.M2[:, None, :]          # (n, c, h2)
    DA1 = (DA2 @ state.W2) * state.M1[:, None, :]              # (n, c, h1)
    JW1 = np.einsum("nch,nd->nchd", DA1, X).reshape(n, c, -1)
    JW2 = np.einsum("nch,nk->nchk", DA2, state.H1).reshape(n, c, -1)
    JW3 = np.einsum("ck,nh->nckh", eye, state.H2).reshape(n, c, -1)
    Jb3 = np.broadcast_to(eye, (n, c, c))
    return np.concatenate([JW1, DA1, JW2, DA2, JW3, Jb3], axis=2)


def output_curvatures(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Hessian of the loss w.r.t. the model outputs, shape (n, c, c).

    sigma(1-sigma) for binary, diag(p) - p p^T for softmax, identity for
    Gaussian regression.
    """
    X = _as_batch(X)
    z = logits_batch(params, X)
    task = params.arch.task
    n, c = z.shape
    if task == "binary":
        s = _sigmoid(z[:, 0])
        return (s * (1.0 - s))[:, None, None]
    if task == "multiclass":
        P = _softmax(z)
        lam = -np.einsum("ni,nj->nij", P, P)
        idx = np.arange(c)
        lam[:, idx, idx] += P
        return lam
    return np.broadcast_to(np.eye(c), (n, c, c)).copy()


def dataset_hessian(params: ModelParams, dataset: Dataset,
                    weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Exact weighted Hessian of the data loss (no l2 shift), dense (p, p)."""
    X, Y = dataset.features, dataset.labels
    w = np.full(dataset.n, 1.0 / dataset.n) if weights is None else np.asarray(weights)
    arch = params.arch
    if arch.kind in ("lr_binary", "linear"):
        lam = output_curvatures(params, X)[:, 0, 0]
        H = X.T @ (X * (w * lam)[:, None])
    elif arch.kind == "lr_multiclass":
        lam = output_curvatures(params, X)
        c, d, p = arch.n_outputs, arch.dim, arch.param_count
        H = np.zeros((p, p))
        for a in range(c):
            for b in range(a, c):
                block = X.T @ (X * (w * lam[:, a, b])[:, None])
                H[a * d:(a + 1) * d, b * d:(b + 1) * d] = block
                if b != a:
                    H[b * d:(b + 1) * d, a * d:(a + 1) * d] = block.T
    else:
        p = arch.param_count
        state = _MlpState(params, X)
        R = residuals(params, X, Y)
        H = np.empty((p, p))
        eye = np.eye(p)
        for j in range(p):
            H[:, j] = _mlp_hvp(params, state, R, eye[j], w)
    return 0.5 * (H + H.T)


def dataset_gauss_newton(params: ModelParams, dataset: Dataset,
                         weights: Optional[np.ndarray] = None,
                         chunk: int = 256) -> np.ndarray:
    """Weighted Gauss-Newton matrix sum_i w_i J_i^T Lambda_i J_i, dense (p, p)."""
    X = dataset.features
    w = np.full(dataset.n, 1.0 / dataset.n) if weights is None else np.asarray(weights)
    arch = params.arch
    if arch.is_convex:
        # GN coincides with the exact Hessian for models linear in theta.
        return dataset_hessian(params, dataset, weights)
    p = arch.param_count
    G = np.zeros((p, p))
    for start in range(0, dataset.n, chunk):
        sl = slice(start, min(start + chunk, dataset.n))
        J = logit_jacobians(params, X[sl])              # (m, c, p)
        lam = output_curvatures(params, X[sl])          # (m, c, c)
        B = _psd_factor(lam)                            # Lambda = B B^T
        T = np.einsum("ncp,nck->nkp", J, B * np.sqrt(w[sl])[:, None, None])
        T = T.reshape(-1, p)
        G += T.T @ T
    return 0.5 * (G + G.T)


def _psd_factor(lam: np.ndarray) -> np.ndarray:
    """Symmetric factor B with Lambda = B B^T for each output curvature."""
    n, c, _ = lam.shape
    if c == 1:
        return np.sqrt(np.maximum(lam, 0.0))
    # softmax curvature diag(p) - p p^T factors through its eigensystem
    vals, vecs = np.linalg.eigh(lam)
    vals = np.maximum(vals, 0.0)
    return vecs * np.sqrt(vals)[:, None, :]


def _mlp_hvp(params: ModelParams, state: _MlpState, R: np.ndarray,
             v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Exact data-loss Hessian-vector product for the MLP (a.e. in theta).

    Forward-over-reverse through the cached forward/backward passes; the
    ReLU masks are locally constant so their tangent is zero.
    """
    arch = params.arch
    blocks = arch.blocks()
    pieces = {}
    for name, offset, shape in blocks:
        pieces[name] = v[offset:offset + int(np.prod(shape))].reshape(shape)
    V1, c1, V2, c2, V3, c3 = (pieces[k] for k in ("W1", "b1", "W2", "b2", "W3", "b3"))
    X, H1, H2 = state.X, state.H1, state.H2
    M1, M2 = state.M1, state.M2

    tA1 = X @ V1.T + c1
    tH1 = tA1 * M1
    tA2 = tH1 @ state.W2.T + H1 @ V2.T + c2
    tH2 = tA2 * M2
    tZ = tH2 @ state.W3.T + H2 @ V3.T + c3

    if arch.task == "multiclass":
        P = _softmax(state.Z)
        tR = P * tZ - P * np.sum(P * tZ, axis=1, keepdims=True)
    else:
        tR = tZ

    dZ = R * w[:, None]
    tdZ = tR * w[:, None]
    dH2 = dZ @ state.W3
    tdH2 = tdZ @ state.W3 + dZ @ V3
    dA2 = dH2 * M2
    tdA2 = tdH2 * M2
    dH1 = dA2 @ state.W2
    tdH1 = tdA2 @ state.W2 + dA2 @ V2
    tdA1 = tdH1 * M1

    gW3 = tdZ.T @ H2 + dZ.T @ tH2
    gb3 = tdZ.sum(axis=0)
    gW2 = tdA2.T @ H1 + dA2.T @ tH1
    gb2 = tdA2.sum(axis=0)
    gW1 = tdA1.T @ X
    gb1 = tdA1.sum(axis=0)
    return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2, gW3.ravel(), gb3])


def hessian_vector_product(params: ModelParams, dataset: Dataset, v: np.ndarray,
                           weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Exact (data-loss) Hessian-vector product for any architecture."""
    w = np.full(dataset.n, 1.0 / dataset.n) if weights is None else np.asarray(weights)
    if params.arch.kind == "mlp":
        X = dataset.features
        state = _MlpState(params, X)
        R = residuals(params, X, dataset.labels)
        return _mlp_hvp(params, state, R, np.asarray(v, dtype=np.float64), w)
    return dataset_hessian(params, dataset, weights) @ np.asarray(v, dtype=np.float64)


# ---------------------------------------------------------------------------
# targets


def target_dataset(params: ModelParams, target: TargetSpec) -> Dataset:
    n_classes = None
    if params.arch.task == "binary":
        n_classes = 2
    elif params.arch.task == "multiclass":
        n_classes = params.arch.n_outputs
    ds = target.as_dataset(n_classes)
    if ds is None or ds.n < 1:
        raise ConfigError("target references an empty dataset")
    return ds


def target_value(params: ModelParams, target: TargetSpec) -> float:
    """Mean unregularized loss over the target's examples."""
    ds = target_dataset(params, target)
    return float(example_losses(params, ds.features, ds.labels).mean())


def target_grad(params: ModelParams, target: TargetSpec) -> np.ndarray:
    """Exact gradient of target_value."""
    ds = target_dataset(params, target)
    return dataset_grad(params, ds)


# ---------------------------------------------------------------------------
# training


def _init_theta(arch: Arch, seed: int) -> np.ndarray:
    if arch.is_convex:
        return np.zeros(arch.param_count)
    gen = rng(seed, STREAM_TRAIN)
    theta = np.zeros(arch.param_count)
    for name, offset, shape in arch.blocks():
        if name.startswith("W"):
            fan_in = shape[1]
            scale = np.sqrt(2.0 / fan_in) if name != "W3" else np.sqrt(1.0 / fan_in)
            theta[offset:offset + int(np.prod(shape))] = (
                scale * gen.standard_normal(int(np.prod(shape))))
    return theta


def _check_compat(arch: Arch, dataset: Dataset):
    if dataset.dim != arch.dim:
        raise ConfigError(f"dataset dim {dataset.dim} != architecture dim {arch.dim}")
    task = arch.task
    if task == "binary":
        if dataset.n_classes != 2:
            raise ConfigError("lr_binary requires a 2-class dataset")
    elif task == "multiclass":
        if dataset.n_classes != arch.n_outputs:
            raise ConfigError("architecture classes disagree with dataset classes")
    else:
        if dataset.is_classification:
            raise ConfigError("regression architecture on a classification dataset")


def _newton_minimize(arch: Arch, dataset: Dataset, beta: float,
                     weights: Optional[np.ndarray], tol: float,
                     max_iter: int) -> ModelParams:
    """Damped Newton on the (weighted) convex objective from theta = 0.

    A full step is accepted whenever it shrinks the gradient norm (the
    quadratic convergence regime); otherwise a backtracking line search
    on the objective guards the global phase.
    """
    params = ModelParams(np.zeros(arch.param_count), arch)
    w = np.full(dataset.n, 1.0 / dataset.n) if weights is None else np.asarray(weights)

    def grad_at(p):
        return dataset_grad(p, dataset, w) + beta * p.theta

    value = objective_value(params, dataset, beta, w)
    g = grad_at(params)
    for _ in range(max_iter):
        gnorm = np.linalg.norm(g)
        if gnorm <= tol:
            return params
        H = dataset_hessian(params, dataset, w) + beta * np.eye(arch.param_count)
        step = None
        ridge = 0.0
        for _attempt in range(4):
            try:
                cf = np.linalg.cholesky(H + ridge * np.eye(arch.param_count))
                step = np.linalg.solve(cf.T, np.linalg.solve(cf, -g))
                break
            except np.linalg.LinAlgError:
                ridge = 1e-10 if ridge == 0.0 else ridge * 100.0
        if step is None:
            raise TrainingError("Newton step failed: objective Hessian is not PD")
        trial = ModelParams(params.theta + step, arch)
        trial_g = grad_at(trial)
        if np.linalg.norm(trial_g) < gnorm:
            params, g = trial, trial_g
            value = objective_value(params, dataset, beta, w)
        else:
            t, accepted = 1.0, False
            for _bt in range(60):
                trial = ModelParams(params.theta + t * step, arch)
                trial_value = objective_value(trial, dataset, beta, w)
                if trial_value <= value + 1e-4 * t * float(g @ step):
                    params, value = trial, trial_value
                    g = grad_at(params)
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                raise TrainingError("Newton line search failed to make progress")
        if not np.isfinite(value):
            raise TrainingError("training diverged to a non-finite objective")
    if np.linalg.norm(g) <= tol:
        return params
    raise TrainingError(
        f"Newton did not reach gradient norm {tol:g} in {max_iter} iterations "
        f"(achieved {np.linalg.norm(g):.3e})")


def _sgd_minimize(arch: Arch, dataset: Dataset, config: TrainConfig) -> ModelParams:
    theta = _init_theta(arch, config.seed)
    gen = rng(config.seed, STREAM_TRAIN, 1)
    velocity = np.zeros_like(theta)
    X, Y = dataset.features, dataset.labels
    n = dataset.n
    for epoch in range(config.epochs):
        perm = gen.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            params = ModelParams(theta, arch)
            batch_w = np.full(idx.size, 1.0 / idx.size)
            g = _weighted_grad(params, X[idx], Y[idx], batch_w)
            g = g + config.weight_decay * theta
            velocity = config.momentum * velocity + g
            theta = theta - config.learning_rate * velocity
            if not np.all(np.isfinite(theta)):
                raise TrainingError(f"SGD diverged at epoch {epoch}")
    return ModelParams(theta, arch)


def train(dataset: Dataset, arch: Arch, config: TrainConfig) -> ModelParams:
    """Deterministic training; bit-identical output for identical inputs."""
    _check_compat(arch, dataset)
    if config.optimizer == "newton_lr":
        if not arch.is_convex:
            raise ConfigError("newton_lr only supports the convex architectures")
        return _newton_minimize(arch, dataset, config.weight_decay, None,
                                config.convergence_tol, config.epochs)
    return _sgd_minimize(arch, dataset, config)


def train_weighted(dataset: Dataset, arch: Arch, beta: float,
                   weights: np.ndarray, tol: float = 1e-10,
                   max_iter: int = 200) -> ModelParams:
    """Newton minimizer of sum_i w_i loss_i + beta/2 ||theta||^2 (convex archs)."""
    _check_compat(arch, dataset)
    if not arch.is_convex:
        raise ConfigError("weighted Newton training requires a convex architecture")
    return _newton_minimize(arch, dataset, beta, weights, tol, max_iter)


def accuracy(params: ModelParams, dataset: Dataset) -> float:
    """Classification accuracy (argmax rule)."""
    if not dataset.is_classification:
        raise ConfigError("accuracy is only defined for classification")
    out = probe_outputs(params, dataset.features)
    return float((out.argmax(axis=1) == dataset.labels).mean())


def mean_loss(params: ModelParams, dataset: Dataset) -> float:
    return float(example_losses(params, dataset.features, dataset.labels).mean())


# ---------------------------------------------------------------------------
# serialization


def save_params(params: ModelParams, path: str, sidecar: Optional[dict] = None):
    """Binary dump: magic, arch descriptor, little-endian float64 theta.

    Writes ``<path>.json`` with the provided sidecar dict (config echo,
    final metrics) when given.
    """
    arch = params.arch
    header = PARAMS_MAGIC + struct.pack(
        "<BBIIIIQ", 1, _ARCH_CODES[arch.kind], arch.dim, arch.n_outputs,
        arch.hidden1, arch.hidden2, arch.param_count)
    payload = params.theta.astype("<f8").tobytes()
    Path(path).write_bytes(header + payload)
    if sidecar is not None:
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_params(path: str) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:4] != PARAMS_MAGIC:
        raise ConfigError(f"{path}: not a model parameter file")
    version, code, dim, n_out, h1, h2, p = struct.unpack("<BBIIIIQ", raw[4:4 + 26])
    if version != 1:
        raise ConfigError(f"{path}: unsupported model file version {version}")
    kind = _ARCH_NAMES.get(code)
    if kind is None:
        raise ConfigError(f"{path}: unknown architecture code {code}")
    arch = Arch(kind, dim, n_out, h1, h2)
    theta = np.frombuffer(raw[4 + 26:], dtype="<f8")
    if theta.shape[0] != p or p != arch.param_count:
        raise ConfigError(f"{path}: parameter payload truncated")
    return ModelParams(theta.copy(), arch)
