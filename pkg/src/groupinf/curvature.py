"""Training-loss and target curvature: assembly, damping, factorization.

Curvature is kept dense at desk scale and inverted through a cached
Cholesky factor; the Gauss-Newton surrogate is available wherever the
exact Hessian is indefinite or expensive. Target curvature is assembled
the same way but never damped and never inverted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import Dataset
from .errors import NotPositiveDefiniteError, SizeLimitError
from .model import (Arch, ModelParams, TargetSpec, dataset_gauss_newton,
                    dataset_hessian, target_dataset)

DENSE_PARAM_LIMIT = 20_000


def _check_dense(p: int, limit: int):
    if p > limit:
        raise SizeLimitError(
            f"dense curvature needs {p} x {p} storage; limit is {limit} parameters")


def _symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


@dataclass
class DampedCurvature:
    """Positive-definite operator base + lambda*I with a cached factorization."""

    base: np.ndarray
    damping: float
    provenance: str  # "exact_hessian" | "gauss_newton"
    _factor: tuple = field(init=False, repr=False)

    def __post_init__(self):
        base = np.asarray(self.base, dtype=np.float64)
        if base.ndim != 2 or base.shape[0] != base.shape[1]:
            raise ValueError("curvature base must be square")
        asym = np.abs(base - base.T).max() if base.size else 0.0
        if asym > 1e-10:
            raise ValueError(f"curvature base asymmetric by {asym:.3e}")
        self.base = base
        damped = base + self.damping * np.eye(base.shape[0])
        try:
            self._factor = cho_factor(damped, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError(
                f"Cholesky failed: {self.provenance} + {self.damping:g}*I "
                "is not positive definite") from None

    @property
    def dim(self) -> int:
        return self.base.shape[0]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return self.base @ v + self.damping * v

    def solve(self, v: np.ndarray) -> np.ndarray:
        """(base + lambda I)^-1 v; accepts a vector or a matrix of columns."""
        return cho_solve(self._factor, np.asarray(v, dtype=np.float64),
                         check_finite=False)


@dataclass(frozen=True)
class TargetCurvature:
    """Symmetric target Hessian; may be indefinite, so it is never factored."""

    matrix: np.ndarray
    provenance: str

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=np.float64)
        asym = np.abs(M - M.T).max() if M.size else 0.0
        if asym > 1e-10:
            raise ValueError(f"target curvature asymmetric by {asym:.3e}")
        object.__setattr__(self, "matrix", M)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(v, dtype=np.float64)


def exact_hessian(params: ModelParams, dataset: Dataset, beta: float,
                  dense_limit: int = DENSE_PARAM_LIMIT) -> np.ndarray:
    """(1/N) sum of exact per-example Hessians plus beta*I."""
    p = params.arch.param_count
    _check_dense(p, dense_limit)
    H = dataset_hessian(params, dataset)
    return _symmetrize(H + beta * np.eye(p))


def gauss_newton(params: ModelParams, dataset: Dataset, beta: float,
                 dense_limit: int = DENSE_PARAM_LIMIT) -> np.ndarray:
    """(1/N) sum of J_i^T Lambda_i J_i plus beta*I; PSD before damping."""
    p = params.arch.param_count
    _check_dense(p, dense_limit)
    G = dataset_gauss_newton(params, dataset)
    return _symmetrize(G + beta * np.eye(p))


def damp_and_factor(matrix: np.ndarray, damping: float,
                    provenance: str = "exact_hessian") -> DampedCurvature:
    """Cache a Cholesky factorization of matrix + damping*I."""
    return DampedCurvature(np.asarray(matrix, dtype=np.float64), float(damping),
                           provenance)


def training_curvature(params: ModelParams, dataset: Dataset, beta: float,
                       mode: str, damping: float,
                       dense_limit: int = DENSE_PARAM_LIMIT) -> DampedCurvature:
    """Assemble, damp, and factor the training curvature in one step."""
    if mode == "exact_hessian":
        base = exact_hessian(params, dataset, beta, dense_limit)
    elif mode == "gauss_newton":
        base = gauss_newton(params, dataset, beta, dense_limit)
    else:
        raise ValueError(f"unknown curvature mode {mode!r}")
    return damp_and_factor(base, damping, provenance=mode)


def target_hessian(params: ModelParams, target: TargetSpec, mode: str,
                   dense_limit: int = DENSE_PARAM_LIMIT) -> TargetCurvature:
    """Hessian of the target's mean loss; exact or Gauss-Newton, never damped."""
    p = params.arch.param_count
    _check_dense(p, dense_limit)
    ds = target_dataset(params, target)
    if mode == "exact_hessian":
        M = dataset_hessian(params, ds)
    elif mode == "gauss_newton":
        M = dataset_gauss_newton(params, ds)
    else:
        raise ValueError(f"unknown curvature mode {mode!r}")
    return TargetCurvature(_symmetrize(M), mode)


def block_diagonal(matrix: np.ndarray, arch: Arch) -> np.ndarray:
    """Zero all cross-layer blocks, keeping per-layer diagonal blocks.

    Comparison mode for the target Hessian; the dense matrix is the
    default everywhere else.
    """
    out = np.zeros_like(matrix)
    for _name, offset, shape in arch.blocks():
        size = int(np.prod(shape))
        sl = slice(offset, offset + size)
        out[sl, sl] = matrix[sl, sl]
    return out


def dump_matrix(matrix: np.ndarray, path: str):
    """Row-major little-endian float64 dump with a two-u64 dimension header."""
    M = np.ascontiguousarray(matrix, dtype="<f8")
    header = struct.pack("<QQ", M.shape[0], M.shape[1])
    Path(path).write_bytes(header + M.tobytes())


def load_matrix(path: str) -> np.ndarray:
    raw = Path(path).read_bytes()
    rows, cols = struct.unpack("<QQ", raw[:16])
    return np.frombuffer(raw[16:], dtype="<f8").reshape(rows, cols).copy()
