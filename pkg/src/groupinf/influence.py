"""Group influence estimators with a pairwise interaction correction.

The removal estimate of a group S combines a linear term, driven by the
target gradient and the aggregated per-example parameter shifts u_S,
with a quadratic interaction term (1/2N^2) u_S^T H_f u_S driven by the
target curvature. The addition estimate flips the linear term's sign
and keeps the quadratic one. The interaction term decomposes into
pairwise contributions kappa(a, b) = u_a^T H_f u_b, which factor in
closed form for logistic models; those factorizations and the spectral
and self/cross decompositions live here too.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .curvature import DampedCurvature, TargetCurvature
from .errors import ConfigError

MATERIALIZE_M_LIMIT = 2_000


def _hf_matrix(H_f) -> np.ndarray:
    if isinstance(H_f, TargetCurvature):
        return H_f.matrix
    return np.asarray(H_f, dtype=np.float64)


@dataclass(frozen=True)
class ShiftSet:
    """Per-example parameter shifts u_i = (H + lambda I)^-1 g_i.

    ``n_train`` is the training-set size used for 1/N normalization in
    every estimator, also when candidates come from outside the training
    set.
    """

    indices: tuple
    U: np.ndarray  # (n, p), row k is the shift of example indices[k]
    n_train: int
    provenance: str

    def __post_init__(self):
        if len(self.indices) != self.U.shape[0]:
            raise ConfigError("shift index list disagrees with shift matrix rows")
        object.__setattr__(self, "_row", {idx: k for k, idx in enumerate(self.indices)})

    def row_of(self, i: int) -> int:
        return self._row[i]

    def shift(self, i: int) -> np.ndarray:
        return self.U[self._row[i]]

    def rows(self, S: Sequence[int]) -> np.ndarray:
        return self.U[[self._row[i] for i in S]]

    def aggregate(self, S: Sequence[int]) -> np.ndarray:
        """u_S = sum of member shifts; zero vector for the empty group."""
        if len(S) == 0:
            return np.zeros(self.U.shape[1])
        return self.rows(S).sum(axis=0)


def compute_shifts(curvature: DampedCurvature, grads: np.ndarray, n_train: int,
                   indices: Optional[Sequence[int]] = None) -> ShiftSet:
    """Solve the damped curvature against each per-example gradient."""
    G = np.atleast_2d(np.asarray(grads, dtype=np.float64))
    U = curvature.solve(G.T).T
    if not np.all(np.isfinite(U)):
        raise ConfigError("curvature solve produced non-finite shifts")
    recon = U @ curvature.base.T + curvature.damping * U
    denom = max(float(np.abs(G).max(initial=0.0)), 1e-300)
    rel = float(np.abs(recon - G).max(initial=0.0)) / denom
    if rel > 1e-8:
        raise ConfigError(f"shift solve residual {rel:.3e} exceeds 1e-8")
    if indices is None:
        indices = range(G.shape[0])
    return ShiftSet(tuple(int(i) for i in indices), U, int(n_train),
                    curvature.provenance)


@dataclass(frozen=True)
class GroupEstimate:
    """First-order and interaction parts of a group's estimated effect."""

    indices: tuple
    first_order: float
    interaction: float
    direction: str  # "removal" | "addition"

    @property
    def total(self) -> float:
        return self.first_order + self.interaction


def first_order(target_grad: np.ndarray, shifts: ShiftSet, S: Sequence[int],
                direction: str = "removal") -> float:
    """Linear influence term; additive over group members by construction.

    Empty groups score 0.
    """
    if direction not in ("removal", "addition"):
        raise ConfigError(f"unknown direction {direction!r}")
    if len(S) == 0:
        return 0.0
    value = float(target_grad @ shifts.aggregate(S)) / shifts.n_train
    return value if direction == "removal" else -value


def interaction(shifts: ShiftSet, S: Sequence[int], H_f) -> float:
    """Quadratic interaction term (1/2N^2) u_S^T H_f u_S; 0 for empty groups."""
    if len(S) == 0:
        return 0.0
    u = shifts.aggregate(S)
    return 0.5 * float(u @ (_hf_matrix(H_f) @ u)) / shifts.n_train ** 2


def estimate_removal(target_grad: np.ndarray, shifts: ShiftSet,
                     S: Sequence[int], H_f) -> GroupEstimate:
    return GroupEstimate(tuple(int(i) for i in S),
                         first_order(target_grad, shifts, S, "removal"),
                         interaction(shifts, S, H_f), "removal")


def estimate_addition(target_grad: np.ndarray, shifts: ShiftSet,
                      S: Sequence[int], H_f) -> GroupEstimate:
    return GroupEstimate(tuple(int(i) for i in S),
                         first_order(target_grad, shifts, S, "addition"),
                         interaction(shifts, S, H_f), "addition")


def kappa(shifts: ShiftSet, a: int, b: int, H_f) -> float:
    """Pairwise interaction u_a^T H_f u_b; symmetric in (a, b)."""
    return float(shifts.shift(a) @ (_hf_matrix(H_f) @ shifts.shift(b)))


class MBilinear:
    """The bilinear form <x, y> under M = (H + lambda I)^-1 H_f (H + lambda I)^-1.

    Materialized as a dense matrix when the parameter count allows,
    otherwise evaluated through two solves per argument.
    """

    def __init__(self, curvature: DampedCurvature, H_f,
                 materialize_limit: int = MATERIALIZE_M_LIMIT):
        self._curv = curvature
        self._hf = _hf_matrix(H_f)
        self.matrix = None
        if curvature.dim <= materialize_limit:
            inv_hf = curvature.solve(self._hf)        # H^-1 H_f
            self.matrix = curvature.solve(inv_hf.T).T  # H^-1 H_f H^-1
            self.matrix = 0.5 * (self.matrix + self.matrix.T)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return float(self.pair(x[:, None], y[:, None])[0, 0])

    def pair(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """A^T M B for column blocks A (p, k) and B (p, m)."""
        if self.matrix is not None:
            return A.T @ self.matrix @ B
        return self._curv.solve(A).T @ (self._hf @ self._curv.solve(B))


def factorized_kappa_lr(sigma_a: float, y_a: float, sigma_b: float, y_b: float,
                        x_a: np.ndarray, x_b: np.ndarray,
                        M: Union[np.ndarray, MBilinear]) -> float:
    """Closed-form kappa for binary logistic regression.

    The residual product (sigma_a - y_a)(sigma_b - y_b) carries the
    class-agreement sign; the feature similarity is measured under M.
    """
    if isinstance(M, MBilinear):
        sim = M(np.asarray(x_a, dtype=np.float64), np.asarray(x_b, dtype=np.float64))
    else:
        sim = float(np.asarray(x_a) @ (np.asarray(M) @ np.asarray(x_b)))
    return (sigma_a - y_a) * (sigma_b - y_b) * sim


def multiclass_kappa_factorized(residual_a: np.ndarray, residual_b: np.ndarray,
                                jac_a: np.ndarray, jac_b: np.ndarray,
                                M: Union[np.ndarray, MBilinear]) -> float:
    """Deep/multiclass factorization r_a^T (J_a^T M J_b) r_b.

    Jacobians are (p, C) with one column per output; the binary case
    (C = 1, jac = x) reduces to the logistic closed form.
    """
    ja = np.asarray(jac_a, dtype=np.float64)
    jb = np.asarray(jac_b, dtype=np.float64)
    if ja.ndim == 1:
        ja = ja[:, None]
    if jb.ndim == 1:
        jb = jb[:, None]
    ra = np.atleast_1d(np.asarray(residual_a, dtype=np.float64))
    rb = np.atleast_1d(np.asarray(residual_b, dtype=np.float64))
    if ja.shape[1] != ra.shape[0] or jb.shape[1] != rb.shape[0]:
        raise ConfigError("residual length disagrees with Jacobian columns")
    if isinstance(M, MBilinear):
        core = M.pair(ja, jb)
    else:
        core = ja.T @ (np.asarray(M) @ jb)
    return float(ra @ core @ rb)


def residual_alignment(p_a: np.ndarray, y_a: int, p_b: np.ndarray, y_b: int) -> float:
    """r_a^T r_b expressed through probabilities and the label-match indicator."""
    pa = np.asarray(p_a, dtype=np.float64)
    pb = np.asarray(p_b, dtype=np.float64)
    return float(pa @ pb - pa[int(y_b)] - pb[int(y_a)] + (1.0 if y_a == y_b else 0.0))


def spectral_kappa(shifts: ShiftSet, a: int, b: int, H_f) -> list:
    """Per-eigendirection contributions mu_k (v_k.u_a)(v_k.u_b); sums to kappa."""
    Hf = _hf_matrix(H_f)
    vals, vecs = np.linalg.eigh(Hf)
    pa = vecs.T @ shifts.shift(a)
    pb = vecs.T @ shifts.shift(b)
    return [(float(mu), float(mu * ca * cb)) for mu, ca, cb in zip(vals, pa, pb)]


def self_cross_split(shifts: ShiftSet, S: Sequence[int], H_f):
    """(self, cross) split of u_S^T H_f u_S over the group's pair matrix."""
    if len(S) == 0:
        return 0.0, 0.0
    U = shifts.rows(S)
    K = U @ (_hf_matrix(H_f) @ U.T)
    self_sum = float(np.trace(K))
    cross_sum = float(K.sum() - np.trace(K))
    return self_sum, cross_sum


def class_pair_kappa_matrix(shifts: ShiftSet, labels: Sequence[int], H_f) -> np.ndarray:
    """C x C matrix of mean pairwise kappa between class pairs.

    Entry (i, j) averages kappa over pairs with one member in class i
    and one in class j; diagonal entries exclude self-pairs and are NaN
    for classes with fewer than two examples.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != len(shifts.indices):
        raise ConfigError("labels must cover every shifted example")
    n_classes = int(labels.max()) + 1
    W = _hf_matrix(H_f) @ shifts.U.T
    K = shifts.U @ W
    out = np.full((n_classes, n_classes), np.nan)
    members = [np.flatnonzero(labels == c) for c in range(n_classes)]
    for i in range(n_classes):
        for j in range(i, n_classes):
            rows, cols = members[i], members[j]
            if rows.size == 0 or cols.size == 0:
                continue
            block = K[np.ix_(rows, cols)]
            if i == j:
                if rows.size < 2:
                    continue
                value = (block.sum() - np.trace(block)) / (rows.size * (rows.size - 1))
            else:
                value = block.mean()
            out[i, j] = out[j, i] = float(value)
    return out


