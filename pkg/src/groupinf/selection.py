"""Greedy interaction-aware subset selection and its baselines.

Each greedy step scores every remaining candidate with
``-f_i + w.u_i / N^2 + q_i / (2 N^2)``, where ``w`` accumulates
``H_f u_S`` over the already-selected set. The score equals the change
in the addition estimate from appending the candidate, so selecting the
argmin greedily minimizes the estimated post-addition target. All
per-candidate quantities are precomputed once; the loop is O(P) score
evaluations per iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .curvature import DampedCurvature
from .errors import ConfigError, SizeLimitError
from .influence import ShiftSet, _hf_matrix, compute_shifts

ENTROPY_UNDEFINED = "class entropy is undefined for an empty selection"


@dataclass(frozen=True)
class CandidateCache:
    """Precomputed per-candidate quantities shared by all selection methods."""

    shifts: ShiftSet            # u_i per candidate
    W: np.ndarray               # w_i = H_f u_i, one row per candidate
    q: np.ndarray               # q_i = u_i^T w_i
    f: np.ndarray               # f_i = (1/N) grad_f . u_i

    @property
    def pool_size(self) -> int:
        return self.W.shape[0]

    @property
    def n_train(self) -> int:
        return self.shifts.n_train

    def row(self, i: int) -> int:
        return self.shifts.row_of(i)


@dataclass
class SelectionState:
    """Greedy bookkeeping: selection order, accumulator, and trace."""

    cache: CandidateCache
    budget: int
    selected: List[int] = field(default_factory=list)
    w: np.ndarray = None  # tracks H_f u_S
    cumulative: List[float] = field(default_factory=list)  # addition estimate per step
    marginals: List[float] = field(default_factory=list)
    score_evaluations: int = 0

    def __post_init__(self):
        if self.w is None:
            self.w = np.zeros(self.cache.W.shape[1])

    def accumulator_error(self) -> float:
        """Relative gap between w and a dense recomputation of H_f u_S."""
        dense = self.cache.W[[self.cache.row(i) for i in self.selected]].sum(axis=0) \
            if self.selected else np.zeros_like(self.w)
        scale = max(float(np.linalg.norm(dense)), 1e-300)
        return float(np.linalg.norm(self.w - dense)) / scale


def precompute(curvature: DampedCurvature, H_f, target_grad: np.ndarray,
               pool_grads: np.ndarray, n_train: int,
               indices: Optional[Sequence[int]] = None) -> CandidateCache:
    """Solve for every candidate's shift and cache w_i, q_i, f_i."""
    shifts = compute_shifts(curvature, pool_grads, n_train, indices)
    W = (_hf_matrix(H_f) @ shifts.U.T).T
    q = np.einsum("np,np->n", shifts.U, W)
    f = shifts.U @ np.asarray(target_grad, dtype=np.float64) / n_train
    return CandidateCache(shifts, W, q, f)


def marginal(candidate: int, state: SelectionState) -> float:
    """Change in the addition estimate from appending one candidate."""
    if candidate in state.selected:
        raise ConfigError(f"candidate {candidate} is already selected")
    cache = state.cache
    k = cache.row(candidate)
    n2 = cache.n_train ** 2
    return float(-cache.f[k] + (state.w @ cache.shifts.U[k]) / n2
                 + 0.5 * cache.q[k] / n2)


def _all_marginals(state: SelectionState) -> np.ndarray:
    cache = state.cache
    n2 = cache.n_train ** 2
    return -cache.f + (cache.shifts.U @ state.w) / n2 + 0.5 * cache.q / n2


def greedy_select(cache: CandidateCache, budget: int,
                  stop_at_positive_marginal: bool = False) -> SelectionState:
    """Run the greedy loop for exactly ``budget`` steps (argmin, ties by index).

    ``stop_at_positive_marginal`` ends the loop early once every
    remaining candidate would increase the estimated target; off by
    default to match the fixed-budget procedure.
    """
    if budget > cache.pool_size:
        raise SizeLimitError(f"budget {budget} exceeds pool of {cache.pool_size}")
    state = SelectionState(cache, budget)
    taken = np.zeros(cache.pool_size, dtype=bool)
    idx_arr = np.asarray(cache.shifts.indices, dtype=np.int64)
    running = 0.0
    for _step in range(budget):
        scores = _all_marginals(state)
        state.score_evaluations += int((~taken).sum())
        scores[taken] = np.inf
        best = float(scores.min())
        ties = np.flatnonzero(scores == best)
        k = int(ties[np.argmin(idx_arr[ties])])  # ties break to the lowest index
        if stop_at_positive_marginal and best > 0.0:
            break
        taken[k] = True
        running += best
        state.selected.append(int(idx_arr[k]))
        state.marginals.append(best)
        state.cumulative.append(running)
        state.w = state.w + cache.W[k]
    return state


def top_k_first_order(cache: CandidateCache, budget: int) -> List[int]:
    """Baseline: the K candidates with the most negative -f_i, ties by index."""
    if budget > cache.pool_size:
        raise SizeLimitError(f"budget {budget} exceeds pool of {cache.pool_size}")
    idx_arr = np.asarray(cache.shifts.indices, dtype=np.int64)
    order = np.lexsort((idx_arr, -cache.f))
    return [int(idx_arr[k]) for k in order[:budget]]


def class_entropy(selected: Sequence[int], labels: Sequence[int]) -> float:
    """Shannon entropy (nats) of the selected subset's class proportions."""
    if len(selected) == 0:
        raise ConfigError(ENTROPY_UNDEFINED)
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels[np.asarray(selected, dtype=np.int64)])
    p = counts[counts > 0] / len(selected)
    return float(-(p * np.log(p)).sum())
