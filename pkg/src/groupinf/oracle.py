"""Ground-truth retraining oracles and the benchmark runners.

Everything here answers "what actually happens to the target when the
training data changes", by retraining with the same configuration and
seed so that differences reflect the data change only. The two runners
reproduce the attribution protocol (estimate vs. leave-group-out
retraining, compared by Spearman rank correlation) and the selection
protocol (select, retrain from scratch, measure test loss and class
entropy).
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import influence, selection as selection_mod
from .config import RunConfig, resolve_curvature_defaults
from .curvature import block_diagonal, target_hessian, training_curvature
from .data import (Dataset, GroupSpec, build_random_groups, build_similar_groups,
                   load_idx_dataset, load_regression_csv, make_synthetic_blobs,
                   split, standardize)
from .errors import (ConfigError, DegenerateInputError, GroupInfError,
                     SizeLimitError, StageError)
from .model import (Arch, ModelParams, TargetSpec, TrainConfig, dataset_hessian,
                    example_grads, mean_loss, probe_outputs, target_grad,
                    target_value, train, train_weighted)
from .seeding import STREAM_POOL, STREAM_RANDOM_SELECT, STREAM_RETRAIN, rng


@contextmanager
def _stage(name: str):
    try:
        yield
    except ConfigError:
        raise
    except GroupInfError as exc:
        raise StageError(name, str(exc)) from exc
    except Exception as exc:  # keep the stage visible in unexpected failures
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc


def _run_parallel(tasks: Sequence[Callable[[], object]], threads: int) -> list:
    """Run independent closures, preserving task order in the results."""
    if threads <= 1 or len(tasks) <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(task) for task in tasks]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# rank correlation


def _average_ranks(xs: np.ndarray) -> np.ndarray:
    order = np.argsort(xs, kind="stable")
    ranks = np.empty(xs.shape[0])
    ranks[order] = np.arange(1, xs.shape[0] + 1, dtype=np.float64)
    sorted_x = xs[order]
    i = 0
    while i < xs.shape[0]:
        j = i
        while j + 1 < xs.shape[0] and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks on ties.

    Raises DegenerateInputError on constant input, where the statistic
    is undefined, instead of silently returning 0.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.shape[0] < 2:
        raise ConfigError("spearman needs two equal-length vectors with >= 2 entries")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateInputError("spearman is undefined for constant input")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    return float((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)))


# ---------------------------------------------------------------------------
# retraining oracles


def ground_truth_removal(dataset: Dataset, S: Sequence[int], arch: Arch,
                         config: TrainConfig, target: TargetSpec,
                         base_value: Optional[float] = None) -> float:
    """Exact leave-group-out effect by retraining on the remaining data."""
    S = list(S)
    if len(S) >= dataset.n:
        raise ConfigError("cannot remove the entire training set")
    if base_value is None:
        base_value = target_value(train(dataset, arch, config), target)
    retrained = train(dataset.without(S) if S else dataset, arch, config)
    return target_value(retrained, target) - base_value


def ground_truth_addition(dataset: Dataset, extra: Optional[Dataset], arch: Arch,
                          config: TrainConfig, target: TargetSpec,
                          base_value: Optional[float] = None) -> float:
    """Exact inclusion effect: retrain on the union with uniform weights.

    ``extra=None`` adds nothing and returns 0 (up to retraining
    determinism).
    """
    if base_value is None:
        base_value = target_value(train(dataset, arch, config), target)
    if extra is None:
        augmented = dataset
    else:
        if extra.dim != dataset.dim or extra.n_classes != dataset.n_classes:
            raise ConfigError("added examples disagree with the dataset schema")
        augmented = Dataset(np.vstack([dataset.features, extra.features]),
                            np.concatenate([dataset.labels, extra.labels]),
                            dataset.n_classes, f"{dataset.name}+{extra.n}")
    retrained = train(augmented, arch, config)
    return target_value(retrained, target) - base_value


def reweighted_params(dataset: Dataset, S: Sequence[int], eps: float, arch: Arch,
                      beta: float, tol: float = 1e-10, max_iter: int = 200) -> ModelParams:
    """Minimizer of the data loss with weight 1/N + eps on members of S.

    The l2 penalty stays fixed at beta/2 ||theta||^2, matching the
    perturbation that the influence linearization differentiates.
    """
    weights = np.full(dataset.n, 1.0 / dataset.n)
    weights[np.asarray(list(S), dtype=np.int64)] += eps
    return train_weighted(dataset, arch, beta, weights, tol=tol, max_iter=max_iter)


@dataclass(frozen=True)
class PathPoint:
    eps: float
    distance: float  # || theta(eps) - (theta_hat + eps * slope) ||
    theta: np.ndarray


def reweighting_path_check(dataset: Dataset, S: Sequence[int], arch: Arch,
                           beta: float, eps_grid: Sequence[float],
                           tol: float = 1e-10) -> List[PathPoint]:
    """Compare exact reweighted minimizers against the influence linearization.

    The slope is -H^-1 sum_S g_i with H the regularized objective Hessian
    at the full-data minimizer; distances must shrink superlinearly in eps.
    """
    base = train_weighted(dataset, arch, beta, np.full(dataset.n, 1.0 / dataset.n),
                          tol=tol)
    H = dataset_hessian(base, dataset) + beta * np.eye(arch.param_count)
    g_sum = example_grads(base, dataset.features[list(S)],
                          dataset.labels[list(S)]).sum(axis=0)
    slope = np.linalg.solve(H, -g_sum)
    points = []
    for eps in eps_grid:
        theta_eps = reweighted_params(dataset, S, float(eps), arch, beta, tol=tol)
        linearized = base.theta + float(eps) * slope
        points.append(PathPoint(float(eps),
                                float(np.linalg.norm(theta_eps.theta - linearized)),
                                theta_eps.theta))
    return points


# ---------------------------------------------------------------------------
# pipeline assembly shared by the runners


def _load_source(cfg: RunConfig) -> Dataset:
    ds_cfg = cfg.dataset
    if ds_cfg.source == "synthetic_blobs":
        return make_synthetic_blobs(ds_cfg.blobs)
    if ds_cfg.source == "idx":
        return load_idx_dataset(ds_cfg.images_path, ds_cfg.labels_path)
    return load_regression_csv(ds_cfg.csv_path, ds_cfg.target_column)


def prepare_data(cfg: RunConfig):
    """Load, split, and optionally standardize the configured dataset."""
    full = _load_source(cfg)
    train_ds, test_ds = split(full, cfg.dataset.test_fraction, cfg.seed)
    if cfg.dataset.standardize:
        train_ds, test_ds, _stats = standardize(train_ds, test_ds)
    return train_ds, test_ds


def resolve_arch(cfg: RunConfig, dataset: Dataset) -> Arch:
    kind = cfg.arch.kind
    if kind == "lr_binary":
        return Arch.lr_binary(dataset.dim)
    if kind == "lr_multiclass":
        if not dataset.is_classification:
            raise ConfigError("arch.kind: lr_multiclass needs a classification dataset")
        return Arch.lr_multiclass(dataset.dim, dataset.n_classes)
    if kind == "linear":
        return Arch.linear(dataset.dim)
    n_out = dataset.n_classes if dataset.is_classification else 1
    return Arch.mlp(dataset.dim, cfg.arch.hidden1, cfg.arch.hidden2, n_out)


def make_target(cfg: RunConfig, train_ds: Dataset, test_ds: Dataset) -> TargetSpec:
    if cfg.target.kind == "mean_test_loss":
        return TargetSpec.mean_test_loss(test_ds)
    source = test_ds if cfg.target.split == "test" else train_ds
    if not 0 <= cfg.target.index < source.n:
        raise ConfigError(f"target.index: {cfg.target.index} out of range for "
                          f"{cfg.target.split} split of size {source.n}")
    return TargetSpec.single_example(source.features[cfg.target.index],
                                     source.labels[cfg.target.index])


def _estimator_inputs(cfg: RunConfig, params, train_ds: Dataset, target: TargetSpec):
    """Training curvature, target curvature, and target gradient per config."""
    curv_cfg = resolve_curvature_defaults(cfg.curvature, cfg.arch.kind,
                                          cfg.train.weight_decay)
    curv = training_curvature(params, train_ds, cfg.train.weight_decay,
                              curv_cfg.mode, curv_cfg.damping, curv_cfg.dense_limit)
    H_f = target_hessian(params, target, curv_cfg.target_mode, curv_cfg.dense_limit)
    Hf_matrix = H_f.matrix
    if curv_cfg.target_block_diagonal:
        Hf_matrix = block_diagonal(Hf_matrix, params.arch)
    return curv, Hf_matrix, target_grad(params, target)


# ---------------------------------------------------------------------------
# attribution benchmark


@dataclass(frozen=True)
class GroupRecord:
    group_id: int
    anchor: int
    size: int
    first_order: float
    interaction: float
    total: float
    truth: float


@dataclass
class BenchmarkReport:
    records: List[GroupRecord]
    rho_first_order: float
    rho_interaction_aware: float
    n_train: int
    config_echo: dict
    wall_clock_s: float

    def to_dict(self) -> dict:
        return {
            "kind": "attribution_benchmark",
            "n_train": self.n_train,
            "n_groups": len(self.records),
            "rho_first_order": self.rho_first_order,
            "rho_interaction_aware": self.rho_interaction_aware,
            "groups": [{
                "group_id": r.group_id, "anchor": r.anchor, "size": r.size,
                "first_order": r.first_order, "interaction": r.interaction,
                "total": r.total, "truth": r.truth,
            } for r in self.records],
            "config": self.config_echo,
            "wall_clock_s": self.wall_clock_s,
        }


def build_benchmark_groups(cfg: RunConfig, params, train_ds: Dataset) -> List[GroupSpec]:
    if cfg.groups.construction == "similar_softmax":
        probes = probe_outputs(params, train_ds.features)
        return build_similar_groups(probes, cfg.groups.size, cfg.groups.count, cfg.seed)
    return build_random_groups(train_ds.n, cfg.groups.size, cfg.groups.count, cfg.seed)


def run_attribution_benchmark(cfg: RunConfig, threads: int = 1) -> BenchmarkReport:
    """Train, estimate per-group effects, retrain for ground truth, correlate."""
    started = time.perf_counter()
    with _stage("data"):
        train_ds, test_ds = prepare_data(cfg)
    with _stage("train"):
        arch = resolve_arch(cfg, train_ds)
        params = train(train_ds, arch, cfg.train)
    with _stage("groups"):
        groups = build_benchmark_groups(cfg, params, train_ds)
    with _stage("curvature"):
        target = make_target(cfg, train_ds, test_ds)
        curv, Hf, tgrad = _estimator_inputs(cfg, params, train_ds, target)
    with _stage("estimates"):
        member_union = sorted({i for g in groups for i in g.indices})
        grads = example_grads(params, train_ds.features[member_union],
                              train_ds.labels[member_union])
        shifts = influence.compute_shifts(curv, grads, train_ds.n, member_union)
        estimates = [influence.estimate_removal(tgrad, shifts, g.indices, Hf)
                     for g in groups]
    with _stage("ground_truth"):
        base_value = target_value(params, target)
        tasks = [
            (lambda g=g: ground_truth_removal(train_ds, g.indices, arch, cfg.train,
                                              target, base_value))
            for g in groups
        ]
        truths = _run_parallel(tasks, threads)
    with _stage("report"):
        records = [GroupRecord(i, g.anchor, g.size, est.first_order, est.interaction,
                               est.total, truth)
                   for i, (g, est, truth) in enumerate(zip(groups, estimates, truths))]
        rho_f = spearman([r.first_order for r in records], [r.truth for r in records])
        rho_fi = spearman([r.total for r in records], [r.truth for r in records])
    return BenchmarkReport(records, rho_f, rho_fi, train_ds.n, cfg.raw,
                           time.perf_counter() - started)


# ---------------------------------------------------------------------------
# selection benchmark


@dataclass(frozen=True)
class SelectionRecord:
    method: str
    budget: int
    loss_mean: float
    loss_std: float
    entropy_mean: float
    entropy_std: float


@dataclass(frozen=True)
class TraceRow:
    step: int
    index: int
    marginal: float
    cumulative_estimate: float
    entropy: float


@dataclass
class SelectionReport:
    records: List[SelectionRecord]
    traces: Dict[str, List[TraceRow]]
    pool_size: int
    n_seeds: int
    config_echo: dict
    wall_clock_s: float

    def to_dict(self) -> dict:
        return {
            "kind": "selection_benchmark",
            "pool_size": self.pool_size,
            "n_seeds": self.n_seeds,
            "records": [{
                "method": r.method, "budget": r.budget,
                "loss_mean": r.loss_mean, "loss_std": r.loss_std,
                "entropy_mean": r.entropy_mean, "entropy_std": r.entropy_std,
            } for r in self.records],
            "config": self.config_echo,
            "wall_clock_s": self.wall_clock_s,
        }


def _order_trace(cache, order: Sequence[int], labels: np.ndarray) -> List[TraceRow]:
    """Per-step marginals, cumulative addition estimate, and running entropy."""
    n2 = cache.n_train ** 2
    w = np.zeros(cache.W.shape[1])
    counts = np.zeros(int(labels.max()) + 1)
    running = 0.0
    rows = []
    for step, idx in enumerate(order, start=1):
        k = cache.row(idx)
        m = float(-cache.f[k] + (w @ cache.shifts.U[k]) / n2 + 0.5 * cache.q[k] / n2)
        running += m
        w += cache.W[k]
        counts[labels[idx]] += 1
        p = counts[counts > 0] / step
        rows.append(TraceRow(step, int(idx), m, running, float(-(p * np.log(p)).sum())))
    return rows


def _derive_train_seed(master_seed: int, seed_index: int) -> int:
    state = np.random.SeedSequence([master_seed, STREAM_RETRAIN, seed_index])
    return int(state.generate_state(1)[0])


def run_selection_benchmark(cfg: RunConfig, threads: int = 1) -> SelectionReport:
    """Select under each method and budget, retrain from scratch, evaluate."""
    started = time.perf_counter()
    with _stage("data"):
        train_ds, test_ds = prepare_data(cfg)
        if not train_ds.is_classification:
            raise ConfigError("selection benchmark requires a classification dataset")
        pool_size = cfg.selection.pool_size
        if pool_size > train_ds.n:
            raise SizeLimitError(f"selection.pool_size {pool_size} exceeds the "
                                 f"train split of {train_ds.n}")
        pool_idx = np.sort(rng(cfg.seed, STREAM_POOL).choice(
            train_ds.n, size=pool_size, replace=False))
        pool_ds = train_ds.subset(pool_idx, "pool")
    with _stage("train"):
        arch = resolve_arch(cfg, pool_ds)
        params = train(pool_ds, arch, cfg.train)
    with _stage("curvature"):
        target = make_target(cfg, pool_ds, test_ds)
        curv, Hf, tgrad = _estimator_inputs(cfg, params, pool_ds, target)
    with _stage("precompute"):
        pool_grads = example_grads(params, pool_ds.features, pool_ds.labels)
        cache = selection_mod.precompute(curv, Hf, tgrad, pool_grads, pool_ds.n)
    with _stage("select"):
        max_budget = max(cfg.selection.budgets)
        orders: Dict[tuple, List[int]] = {}
        for method in cfg.selection.methods:
            if method == "greedy_interaction":
                state = selection_mod.greedy_select(cache, max_budget)
                for s in range(cfg.selection.n_seeds):
                    orders[(method, s)] = state.selected
            elif method == "top_k_first_order":
                order = selection_mod.top_k_first_order(cache, max_budget)
                for s in range(cfg.selection.n_seeds):
                    orders[(method, s)] = order
            else:  # random: one permutation prefix per seed
                for s in range(cfg.selection.n_seeds):
                    perm = rng(cfg.seed, STREAM_RANDOM_SELECT, s).permutation(pool_ds.n)
                    orders[(method, s)] = [int(i) for i in perm[:max_budget]]
        traces = {method: _order_trace(cache, orders[(method, 0)], pool_ds.labels)
                  for method in cfg.selection.methods}
    with _stage("retrain"):
        jobs: Dict[tuple, tuple] = {}
        for (method, s), order in orders.items():
            for budget in cfg.selection.budgets:
                subset = tuple(sorted(order[:budget]))
                jobs.setdefault((subset, s), None)
        job_keys = list(jobs.keys())

        def _retrain(key):
            subset, s = key
            train_cfg = replace(cfg.train, seed=_derive_train_seed(cfg.seed, s))
            retrained = train(pool_ds.subset(list(subset)), arch, train_cfg)
            return mean_loss(retrained, test_ds)

        results = _run_parallel([lambda k=k: _retrain(k) for k in job_keys], threads)
        losses = dict(zip(job_keys, results))
    with _stage("report"):
        records = []
        for method in cfg.selection.methods:
            for budget in cfg.selection.budgets:
                per_seed_loss, per_seed_entropy = [], []
                for s in range(cfg.selection.n_seeds):
                    chosen = orders[(method, s)][:budget]
                    subset = tuple(sorted(chosen))
                    per_seed_loss.append(losses[(subset, s)])
                    per_seed_entropy.append(
                        selection_mod.class_entropy(chosen, pool_ds.labels))
                records.append(SelectionRecord(
                    method, budget,
                    float(np.mean(per_seed_loss)), float(np.std(per_seed_loss)),
                    float(np.mean(per_seed_entropy)), float(np.std(per_seed_entropy))))
    return SelectionReport(records, traces, pool_ds.n, cfg.selection.n_seeds,
                           cfg.raw, time.perf_counter() - started)


def class_pair_analysis(cfg: RunConfig):
    """Train and compute the class-pair mean-kappa matrix on the train split."""
    with _stage("data"):
        train_ds, test_ds = prepare_data(cfg)
        if not train_ds.is_classification:
            raise ConfigError("class-pair analysis requires a classification dataset")
    with _stage("train"):
        arch = resolve_arch(cfg, train_ds)
        params = train(train_ds, arch, cfg.train)
    with _stage("curvature"):
        target = make_target(cfg, train_ds, test_ds)
        curv, Hf, _tgrad = _estimator_inputs(cfg, params, train_ds, target)
    with _stage("kappa"):
        grads = example_grads(params, train_ds.features, train_ds.labels)
        shifts = influence.compute_shifts(curv, grads, train_ds.n)
        matrix = influence.class_pair_kappa_matrix(shifts, train_ds.labels, Hf)
    return matrix, train_ds
