"""Shared fixtures and independent numerical oracles.

The finite-difference helpers here are the oracles for every gradient
and curvature claim; they must stay independent of the package's
analytic differentiation paths.
"""

import numpy as np
import pytest

from groupinf.curvature import damp_and_factor, exact_hessian, target_hessian
from groupinf.data import SyntheticConfig, make_synthetic_blobs, split, standardize
from groupinf.model import (Arch, ModelParams, TargetSpec, TrainConfig,
                            example_grads, target_grad, train)


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of a scalar function."""
    g = np.zeros_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def finite_diff_hvp(grad_fn, x, v, h=1e-5):
    """Central-difference Hessian-vector product from a gradient function."""
    return (grad_fn(x + h * v) - grad_fn(x - h * v)) / (2 * h)


def rel_err(got, want, floor=1e-12):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(float(np.abs(want).max(initial=0.0)), floor)
    return float(np.abs(got - want).max(initial=0.0)) / scale


@pytest.fixture(scope="session")
def binary_blobs():
    """Standardized binary blobs: 200 train / 40 test, moderate overlap."""
    full = make_synthetic_blobs(SyntheticConfig(
        n_classes=2, n_per_class=120, dim=5, center_scale=2.0, stddev=1.5, seed=1))
    train_ds, test_ds = split(full, 1 / 6, seed=1)
    train_ds, test_ds, _ = standardize(train_ds, test_ds)
    return train_ds, test_ds


@pytest.fixture(scope="session")
def trained_lr(binary_blobs):
    """Binary LR trained by Newton to 1e-10, with its estimator inputs."""
    train_ds, test_ds = binary_blobs
    arch = Arch.lr_binary(train_ds.dim)
    config = TrainConfig(optimizer="newton_lr", weight_decay=0.01,
                         convergence_tol=1e-10, epochs=100)
    params = train(train_ds, arch, config)
    target = TargetSpec.mean_test_loss(test_ds)
    H = exact_hessian(params, train_ds, config.weight_decay)
    curv = damp_and_factor(H, 0.0)
    Hf = target_hessian(params, target, "exact_hessian").matrix
    tgrad = target_grad(params, target)
    return {
        "train": train_ds, "test": test_ds, "arch": arch, "config": config,
        "params": params, "target": target, "curv": curv, "Hf": Hf,
        "tgrad": tgrad,
        "grads": example_grads(params, train_ds.features, train_ds.labels),
    }


@pytest.fixture(scope="session")
def trained_mlp3():
    """Small 3-class MLP trained by SGD, with exact curvature inputs."""
    full = make_synthetic_blobs(SyntheticConfig(
        n_classes=3, n_per_class=60, dim=10, center_scale=2.0, stddev=1.2, seed=2))
    train_ds, test_ds = split(full, 1 / 6, seed=2)
    train_ds, test_ds, _ = standardize(train_ds, test_ds)
    arch = Arch.mlp(10, 16, 8, 3)
    config = TrainConfig(optimizer="sgd", learning_rate=0.05, epochs=150,
                         batch_size=32, weight_decay=0.001, momentum=0.0, seed=0)
    params = train(train_ds, arch, config)
    target = TargetSpec.mean_test_loss(test_ds)
    H = exact_hessian(params, train_ds, config.weight_decay)
    curv = damp_and_factor(H, 0.05)
    Hf = target_hessian(params, target, "exact_hessian").matrix
    return {
        "train": train_ds, "test": test_ds, "arch": arch, "config": config,
        "params": params, "target": target, "curv": curv, "Hf": Hf,
        "tgrad": target_grad(params, target),
        "grads": example_grads(params, train_ds.features, train_ds.labels),
    }


def random_params(arch: Arch, seed: int, scale: float = 0.5) -> ModelParams:
    gen = np.random.default_rng(seed)
    return ModelParams(scale * gen.standard_normal(arch.param_count), arch)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::test_criterion_" in nodeid:
                name = nodeid.split("::")[-1].replace("test_", "", 1)
                status = "PASS" if outcome == "passed" else "FAIL"
                lines.append((name, status))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, status in sorted(lines):
            terminalreporter.write_line(f"{status}  {name}")
