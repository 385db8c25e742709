"""Curvature assembly, damping/factorization, and target Hessians."""

import numpy as np
import pytest

from conftest import finite_diff_hvp, random_params, rel_err
from groupinf.curvature import (block_diagonal, damp_and_factor, dump_matrix,
                                exact_hessian, gauss_newton, load_matrix,
                                target_hessian)
from groupinf.data import Dataset
from groupinf.errors import NotPositiveDefiniteError, SizeLimitError
from groupinf.model import (Arch, ModelParams, TargetSpec, dataset_grad,
                            hessian_vector_product, logits_batch, target_grad)

ARCH_DATA = []


def _dataset_for(arch: Arch, n: int, seed: int) -> Dataset:
    gen = np.random.default_rng(seed)
    X = gen.standard_normal((n, arch.dim))
    if arch.task == "binary":
        return Dataset(X, gen.integers(0, 2, n), 2)
    if arch.task == "multiclass":
        return Dataset(X, gen.integers(0, arch.n_outputs, n), arch.n_outputs)
    return Dataset(X, gen.standard_normal(n), None)


class TestExactHessian:
    def test_lr_binary_closed_form_at_zero(self):
        # sigma(1-sigma) = 1/4 at theta = 0
        params = ModelParams(np.zeros(2), Arch.lr_binary(2))
        ds = Dataset(np.array([[1.0, 0.0]]), np.array([1]), 2)
        H = exact_hessian(params, ds, 0.0)
        np.testing.assert_allclose(H, [[0.25, 0.0], [0.0, 0.0]], atol=1e-15)

    def test_beta_shifts_diagonal_exactly(self):
        params = ModelParams(np.zeros(2), Arch.lr_binary(2))
        ds = Dataset(np.array([[1.0, 0.0]]), np.array([1]), 2)
        H0 = exact_hessian(params, ds, 0.0)
        H1 = exact_hessian(params, ds, 0.01)
        np.testing.assert_array_equal(H1, H0 + 0.01 * np.eye(2))

    @pytest.mark.parametrize("arch", [
        Arch.lr_binary(4), Arch.lr_multiclass(4, 3), Arch.linear(4),
        Arch.mlp(4, 5, 4, 3), Arch.mlp(4, 5, 4, 1),
    ], ids=lambda a: f"{a.kind}-{a.n_outputs}")
    def test_matvec_matches_finite_differences(self, arch):
        ds = _dataset_for(arch, 12, 3)
        for probe in range(20):
            params = random_params(arch, 300 + probe)
            v = np.random.default_rng(400 + probe).standard_normal(arch.param_count)
            fd = finite_diff_hvp(
                lambda th: dataset_grad(ModelParams(th, arch), ds),
                params.theta.copy(), v)
            H = exact_hessian(params, ds, 0.0)
            assert rel_err(H @ v, fd, floor=1e-6) < 1e-5
            hv = hessian_vector_product(params, ds, v)
            assert rel_err(hv, fd, floor=1e-6) < 1e-5

    def test_symmetry(self):
        arch = Arch.mlp(4, 5, 4, 3)
        params = random_params(arch, 0)
        H = exact_hessian(params, _dataset_for(arch, 10, 1), 0.0)
        assert np.abs(H - H.T).max() <= 1e-10

    def test_dense_limit(self):
        arch = Arch.mlp(4, 5, 4, 3)
        params = random_params(arch, 0)
        with pytest.raises(SizeLimitError):
            exact_hessian(params, _dataset_for(arch, 5, 0), 0.0, dense_limit=10)


class TestGaussNewton:
    @pytest.mark.parametrize("arch", [
        Arch.lr_binary(4), Arch.lr_multiclass(4, 3), Arch.linear(4),
    ], ids=lambda a: a.kind)
    def test_equals_exact_hessian_for_linear_models(self, arch):
        ds = _dataset_for(arch, 15, 2)
        params = random_params(arch, 8)
        H = exact_hessian(params, ds, 0.01)
        G = gauss_newton(params, ds, 0.01)
        assert np.abs(H - G).max() <= 1e-10

    def test_zero_residual_regression_mlp(self):
        # targets set to the model's own predictions: residual term vanishes
        arch = Arch.mlp(4, 5, 4, 1)
        params = random_params(arch, 4)
        gen = np.random.default_rng(5)
        X = gen.standard_normal((12, 4))
        preds = logits_batch(params, X)[:, 0]
        ds = Dataset(X, preds, None)
        H = exact_hessian(params, ds, 0.0)
        G = gauss_newton(params, ds, 0.0)
        assert np.abs(H - G).max() <= 1e-8

    def test_positive_semidefinite(self):
        arch = Arch.mlp(4, 5, 4, 3)
        for seed in range(5):
            params = random_params(arch, seed)
            G = gauss_newton(params, _dataset_for(arch, 10, seed), 0.0)
            assert np.linalg.eigvalsh(G).min() >= -1e-10


class TestDampAndFactor:
    def test_identity_solve(self):
        curv = damp_and_factor(np.eye(3), 0.0)
        v = np.array([1.0, -2.0, 0.5])
        np.testing.assert_allclose(curv.solve(v), v, atol=1e-15)

    def test_diagonal_with_damping(self):
        curv = damp_and_factor(np.diag([1.0, 2.0]), 1.0)
        np.testing.assert_allclose(curv.solve(np.array([2.0, 6.0])),
                                   [1.0, 2.0], atol=1e-14)

    def test_random_psd_solve_residual(self):
        gen = np.random.default_rng(7)
        A = gen.standard_normal((50, 50))
        base = A @ A.T / 50
        curv = damp_and_factor(base, 1e-2)
        v = gen.standard_normal(50)
        x = curv.solve(v)
        assert np.linalg.norm(curv.matvec(x) - v) <= 1e-10 * np.linalg.norm(v)

    def test_not_pd_error_names_damping(self):
        with pytest.raises(NotPositiveDefiniteError, match="0.5"):
            damp_and_factor(-2.0 * np.eye(3), 0.5)

    def test_rejects_asymmetric_base(self):
        M = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValueError, match="asymmetric"):
            damp_and_factor(M, 0.0)

    def test_solve_matvec_round_trip(self):
        gen = np.random.default_rng(9)
        A = gen.standard_normal((20, 20))
        curv = damp_and_factor(A @ A.T / 20, 0.1)
        v = gen.standard_normal(20)
        assert rel_err(curv.solve(curv.matvec(v)), v) < 1e-8
        assert rel_err(curv.matvec(curv.solve(v)), v) < 1e-8

    def test_matrix_rhs_solve(self):
        gen = np.random.default_rng(11)
        A = gen.standard_normal((10, 10))
        curv = damp_and_factor(A @ A.T / 10, 0.1)
        B = gen.standard_normal((10, 4))
        X = curv.solve(B)
        assert np.abs(curv.base @ X + 0.1 * X - B).max() < 1e-10


class TestTargetHessian:
    def test_single_regression_example_is_outer_product(self):
        params = ModelParams(np.array([1.0, -2.0]), Arch.linear(2))
        x = np.array([3.0, 0.5])
        spec = TargetSpec.single_example(x, 1.0)
        Hf = target_hessian(params, spec, "exact_hessian").matrix
        np.testing.assert_allclose(Hf, np.outer(x, x), atol=1e-14)

    def test_singleton_mean_matches_single(self, trained_lr):
        params = trained_lr["params"]
        ds = trained_lr["test"]
        one = Dataset(ds.features[:1], ds.labels[:1], ds.n_classes)
        a = target_hessian(params, TargetSpec.mean_test_loss(one), "exact_hessian")
        b = target_hessian(params,
                           TargetSpec.single_example(ds.features[0], ds.labels[0]),
                           "exact_hessian")
        np.testing.assert_allclose(a.matrix, b.matrix, atol=1e-14)

    def test_matvec_matches_finite_differences_of_target_grad(self, trained_mlp3):
        params = trained_mlp3["params"]
        spec = trained_mlp3["target"]
        arch = params.arch
        Hf = target_hessian(params, spec, "exact_hessian").matrix
        gen = np.random.default_rng(13)
        for _ in range(5):
            v = gen.standard_normal(arch.param_count)
            fd = finite_diff_hvp(
                lambda th: target_grad(ModelParams(th, arch), spec),
                params.theta.copy(), v)
            assert rel_err(Hf @ v, fd, floor=1e-6) < 1e-5

    def test_never_damped(self, trained_lr):
        # the target Hessian of a mean CE loss has no beta shift
        params = trained_lr["params"]
        Hf = target_hessian(params, trained_lr["target"], "exact_hessian")
        H_train = exact_hessian(params, trained_lr["test"], 0.0)
        np.testing.assert_allclose(Hf.matrix, H_train, atol=1e-12)


class TestBlockDiagonal:
    def test_zeroes_cross_layer_blocks(self):
        arch = Arch.mlp(3, 4, 3, 2)
        p = arch.param_count
        M = np.arange(p * p, dtype=float).reshape(p, p)
        M = 0.5 * (M + M.T)
        B = block_diagonal(M, arch)
        blocks = arch.blocks()
        name, off, shape = blocks[0]
        size = int(np.prod(shape))
        np.testing.assert_array_equal(B[:size, :size], M[:size, :size])
        assert np.all(B[:size, size:] == 0.0)

    def test_preserves_symmetry(self):
        arch = Arch.mlp(3, 4, 3, 2)
        gen = np.random.default_rng(1)
        M = gen.standard_normal((arch.param_count, arch.param_count))
        M = 0.5 * (M + M.T)
        B = block_diagonal(M, arch)
        assert np.abs(B - B.T).max() == 0.0


class TestMatrixDump:
    def test_round_trip(self, tmp_path):
        M = np.random.default_rng(3).standard_normal((4, 6))
        path = tmp_path / "m.bin"
        dump_matrix(M, str(path))
        np.testing.assert_array_equal(load_matrix(str(path)), M)
        # header: two little-endian u64 dims
        raw = path.read_bytes()
        assert len(raw) == 16 + 4 * 6 * 8
