"""Model predictions, losses, exact gradients, trainers, serialization."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import finite_diff_grad, random_params, rel_err
from groupinf.data import Dataset, SyntheticConfig, make_synthetic_blobs
from groupinf.errors import ConfigError, TrainingError
from groupinf.model import (Arch, ModelParams, TargetSpec, TrainConfig,
                            example_grads, grad_example, load_params, loss,
                            objective_grad, objective_value, predict,
                            residuals, save_params, target_grad, target_value,
                            train)

ARCHS = {
    "lr_binary": Arch.lr_binary(4),
    "lr_multiclass": Arch.lr_multiclass(4, 3),
    "linear": Arch.linear(4),
    "mlp_cls": Arch.mlp(4, 6, 5, 3),
    "mlp_reg": Arch.mlp(4, 6, 5, 1),
}


def example_for(arch: Arch, seed: int):
    gen = np.random.default_rng(seed)
    x = gen.standard_normal(arch.dim)
    if arch.task == "binary":
        return x, int(gen.integers(0, 2))
    if arch.task == "multiclass":
        return x, int(gen.integers(0, arch.n_outputs))
    return x, float(gen.standard_normal())


class TestPredict:
    def test_zero_theta_gives_half(self):
        params = ModelParams(np.zeros(4), Arch.lr_binary(4))
        for seed in range(5):
            x = np.random.default_rng(seed).standard_normal(4)
            assert predict(params, x) == 0.5

    def test_identical_logits_give_uniform(self):
        params = ModelParams(np.zeros(12), Arch.lr_multiclass(4, 3))
        probs = predict(params, np.ones(4))
        np.testing.assert_allclose(probs, np.full(3, 1 / 3), atol=1e-15)

    def test_sigmoid_value(self):
        # independent oracle: evaluate the sigmoid through math.exp
        params = ModelParams(np.array([1.0, 0.0]), Arch.lr_binary(2))
        want = 1.0 / (1.0 + math.exp(-2.0))
        assert abs(predict(params, np.array([2.0, 5.0])) - want) < 1e-15

    def test_multiclass_probs_sum_to_one(self):
        params = random_params(Arch.lr_multiclass(4, 5), 3)
        probs = predict(params, np.arange(4.0))
        assert abs(probs.sum() - 1.0) < 1e-12

    def test_dimension_mismatch(self):
        params = ModelParams(np.zeros(4), Arch.lr_binary(4))
        with pytest.raises(ConfigError):
            predict(params, np.zeros(3))


class TestLoss:
    def test_half_probability_is_ln2(self):
        params = ModelParams(np.zeros(2), Arch.lr_binary(2))
        assert abs(loss(params, np.ones(2), 1) - math.log(2)) < 1e-15

    def test_confident_correct_prediction_vanishes(self):
        params = ModelParams(np.array([50.0]), Arch.lr_binary(1))
        assert loss(params, np.array([1.0]), 1) < 1e-20

    def test_zero_residual_regression(self):
        params = ModelParams(np.array([2.0]), Arch.linear(1))
        assert loss(params, np.array([3.0]), 6.0) == 0.0

    def test_label_out_of_range(self):
        params = random_params(Arch.lr_multiclass(2, 3), 0)
        with pytest.raises(ConfigError):
            loss(params, np.zeros(2), 7)


class TestGradients:
    def test_lr_binary_closed_form(self):
        params = random_params(Arch.lr_binary(4), 1)
        x = np.random.default_rng(2).standard_normal(4)
        sigma = predict(params, x)
        for y in (0, 1):
            np.testing.assert_allclose(grad_example(params, x, y),
                                       (sigma - y) * x, atol=1e-12)

    def test_zero_residual_gives_zero_gradient(self):
        params = ModelParams(np.array([50.0]), Arch.lr_binary(1))
        g = grad_example(params, np.array([1.0]), 1)
        assert np.abs(g).max() < 1e-20

    def test_zero_theta_example(self):
        params = ModelParams(np.zeros(2), Arch.lr_binary(2))
        np.testing.assert_allclose(grad_example(params, np.ones(2), 1),
                                   [-0.5, -0.5], atol=1e-15)

    @pytest.mark.parametrize("name", list(ARCHS))
    def test_matches_finite_differences(self, name):
        arch = ARCHS[name]
        for probe in range(20):
            params = random_params(arch, 100 + probe)
            x, y = example_for(arch, 200 + probe)
            fd = finite_diff_grad(
                lambda th: loss(ModelParams(th, arch), x, y), params.theta.copy())
            assert rel_err(grad_example(params, x, y), fd, floor=1e-6) < 1e-5

    def test_multiclass_residuals_sum_to_zero(self):
        params = random_params(Arch.lr_multiclass(3, 4), 7)
        X = np.random.default_rng(8).standard_normal((10, 3))
        R = residuals(params, X, np.zeros(10, dtype=int))
        np.testing.assert_allclose(R.sum(axis=1), 0.0, atol=1e-12)

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=25, deadline=None)
    def test_mlp_residual_rows_sum_to_zero(self, seed):
        arch = Arch.mlp(3, 4, 3, 4)
        params = random_params(arch, seed)
        X = np.random.default_rng(seed).standard_normal((4, 3))
        R = residuals(params, X, np.array([0, 1, 2, 3]))
        np.testing.assert_allclose(R.sum(axis=1), 0.0, atol=1e-12)

    def test_example_grads_match_singletons(self):
        arch = ARCHS["mlp_cls"]
        params = random_params(arch, 5)
        X = np.random.default_rng(6).standard_normal((7, 4))
        Y = np.random.default_rng(7).integers(0, 3, 7)
        G = example_grads(params, X, Y)
        for i in range(7):
            np.testing.assert_allclose(G[i], grad_example(params, X[i], Y[i]),
                                       atol=1e-13)


class TestTrain:
    def test_one_dim_regression_mean(self):
        ds = Dataset(np.ones((2, 1)), np.array([0.0, 2.0]), None)
        cfg = TrainConfig(optimizer="newton_lr", weight_decay=0.0,
                          convergence_tol=1e-12, epochs=50)
        params = train(ds, Arch.linear(1), cfg)
        assert abs(params.theta[0] - 1.0) < 1e-12

    def test_newton_reaches_tolerance(self, trained_lr):
        g = objective_grad(trained_lr["params"], trained_lr["train"],
                           trained_lr["config"].weight_decay)
        assert np.linalg.norm(g) <= trained_lr["config"].convergence_tol

    def test_bit_determinism(self):
        ds = make_synthetic_blobs(SyntheticConfig(2, 30, 3, seed=9))
        cfg = TrainConfig(optimizer="sgd", learning_rate=0.1, epochs=20,
                          batch_size=8, weight_decay=0.01, momentum=0.9, seed=5)
        a = train(ds, Arch.lr_binary(3), cfg)
        b = train(ds, Arch.lr_binary(3), cfg)
        assert np.array_equal(a.theta, b.theta)

    def test_newton_rejects_mlp(self):
        ds = make_synthetic_blobs(SyntheticConfig(2, 10, 3, seed=9))
        with pytest.raises(ConfigError):
            train(ds, Arch.mlp(3, 4, 3, 2), TrainConfig(optimizer="newton_lr"))

    def test_sgd_divergence_raises(self):
        gen = np.random.default_rng(9)
        ds = Dataset(gen.standard_normal((40, 3)), gen.standard_normal(40), None)
        cfg = TrainConfig(optimizer="sgd", learning_rate=1e12, epochs=10,
                          batch_size=4, weight_decay=0.0, momentum=0.99, seed=1)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingError):
                train(ds, Arch.linear(3), cfg)

    def test_incompatible_dataset(self):
        ds = make_synthetic_blobs(SyntheticConfig(3, 10, 2, seed=0))
        with pytest.raises(ConfigError):
            train(ds, Arch.lr_binary(2), TrainConfig())


class TestTarget:
    def test_single_example_is_its_loss(self, trained_lr):
        params = trained_lr["params"]
        ds = trained_lr["test"]
        spec = TargetSpec.single_example(ds.features[0], ds.labels[0])
        assert abs(target_value(params, spec)
                   - loss(params, ds.features[0], ds.labels[0])) < 1e-15

    def test_mean_over_singleton_set_matches(self, trained_lr):
        params = trained_lr["params"]
        ds = trained_lr["test"]
        one = Dataset(ds.features[:1], ds.labels[:1], ds.n_classes)
        spec_mean = TargetSpec.mean_test_loss(one)
        spec_single = TargetSpec.single_example(ds.features[0], ds.labels[0])
        assert abs(target_value(params, spec_mean)
                   - target_value(params, spec_single)) < 1e-15

    def test_gradient_matches_finite_differences(self, trained_lr):
        params = trained_lr["params"]
        spec = trained_lr["target"]
        arch = params.arch
        fd = finite_diff_grad(
            lambda th: target_value(ModelParams(th, arch), spec),
            params.theta.copy())
        assert rel_err(target_grad(params, spec), fd, floor=1e-6) < 1e-5

    def test_empty_target_rejected(self):
        with pytest.raises(ConfigError):
            TargetSpec.mean_test_loss(
                Dataset(np.zeros((0, 2)), np.zeros(0), None))


class TestObjective:
    def test_value_includes_l2(self):
        params = ModelParams(np.array([3.0, 4.0]), Arch.linear(2))
        ds = Dataset(np.zeros((1, 2)), np.array([0.0]), None)
        assert abs(objective_value(params, ds, 0.1) - 0.5 * 0.1 * 25.0) < 1e-15

    def test_grad_includes_l2(self):
        params = ModelParams(np.array([3.0, 4.0]), Arch.linear(2))
        ds = Dataset(np.zeros((1, 2)), np.array([0.0]), None)
        np.testing.assert_allclose(objective_grad(params, ds, 0.1),
                                   [0.3, 0.4], atol=1e-15)


class TestSerialization:
    def test_round_trip(self, tmp_path, trained_lr):
        path = tmp_path / "model.bin"
        save_params(trained_lr["params"], str(path), sidecar={"note": 1})
        again = load_params(str(path))
        assert again.arch == trained_lr["params"].arch
        assert np.array_equal(again.theta, trained_lr["params"].theta)
        assert (tmp_path / "model.bin.json").exists()

    def test_identical_bytes_for_identical_params(self, tmp_path, trained_lr):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save_params(trained_lr["params"], str(a))
        save_params(trained_lr["params"], str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a model")
        with pytest.raises(ConfigError):
            load_params(str(path))

    def test_mlp_round_trip(self, tmp_path, trained_mlp3):
        path = tmp_path / "mlp.bin"
        save_params(trained_mlp3["params"], str(path))
        again = load_params(str(path))
        assert np.array_equal(again.theta, trained_mlp3["params"].theta)
        assert again.arch == trained_mlp3["params"].arch
