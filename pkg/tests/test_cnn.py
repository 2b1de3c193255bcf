import math

import numpy as np
import pytest
from scipy import signal

from vitalradar.core.exceptions import ConfigurationException, TrainingException
from vitalradar.models.body import posture_keypoints
from vitalradar.models.posture_models import N_KEYPOINTS, InputTensor, Keypoints
from vitalradar.schemas.posture_schemas import NetworkArchitecture, TrainConfig
from vitalradar.schemas.scene_schemas import Posture
from vitalradar.services.cnn_service import (
    cnn_backward,
    cnn_forward,
    cnn_loss,
    conv_backward,
    conv_forward,
    init_params,
    maxpool_backward,
    maxpool_forward,
    predict,
    train,
)


def random_inputs(rng, arch: NetworkArchitecture, batch: int) -> np.ndarray:
    return rng.uniform(0.0, 1.0, (batch, arch.in_channels, arch.input_size, arch.input_size))


def random_truth(rng, batch: int) -> np.ndarray:
    return rng.uniform(-1.0, 2.0, (batch, 3 * N_KEYPOINTS))


class TestParams:
    """Tests for parameter initialization and shape checks"""

    def test_init_shapes(self, tiny_architecture):
        """Every tensor has its architecture shape; biases start at zero"""
        params = init_params(tiny_architecture, seed=0)

        params.validate()
        assert params.tensors["conv1.weight"].shape == (2, 2, 3, 3)
        assert params.tensors["fc1.weight"].shape == (8, 2)
        assert params.tensors["fc2.weight"].shape == (51, 8)
        assert not np.any(params.tensors["conv3.bias"])

    def test_he_uniform_limits(self, tiny_architecture):
        """Weights stay within sqrt(6 / fan_in)"""
        params = init_params(tiny_architecture, seed=0)

        assert np.max(np.abs(params.tensors["conv2.weight"])) <= math.sqrt(6.0 / 18)
        assert np.max(np.abs(params.tensors["fc2.weight"])) <= math.sqrt(6.0 / 8)

    def test_default_architecture_flat_size(self):
        """32x32 input through three pooling stages leaves 4x4x128 features"""
        assert NetworkArchitecture().flat_size == 2048

    def test_mis_shaped_tensor_rejected(self, tiny_architecture, rng):
        """Forward refuses parameters of the wrong shape"""
        params = init_params(tiny_architecture)
        params.tensors["fc1.weight"] = np.zeros((8, 3))

        with pytest.raises(ConfigurationException):
            cnn_forward(params, random_inputs(rng, tiny_architecture, 1))

    def test_mis_shaped_input_rejected(self, tiny_architecture):
        """Inputs must match the architecture's grid"""
        with pytest.raises(ConfigurationException):
            cnn_forward(init_params(tiny_architecture), np.zeros((2, 16, 16)))


class TestForward:
    """Tests for the forward pass"""

    def test_zero_network_outputs_zero(self, tiny_architecture, rng):
        """All-zero weights and biases output zeros"""
        params = init_params(tiny_architecture)
        params.tensors = {k: np.zeros_like(v) for k, v in params.tensors.items()}

        output, _ = cnn_forward(params, random_inputs(rng, tiny_architecture, 3))

        assert output.shape == (3, 51)
        assert not np.any(output)

    def test_zero_input_closed_form(self, tiny_architecture, rng):
        """With zero conv weights the output depends only on the biases"""
        params = init_params(tiny_architecture, seed=3)
        t = params.tensors
        for i in (1, 2, 3):
            t[f"conv{i}.weight"] = np.zeros_like(t[f"conv{i}.weight"])
            t[f"conv{i}.bias"] = rng.normal(size=2)
        t["fc1.bias"] = rng.normal(size=8)
        t["fc2.bias"] = rng.normal(size=51)

        output, _ = cnn_forward(params, np.zeros((2, 8, 8)))

        flat = np.maximum(t["conv3.bias"], 0.0)
        hidden = np.maximum(t["fc1.weight"] @ flat + t["fc1.bias"], 0.0)
        np.testing.assert_allclose(output[0], t["fc2.weight"] @ hidden + t["fc2.bias"], atol=1e-12)

    def test_eval_is_deterministic(self, tiny_architecture, rng):
        """Evaluation mode ignores the seed"""
        params = init_params(tiny_architecture)
        x = random_inputs(rng, tiny_architecture, 2)

        first, _ = cnn_forward(params, x, seed=1, dropout_rate=0.5)
        second, _ = cnn_forward(params, x, seed=2, dropout_rate=0.5)

        np.testing.assert_array_equal(first, second)

    def test_dropout_masks_follow_seed(self, tiny_architecture, rng):
        """Training-mode dropout repeats per seed"""
        params = init_params(tiny_architecture)
        params.tensors["fc1.bias"] = np.full(8, 0.5)
        x = random_inputs(rng, tiny_architecture, 4)

        first, _ = cnn_forward(params, x, train_mode=True, seed=5, dropout_rate=0.5)
        again, _ = cnn_forward(params, x, train_mode=True, seed=5, dropout_rate=0.5)
        other, _ = cnn_forward(params, x, train_mode=True, seed=6, dropout_rate=0.5)

        np.testing.assert_array_equal(first, again)
        assert not np.array_equal(first, other)

    def test_conv_matches_correlation(self, rng):
        """Each output channel is the zero-padded 3x3 cross-correlation summed over input channels"""
        x = rng.standard_normal((2, 3, 6, 6))
        weight = rng.standard_normal((4, 3, 3, 3))
        bias = rng.standard_normal(4)

        out = conv_forward(x, weight, bias)

        for b in range(2):
            for o in range(4):
                expected = bias[o] + sum(
                    signal.correlate2d(x[b, c], weight[o, c], mode="same") for c in range(3)
                )
                np.testing.assert_allclose(out[b, o], expected, atol=1e-12)

    def test_conv_input_gradient_is_adjoint(self, rng):
        """<conv(x), g> changes with x exactly by <x, dx>"""
        x = rng.standard_normal((2, 3, 6, 6))
        weight = rng.standard_normal((4, 3, 3, 3))
        dout = rng.standard_normal((2, 4, 6, 6))
        zero_bias = np.zeros(4)

        dx, dweight, _ = conv_backward(dout, x, weight)

        assert np.sum(conv_forward(x, weight, zero_bias) * dout) == pytest.approx(np.sum(x * dx))
        assert np.sum(conv_forward(x, weight, zero_bias) * dout) == pytest.approx(np.sum(weight * dweight))

    def test_maxpool_routes_to_first_maximum(self):
        """Pooling gradients go to the first maximum of each block"""
        x = np.array([[[[1.0, 3.0], [3.0, 0.0]]]])

        out, argmax = maxpool_forward(x)
        dx = maxpool_backward(np.ones_like(out), argmax, x.shape)

        assert out[0, 0, 0, 0] == 3.0
        np.testing.assert_array_equal(dx[0, 0], [[0.0, 1.0], [0.0, 0.0]])


class TestLoss:
    """Tests for the keypoint loss"""

    def test_zero_when_equal(self):
        """Identical predictions cost nothing"""
        truth = posture_keypoints(Posture.BAD, 2.0)

        loss, per_point = cnn_loss(truth.as_vector(), truth)

        assert loss == 0.0
        assert per_point.shape == (1, 17)

    def test_one_keypoint_off_by_a_meter(self):
        """One keypoint 1 m off gives 1/2 / 17"""
        truth = posture_keypoints(Posture.BAD, 2.0)
        pred = truth.coords.copy()
        pred[0, 0] += 1.0

        loss, _ = cnn_loss(pred.ravel(), truth)

        assert loss == pytest.approx(0.0294117647, abs=1e-9)

    def test_matches_direct_formula(self, rng):
        """Batch loss is the mean over samples of (1/17) sum 1/2 ||delta||^2"""
        pred, truth = random_truth(rng, 4), random_truth(rng, 4)

        loss, _ = cnn_loss(pred, truth)

        delta = (pred - truth).reshape(4, 17, 3)
        expected = np.mean([np.sum(0.5 * np.sum(d**2, axis=1)) / 17 for d in delta])
        assert loss == pytest.approx(expected, rel=1e-12)


class TestBackward:
    """Tests for backpropagation"""

    @pytest.fixture
    def setup(self, tiny_architecture, rng):
        params = init_params(tiny_architecture, seed=11)
        for name, tensor in params.tensors.items():
            if name.endswith(".bias"):
                params.tensors[name] = rng.uniform(0.05, 0.2, tensor.shape)
        return params, random_inputs(rng, tiny_architecture, 3), random_truth(rng, 3)

    def test_matches_finite_differences(self, setup):
        """Analytic gradients agree with central differences"""
        params, x, truth = setup
        _, cache = cnn_forward(params, x)
        grads = cnn_backward(params, cache, truth)
        step = 1e-6

        for name, tensor in params.tensors.items():
            numeric = np.zeros_like(tensor)
            for index in np.ndindex(tensor.shape):
                original = tensor[index]
                tensor[index] = original + step
                plus = cnn_loss(cnn_forward(params, x)[0], truth)[0]
                tensor[index] = original - step
                minus = cnn_loss(cnn_forward(params, x)[0], truth)[0]
                tensor[index] = original
                numeric[index] = (plus - minus) / (2 * step)
            scale = np.linalg.norm(grads[name]) + np.linalg.norm(numeric)
            if scale < 1e-10:
                continue
            assert np.linalg.norm(grads[name] - numeric) / scale < 1e-4, name

    def test_zero_loss_gives_zero_gradients(self, setup):
        """Targets equal to the output produce no gradient"""
        params, x, _ = setup
        output, cache = cnn_forward(params, x)

        grads = cnn_backward(params, cache, output.copy())

        for name, grad in grads.items():
            assert not np.any(grad), name

    def test_no_dropout_train_equals_eval(self, setup):
        """Training mode with rate 0 gives the evaluation gradients"""
        params, x, truth = setup
        _, eval_cache = cnn_forward(params, x)
        _, train_cache = cnn_forward(params, x, train_mode=True, seed=9, dropout_rate=0.0)

        eval_grads = cnn_backward(params, eval_cache, truth)
        train_grads = cnn_backward(params, train_cache, truth)

        for name in eval_grads:
            np.testing.assert_array_equal(train_grads[name], eval_grads[name])


class TestTrain:
    """Tests for mini-batch training"""

    @pytest.fixture
    def dataset(self, tiny_architecture, rng):
        samples = []
        for posture in Posture:
            for _ in range(3):
                tensor = InputTensor(random_inputs(rng, tiny_architecture, 1)[0])
                samples.append((tensor, posture_keypoints(posture, 2.0)))
        return samples

    def test_zero_learning_rate_keeps_params(self, tiny_architecture, dataset):
        """lr = 0 leaves weights unchanged and the loss constant"""
        params = init_params(tiny_architecture, seed=1)
        cfg = TrainConfig(
            learning_rate=0.0, epochs=4, batch_size=len(dataset), dropout_rate=0.0,
            architecture=tiny_architecture,
        )

        trained, history = train(dataset, cfg, params)

        for name in params.tensors:
            np.testing.assert_array_equal(trained.tensors[name], params.tensors[name])
        assert history == pytest.approx([history[0]] * 4, rel=1e-12)

    def test_given_params_not_modified(self, tiny_architecture, dataset):
        """Training works on a copy of the starting weights"""
        params = init_params(tiny_architecture, seed=1)
        before = params.copy()
        cfg = TrainConfig(epochs=2, batch_size=4, architecture=tiny_architecture)

        train(dataset, cfg, params)

        for name in params.tensors:
            np.testing.assert_array_equal(params.tensors[name], before.tensors[name])

    def test_overfits_single_sample(self, tiny_architecture, rng):
        """One sample is fitted to near-zero loss"""
        sample = (InputTensor(random_inputs(rng, tiny_architecture, 1)[0]), posture_keypoints(Posture.OAR, 2.0))
        cfg = TrainConfig(
            learning_rate=0.005, epochs=800, batch_size=1, dropout_rate=0.0,
            architecture=tiny_architecture,
        )

        _, history = train([sample], cfg)

        assert history[-1] < 1e-3

    def test_loss_decreases(self, tiny_architecture, dataset):
        """Training lowers the loss over the epochs"""
        cfg = TrainConfig(
            learning_rate=0.01, epochs=60, batch_size=3, dropout_rate=0.0,
            architecture=tiny_architecture,
        )

        _, history = train(dataset, cfg)

        assert len(history) == 60
        assert history[-1] < history[0]

    def test_deterministic(self, tiny_architecture, dataset):
        """Same seed and data give identical weights"""
        cfg = TrainConfig(epochs=3, batch_size=4, seed=17, architecture=tiny_architecture)

        first, _ = train(dataset, cfg)
        second, _ = train(dataset, cfg)

        for name in first.tensors:
            np.testing.assert_array_equal(first.tensors[name], second.tensors[name])

    def test_fresh_network_starts_at_mean_target(self, tiny_architecture, dataset):
        """With no epochs the output bias is the mean training target"""
        cfg = TrainConfig(epochs=0, architecture=tiny_architecture)

        params, history = train(dataset, cfg)

        mean = np.mean([k.as_vector() for _, k in dataset], axis=0)
        np.testing.assert_allclose(params.tensors["fc2.bias"], mean)
        assert history == []

    def test_empty_dataset_rejected(self, tiny_architecture):
        """Training needs samples"""
        with pytest.raises(ConfigurationException):
            train([], TrainConfig(architecture=tiny_architecture))

    def test_architecture_mismatch_rejected(self, tiny_architecture, dataset):
        """Starting weights must match the configured architecture"""
        other = NetworkArchitecture(input_size=8, conv_depths=(2, 2, 2), hidden=4)

        with pytest.raises(ConfigurationException):
            train(dataset, TrainConfig(architecture=tiny_architecture), init_params(other))

    def test_non_finite_loss_raises(self, tiny_architecture, dataset):
        """A NaN target makes the loss non-finite"""
        bad = Keypoints(np.full((N_KEYPOINTS, 3), np.nan))
        cfg = TrainConfig(epochs=2, batch_size=len(dataset) + 1, architecture=tiny_architecture)

        with pytest.raises(TrainingException) as exc_info:
            train(dataset + [(dataset[0][0], bad)], cfg)

        assert exc_info.value.history == []

    def test_predict_returns_keypoints(self, tiny_architecture, dataset):
        """Prediction yields 17 keypoints"""
        params, _ = train(dataset, TrainConfig(epochs=1, architecture=tiny_architecture))

        keypoints = predict(params, dataset[0][0])

        assert keypoints.coords.shape == (17, 3)
        assert np.all(np.isfinite(keypoints.coords))
