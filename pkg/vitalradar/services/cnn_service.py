"""
Keypoint regression network written directly on numpy.

Layout is (batch, channels, height, width). Each block is a 3x3 convolution
with one cell of zero padding, ReLU and 2x2 max pooling; the head is
flatten -> dropout -> FC hidden -> ReLU -> dropout -> FC output.
"""

import logging
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from vitalradar.core.exceptions import ConfigurationException, TrainingException
from vitalradar.models.posture_models import (
    N_KEYPOINTS,
    ForwardCache,
    InputTensor,
    Keypoints,
    NetworkParams,
)
from vitalradar.schemas.posture_schemas import NetworkArchitecture, TrainConfig

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


def init_params(architecture: NetworkArchitecture, seed: int = 0) -> NetworkParams:
    """He-uniform weights (limit sqrt(6 / fan_in)) and zero biases"""
    rng = np.random.default_rng(seed)
    params = NetworkParams(architecture=architecture)
    for name, shape in params.expected_shapes().items():
        if name.endswith(".bias"):
            params.tensors[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            limit = math.sqrt(6.0 / fan_in)
            params.tensors[name] = rng.uniform(-limit, limit, size=shape)
    return params


def _as_batch(inputs, architecture: NetworkArchitecture) -> np.ndarray:
    if isinstance(inputs, InputTensor):
        inputs = inputs.data
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 3:
        x = x[None]
    expected = (architecture.in_channels, architecture.input_size, architecture.input_size)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ConfigurationException(f"input shape {x.shape} does not match (B, *{expected})")
    return x


def _conv_windows(x: np.ndarray) -> np.ndarray:
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    return sliding_window_view(padded, (3, 3), axis=(2, 3))


def _im2col(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B*H*W, C*9) patches of the zero-padded input"""
    b, c, h, w = x.shape
    return _conv_windows(x).transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * 9)


def conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-size 3x3 convolution (cross-correlation)"""
    b, _, h, w = x.shape
    out = _im2col(x) @ weight.reshape(weight.shape[0], -1).T
    return out.reshape(b, h, w, -1).transpose(0, 3, 1, 2) + bias[None, :, None, None]


def conv_backward(
    dout: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dweight, dbias)"""
    b, c, h, w = x.shape
    n_out = weight.shape[0]
    dout_rows = dout.transpose(0, 2, 3, 1).reshape(b * h * w, n_out)
    dweight = (dout_rows.T @ _im2col(x)).reshape(weight.shape)
    dbias = dout.sum(axis=(0, 2, 3))
    dcols = (dout_rows @ weight.reshape(n_out, -1)).reshape(b, h, w, c, 3, 3)
    dpadded = np.zeros((b, c, h + 2, w + 2))
    for k in range(3):
        for l in range(3):
            dpadded[:, :, k : k + h, l : l + w] += dcols[..., k, l].transpose(0, 3, 1, 2)
    return dpadded[:, :, 1:-1, 1:-1], dweight, dbias


def _pool_blocks(x: np.ndarray) -> np.ndarray:
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        b, c, h // 2, w // 2, 4
    )


def maxpool_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 max pooling; returns (output, argmax within each block)"""
    blocks = _pool_blocks(x)
    argmax = blocks.argmax(axis=-1)
    return np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0], argmax


def maxpool_backward(dout: np.ndarray, argmax: np.ndarray, input_shape: tuple[int, ...]) -> np.ndarray:
    """Route each pooled gradient to the first maximum of its block"""
    b, c, h, w = input_shape
    blocks = np.zeros((b, c, h // 2, w // 2, 4))
    np.put_along_axis(blocks, argmax[..., None], dout[..., None], axis=-1)
    return blocks.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        input_shape
    )


def _dropout_mask(rng: np.random.Generator, shape: tuple[int, ...], rate: float) -> np.ndarray:
    return (rng.random(shape) >= rate) / (1.0 - rate)


def cnn_forward(
    params: NetworkParams,
    inputs,
    train_mode: bool = False,
    seed: int = 0,
    dropout_rate: float = 0.0,
) -> tuple[np.ndarray, ForwardCache]:
    """
    Forward pass.

    Args:
        params: Network weights
        inputs: InputTensor, (C, S, S) or (B, C, S, S) array
        train_mode: Apply inverted dropout with masks drawn from seed
        seed: Dropout seed
        dropout_rate: Drop probability per dropout layer

    Returns:
        (outputs of shape (B, outputs), cache for backpropagation)

    Raises:
        ConfigurationException: If params or inputs do not match the architecture
    """
    params.validate()
    arch = params.architecture
    x = _as_batch(inputs, arch)
    t = params.tensors
    cache = ForwardCache(inputs=x)

    activation = x
    for i in range(1, len(arch.conv_depths) + 1):
        cache.conv_inputs.append(activation)
        pre = conv_forward(activation, t[f"conv{i}.weight"], t[f"conv{i}.bias"])
        cache.conv_pre.append(pre)
        rectified = np.maximum(pre, 0.0)
        cache.pool_input_shapes.append(rectified.shape)
        activation, argmax = maxpool_forward(rectified)
        cache.pool_argmax.append(argmax)

    flat = activation.reshape(activation.shape[0], -1)
    rng = np.random.default_rng(seed) if train_mode else None
    cache.flat = flat
    cache.mask1 = _dropout_mask(rng, flat.shape, dropout_rate) if train_mode else None
    dropped = flat * cache.mask1 if train_mode else flat

    cache.hidden_pre = dropped @ t["fc1.weight"].T + t["fc1.bias"]
    cache.hidden = np.maximum(cache.hidden_pre, 0.0)
    cache.mask2 = _dropout_mask(rng, cache.hidden.shape, dropout_rate) if train_mode else None
    hidden = cache.hidden * cache.mask2 if train_mode else cache.hidden

    cache.output = hidden @ t["fc2.weight"].T + t["fc2.bias"]
    return cache.output, cache


def _truth_matrix(truth, batch: int) -> np.ndarray:
    if isinstance(truth, Keypoints):
        truth = truth.as_vector()
    elif isinstance(truth, (list, tuple)) and truth and isinstance(truth[0], Keypoints):
        truth = np.stack([k.as_vector() for k in truth])
    y = np.asarray(truth, dtype=float).reshape(-1, 3 * N_KEYPOINTS)
    if y.shape[0] != batch:
        raise ConfigurationException(f"{y.shape[0]} truth rows for a batch of {batch}")
    return y


def cnn_loss(pred: np.ndarray, truth) -> tuple[float, np.ndarray]:
    """
    Keypoint loss: 1/2 squared distance per keypoint, averaged over keypoints and batch.

    Args:
        pred: (51,) or (B, 51) predictions
        truth: Keypoints, list of Keypoints or (B, 51) array

    Returns:
        (loss, per-keypoint errors of shape (B, 17))
    """
    pred = np.asarray(pred, dtype=float).reshape(-1, 3 * N_KEYPOINTS)
    y = _truth_matrix(truth, pred.shape[0])
    delta = (pred - y).reshape(-1, N_KEYPOINTS, 3)
    per_point = 0.5 * np.sum(delta**2, axis=-1)
    return float(per_point.mean(axis=1).mean()), per_point


def cnn_backward(params: NetworkParams, cache: ForwardCache, truth) -> dict[str, np.ndarray]:
    """
    Gradients of cnn_loss with respect to every parameter tensor.

    Args:
        params: Weights used for the forward pass
        cache: Cache returned by cnn_forward
        truth: Targets matching the forward batch

    Returns:
        Gradient per tensor name, same shapes as params.tensors
    """
    t = params.tensors
    arch = params.architecture
    batch = cache.output.shape[0]
    y = _truth_matrix(truth, batch)
    grads: dict[str, np.ndarray] = {}

    dout = (cache.output - y) / (N_KEYPOINTS * batch)
    hidden = cache.hidden * cache.mask2 if cache.mask2 is not None else cache.hidden
    grads["fc2.weight"] = dout.T @ hidden
    grads["fc2.bias"] = dout.sum(axis=0)
    dhidden = dout @ t["fc2.weight"]
    if cache.mask2 is not None:
        dhidden = dhidden * cache.mask2
    dhidden_pre = dhidden * (cache.hidden_pre > 0)

    flat = cache.flat * cache.mask1 if cache.mask1 is not None else cache.flat
    grads["fc1.weight"] = dhidden_pre.T @ flat
    grads["fc1.bias"] = dhidden_pre.sum(axis=0)
    dflat = dhidden_pre @ t["fc1.weight"]
    if cache.mask1 is not None:
        dflat = dflat * cache.mask1

    final = arch.final_size
    dactivation = dflat.reshape(batch, arch.conv_depths[-1], final, final)
    for i in range(len(arch.conv_depths), 0, -1):
        drectified = maxpool_backward(
            dactivation, cache.pool_argmax[i - 1], cache.pool_input_shapes[i - 1]
        )
        dpre = drectified * (cache.conv_pre[i - 1] > 0)
        dactivation, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = conv_backward(
            dpre, cache.conv_inputs[i - 1], t[f"conv{i}.weight"]
        )
    return grads


class _Adam:
    def __init__(self, params: NetworkParams, learning_rate: float):
        self.learning_rate = learning_rate
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def step(self, params: NetworkParams, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        correction1 = 1.0 - ADAM_BETA1**self.step_count
        correction2 = 1.0 - ADAM_BETA2**self.step_count
        for name, grad in grads.items():
            self.m[name] = ADAM_BETA1 * self.m[name] + (1 - ADAM_BETA1) * grad
            self.v[name] = ADAM_BETA2 * self.v[name] + (1 - ADAM_BETA2) * grad**2
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            params.tensors[name] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPSILON)


class _SGD:
    def __init__(self, params: NetworkParams, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: NetworkParams, grads: dict[str, np.ndarray]) -> None:
        for name, grad in grads.items():
            params.tensors[name] -= self.learning_rate * grad


def train(
    dataset: list[tuple[InputTensor, Keypoints]],
    cfg: TrainConfig,
    params: NetworkParams | None = None,
) -> tuple[NetworkParams, list[float]]:
    """
    Mini-batch training of the keypoint network.

    A fresh network is He-uniform initialized from cfg.seed with the output
    bias set to the mean training target. Given params are trained in place
    on a copy.

    Args:
        dataset: (input, keypoints) pairs
        cfg: Training parameters
        params: Starting weights; a fresh network when omitted

    Returns:
        (trained params, mean loss per epoch)

    Raises:
        ConfigurationException: If the dataset is empty
        TrainingException: If the loss becomes non-finite
    """
    if not dataset:
        raise ConfigurationException("training needs at least one sample")
    arch = cfg.architecture
    x = np.concatenate([_as_batch(inputs, arch) for inputs, _ in dataset])
    y = np.stack([keypoints.as_vector() for _, keypoints in dataset])

    if params is None:
        params = init_params(arch, cfg.seed)
        params.tensors["fc2.bias"] = y.mean(axis=0)
    else:
        params = params.copy()
        if params.architecture != arch:
            raise ConfigurationException("params architecture does not match the training config")
    optimizer = (_Adam if cfg.optimizer == "adam" else _SGD)(params, cfg.learning_rate)

    rng = np.random.default_rng(cfg.seed)
    history: list[float] = []
    n = len(dataset)
    logger.info(
        "Training on %d samples: %d epochs, batch %d, lr %g (%s)",
        n,
        cfg.epochs,
        cfg.batch_size,
        cfg.learning_rate,
        cfg.optimizer,
    )
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            output, cache = cnn_forward(
                params,
                x[batch],
                train_mode=True,
                seed=int(rng.integers(2**63 - 1)),
                dropout_rate=cfg.dropout_rate,
            )
            loss, _ = cnn_loss(output, y[batch])
            if not np.isfinite(loss):
                raise TrainingException(f"loss became non-finite in epoch {epoch}", history=history)
            optimizer.step(params, cnn_backward(params, cache, y[batch]))
            total += loss * len(batch)
        history.append(total / n)
        logger.debug("Epoch %d: loss %.6f", epoch, history[-1])

    if history:
        logger.info("Training finished: loss %.6f -> %.6f", history[0], history[-1])
    return params, history


def predict(params: NetworkParams, inputs: InputTensor) -> Keypoints:
    """Evaluation-mode keypoints for one input"""
    output, _ = cnn_forward(params, inputs, train_mode=False)
    return Keypoints.from_vector(output[0])
