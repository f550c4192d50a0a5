"""Unfolded deep autoencoder, MSE / cross-entropy fine-tuning and RSS decoding.

Every layer computes ``x @ W + c``. The first encoder layer reads ``v / sigma**2``
and the last decoder layer is affine with its output scaled by ``sigma**2``;
all other layers are sigmoid.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit, log_softmax

from .gradients import TrainingDivergenceError
from .pretrain import LayerStack
from .rbm import ContractError, INIT_WEIGHT_STD

PROB_FLOOR = 1e-300

Layer = tuple[np.ndarray, np.ndarray]
EpochCallback = Callable[[int, float], None]


@dataclass
class AutoencoderNet:
    encoder: list[Layer]
    decoder: list[Layer]
    sigma: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.encoder[0][0].shape[0]

    @property
    def code_dim(self) -> int:
        return self.encoder[-1][0].shape[1]

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim] + [W.shape[1] for W, _ in self.encoder]

    def copy(self) -> "AutoencoderNet":
        return AutoencoderNet(
            encoder=[(W.copy(), c.copy()) for W, c in self.encoder],
            decoder=[(W.copy(), c.copy()) for W, c in self.decoder],
            sigma=self.sigma.copy(),
        )

    def arrays(self) -> list[np.ndarray]:
        return [a for layer in self.encoder + self.decoder for a in layer]


@dataclass
class SoftmaxHead:
    weights: np.ndarray
    bias: np.ndarray
    bin_centers: np.ndarray

    def __post_init__(self):
        self.bin_centers = np.asarray(self.bin_centers, dtype=float)
        B = self.bin_centers.size
        if B < 2:
            raise ContractError("a softmax head needs at least 2 classes")
        if np.any(np.diff(self.bin_centers) <= 0):
            raise ContractError("bin centers must be strictly increasing")
        if self.weights.shape[1] != B or self.bias.shape != (B,):
            raise ContractError("head weights/bias do not match the number of bins")

    @classmethod
    def initialize(cls, code_dim: int, bin_centers, rng: np.random.Generator) -> "SoftmaxHead":
        B = len(bin_centers)
        return cls(rng.normal(0.0, INIT_WEIGHT_STD, size=(code_dim, B)), np.zeros(B),
                   np.asarray(bin_centers, dtype=float))

    def copy(self) -> "SoftmaxHead":
        return SoftmaxHead(self.weights.copy(), self.bias.copy(), self.bin_centers.copy())


def unfold(stack: LayerStack) -> AutoencoderNet:
    """Encoder copies the blocks; decoder starts from their transposes with zero biases.

    Only the first layer keeps an explicit ``sigma``; any non-unit ``sigma`` of a
    higher block is absorbed into its encoder weights (``W / sigma**2``) while the
    decoder takes the block's own ``W^T``, the generative direction ``b + W h``.
    """
    encoder = [(stack.blocks[0].weights.copy(), stack.blocks[0].hidden_bias.copy())]
    encoder += [(p.weights / p.sigma2[:, None], p.hidden_bias.copy()) for p in stack.blocks[1:]]
    decoder = [(p.weights.T.copy(), np.zeros(p.n_visible)) for p in reversed(stack.blocks)]
    return AutoencoderNet(encoder, decoder, stack.blocks[0].sigma.copy())


def _as_batch(v: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    if v.shape[1] != dim:
        raise ContractError(f"expected {dim} features, got {v.shape[1]}")
    return v, single


def _encode_all(v: np.ndarray, net: AutoencoderNet) -> list[np.ndarray]:
    acts = [v]
    x = v / net.sigma**2
    for W, c in net.encoder:
        x = expit(x @ W + c)
        acts.append(x)
    return acts


def _decode_all(code: np.ndarray, net: AutoencoderNet) -> list[np.ndarray]:
    acts = [code]
    x = code
    last = len(net.decoder) - 1
    for t, (W, c) in enumerate(net.decoder):
        if t == last:
            x = c + (x @ W) * net.sigma**2
        else:
            x = expit(x @ W + c)
        acts.append(x)
    return acts


def encode(v: np.ndarray, net: AutoencoderNet) -> np.ndarray:
    v, single = _as_batch(v, net.input_dim)
    code = _encode_all(v, net)[-1]
    return code[0] if single else code


def decode(code: np.ndarray, net: AutoencoderNet) -> np.ndarray:
    code, single = _as_batch(code, net.code_dim)
    out = _decode_all(code, net)[-1]
    return out[0] if single else out


def reconstruct(v: np.ndarray, net: AutoencoderNet) -> np.ndarray:
    return decode(encode(v, net), net)


def reconstruction_error(data: np.ndarray, net: AutoencoderNet) -> float:
    """Mean over rows of the summed squared reconstruction error."""
    data, _ = _as_batch(data, net.input_dim)
    if data.shape[0] == 0:
        raise ContractError("empty data")
    return float(np.mean(np.sum((reconstruct(data, net) - data) ** 2, axis=1)))


def _backprop_encoder(acts: list[np.ndarray], delta: np.ndarray,
                      net: AutoencoderNet) -> list[Layer]:
    """Gradients of the encoder given dLoss/d(code) in ``delta``."""
    grads: list[Layer] = [None] * len(net.encoder)  # type: ignore[list-item]
    for t in range(len(net.encoder) - 1, -1, -1):
        W, _ = net.encoder[t]
        a = acts[t + 1]
        dz = delta * a * (1.0 - a)
        x_in = acts[0] / net.sigma**2 if t == 0 else acts[t]
        grads[t] = (x_in.T @ dz, dz.sum(axis=0))
        if t > 0:
            delta = dz @ W.T
    return grads


def mse_gradients(data: np.ndarray, net: AutoencoderNet):
    """Reconstruction error and its gradient as ``(loss, encoder_grads, decoder_grads)``."""
    data, _ = _as_batch(data, net.input_dim)
    n = data.shape[0]
    enc = _encode_all(data, net)
    dec = _decode_all(enc[-1], net)
    out = dec[-1]
    loss = float(np.sum((out - data) ** 2) / n)

    delta = 2.0 * (out - data) / n
    dec_grads: list[Layer] = [None] * len(net.decoder)  # type: ignore[list-item]
    for t in range(len(net.decoder) - 1, -1, -1):
        W, _ = net.decoder[t]
        if t == len(net.decoder) - 1:
            dz = delta * net.sigma**2
            dec_grads[t] = (dec[t].T @ dz, delta.sum(axis=0))
        else:
            a = dec[t + 1]
            dz = delta * a * (1.0 - a)
            dec_grads[t] = (dec[t].T @ dz, dz.sum(axis=0))
        delta = dz @ W.T
    enc_grads = _backprop_encoder(enc, delta, net)
    return loss, enc_grads, dec_grads


def _sgd(layers: list[Layer], grads: list[Layer], eta: float) -> list[Layer]:
    return [(W - eta * gW, c - eta * gc) for (W, c), (gW, gc) in zip(layers, grads)]


def _all_finite(arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def _minibatches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for m in range(math.ceil(n / size)):
        yield order[m * size:(m + 1) * size]


def finetune_unsupervised(net: AutoencoderNet, data: np.ndarray, epochs: int = 500,
                          eta: float = 0.001, minibatch_size: int = 32, seed: int = 0,
                          on_epoch: EpochCallback | None = None) -> AutoencoderNet:
    """Minibatch SGD on the reconstruction error. Returns a new network."""
    if eta < 0:
        raise ContractError("learning rate must be non-negative")
    data, _ = _as_batch(data, net.input_dim)
    rng = np.random.default_rng(seed)
    net = net.copy()
    for epoch in range(1, epochs + 1):
        for idx in _minibatches(data.shape[0], minibatch_size, rng):
            if eta == 0:
                continue
            _, ge, gd = mse_gradients(data[idx], net)
            net.encoder = _sgd(net.encoder, ge, eta)
            net.decoder = _sgd(net.decoder, gd, eta)
        if not _all_finite(net.arrays()):
            raise TrainingDivergenceError(f"autoencoder fine-tuning diverged in epoch {epoch}")
        if on_epoch is not None:
            on_epoch(epoch, reconstruction_error(data, net))
    return net


# --------------------------------------------------------------------------- #
# softmax head
# --------------------------------------------------------------------------- #
def head_log_probs(code: np.ndarray, head: SoftmaxHead) -> np.ndarray:
    return log_softmax(np.asarray(code, dtype=float) @ head.weights + head.bias, axis=-1)


def softmax_predict(v: np.ndarray, net: AutoencoderNet, head: SoftmaxHead) -> np.ndarray:
    """Class probabilities for standardized input rows."""
    if head.weights.shape[0] != net.code_dim:
        raise ContractError(f"head expects {head.weights.shape[0]} code units, net has {net.code_dim}")
    return np.exp(head_log_probs(encode(v, net), head))


def cross_entropy(probs: np.ndarray, labels) -> float:
    """Mean of ``-log probs[label]`` over rows."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    p = probs[np.arange(len(labels)), labels]
    if np.any(p < PROB_FLOOR):
        warnings.warn("zero probability at a true label; clamped", RuntimeWarning, stacklevel=2)
        p = np.maximum(p, PROB_FLOOR)
    return float(-np.mean(np.log(p)))


def supervised_gradients(data: np.ndarray, labels: np.ndarray, net: AutoencoderNet,
                         head: SoftmaxHead):
    """Cross-entropy and gradients as ``(loss, encoder_grads, (dW_head, dc_head))``."""
    data, _ = _as_batch(data, net.input_dim)
    labels = np.asarray(labels, dtype=int)
    n = data.shape[0]
    enc = _encode_all(data, net)
    logp = head_log_probs(enc[-1], head)
    loss = float(-np.mean(logp[np.arange(n), labels]))
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    head_grads = (enc[-1].T @ dlogits, dlogits.sum(axis=0))
    enc_grads = _backprop_encoder(enc, dlogits @ head.weights.T, net)
    return loss, enc_grads, head_grads


def finetune_supervised(net: AutoencoderNet, head: SoftmaxHead, data: np.ndarray,
                        labels: np.ndarray, epochs: int = 500, eta: float = 0.001,
                        minibatch_size: int = 32, seed: int = 0,
                        on_epoch: EpochCallback | None = None):
    """Minibatch SGD on cross-entropy through the head and the encoder."""
    if eta < 0:
        raise ContractError("learning rate must be non-negative")
    data, _ = _as_batch(data, net.input_dim)
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (data.shape[0],):
        raise ContractError("one label per row required")
    rng = np.random.default_rng(seed)
    net, head = net.copy(), head.copy()
    for epoch in range(1, epochs + 1):
        for idx in _minibatches(data.shape[0], minibatch_size, rng):
            if eta == 0:
                continue
            _, ge, (gW, gc) = supervised_gradients(data[idx], labels[idx], net, head)
            net.encoder = _sgd(net.encoder, ge, eta)
            head.weights = head.weights - eta * gW
            head.bias = head.bias - eta * gc
        if not _all_finite(net.arrays() + [head.weights, head.bias]):
            raise TrainingDivergenceError(f"supervised fine-tuning diverged in epoch {epoch}")
        if on_epoch is not None:
            on_epoch(epoch, cross_entropy(softmax_predict(data, net, head), labels))
    return net, head


def predict_rss(v: np.ndarray, net: AutoencoderNet, head: SoftmaxHead) -> np.ndarray:
    """Posterior-mean RSS in dBm: probabilities weighted by bin centers."""
    return softmax_predict(v, net, head) @ head.bin_centers
