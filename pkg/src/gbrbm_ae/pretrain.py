"""Greedy layer-wise pre-training of a stack of GBRBM blocks."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .gradients import (
    LearningRateState,
    TrainingDivergenceError,
    adaptive_lr_select,
    apply_update,
    cd_gradient,
    enhanced_gradient,
)
from .rbm import ContractError, GbrbmParams, cd_stats, hidden_conditional, visible_mean

logger = logging.getLogger(__name__)

N_FEATURES = 9
PAPER_HIDDEN_SIZES = (64, 56, 48, 32, 16)
MIN_INPUT_STD = 1e-6

EpochCallback = Callable[[int, int, float], None]


@dataclass(frozen=True)
class LayerStack:
    blocks: tuple[GbrbmParams, ...]

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if not blocks:
            raise ContractError("a stack needs at least one block")
        for t in range(1, len(blocks)):
            if blocks[t].n_visible != blocks[t - 1].n_hidden:
                raise ContractError(
                    f"block {t + 1} has {blocks[t].n_visible} visibles but block {t} "
                    f"has {blocks[t - 1].n_hidden} hiddens"
                )
        object.__setattr__(self, "blocks", blocks)

    @property
    def layer_dims(self) -> list[int]:
        return [self.blocks[0].n_visible] + [b.n_hidden for b in self.blocks]

    def __len__(self) -> int:
        return len(self.blocks)


@dataclass
class PretrainConfig:
    epochs: int = 250
    cd_steps: int = 1
    minibatch_size: int = 32
    lr_state: LearningRateState = field(default_factory=lambda: LearningRateState(0.001, 0.1))
    use_enhanced_gradient: bool = True
    adaptive_lr: bool = True
    seed: int = 0
    # convergence: stop a block once its best epoch error has not improved by
    # min_delta for `patience` consecutive epochs; patience 0 disables the check
    patience: int = 10
    min_delta: float = 1e-5
    visible_sigma: float = 1.0

    def __post_init__(self):
        for name in ("epochs", "cd_steps", "minibatch_size"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.patience < 0:
            raise ContractError("patience must be >= 0")


def random_stack(dims: Sequence[int], rng: np.random.Generator,
                 n_features: int = N_FEATURES) -> LayerStack:
    """Untrained stack with the initial weight distribution used by pre-training."""
    sizes = [n_features, *dims]
    return LayerStack(tuple(
        GbrbmParams.initialize(sizes[t], sizes[t + 1], rng) for t in range(len(dims))
    ))


def reconstruction_mse(data: np.ndarray, params: GbrbmParams) -> float:
    """Mean summed squared error of the mean-field reconstruction ``b + W p(h|v)``."""
    rec = visible_mean(hidden_conditional(data, params), params)
    return float(np.mean(np.sum((rec - data) ** 2, axis=1)))


def train_block(data: np.ndarray, params: GbrbmParams, cfg: PretrainConfig,
                rng: np.random.Generator, block_index: int = 1,
                on_epoch: EpochCallback | None = None) -> GbrbmParams:
    """Train one GBRBM block with CD-k, optional enhanced gradient and adaptive rate."""
    n = data.shape[0]
    n_batches = math.ceil(n / cfg.minibatch_size)
    lr = cfg.lr_state
    best = math.inf
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        errors = []
        for m in range(n_batches):
            batch = data[order[m * cfg.minibatch_size:(m + 1) * cfg.minibatch_size]]
            stats = cd_stats(batch, params, cfg.cd_steps, rng)
            grad = cd_gradient(stats, params)
            if cfg.use_enhanced_gradient:
                grad = enhanced_gradient(stats, grad, params.sigma)
            if cfg.adaptive_lr:
                eta, lr = adaptive_lr_select(params, grad, batch, stats.model_visible, lr)
            else:
                eta = lr.eta
            try:
                params = apply_update(params, grad, eta)
            except TrainingDivergenceError as exc:
                raise TrainingDivergenceError(
                    f"block {block_index} diverged in epoch {epoch}: {exc}"
                ) from exc
            errors.append(reconstruction_mse(batch, params) * len(batch))
        err = float(np.sum(errors) / n)
        if on_epoch is not None:
            on_epoch(block_index, epoch, err)
        if cfg.patience:
            if err < best - cfg.min_delta:
                best, stale = err, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    logger.info("block %d converged after %d epochs", block_index, epoch)
                    break
    return params


def fold_scaling(params: GbrbmParams, mean: np.ndarray, scale: np.ndarray) -> GbrbmParams:
    """Block trained on ``z = (x - mean) / scale`` rewritten over raw ``x``.

    The result has ``sigma = scale * sigma_z`` and defines the same joint
    distribution (and the same ``p(h | x)``) as the original block over ``z``.
    """
    W = params.weights
    return GbrbmParams(
        weights=W * scale[:, None],
        visible_bias=mean + scale * params.visible_bias,
        hidden_bias=params.hidden_bias - W.T @ (mean / (scale * params.sigma2)),
        sigma=scale * params.sigma,
    )


def input_scaling(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    return mean, np.where(std > MIN_INPUT_STD, std, 1.0)


def pretrain_stack(data: np.ndarray, dims: Sequence[int], cfg: PretrainConfig,
                   on_epoch: EpochCallback | None = None) -> LayerStack:
    """Train block 1 on ``data``, then each next block on the previous block's
    hidden probabilities. Deterministic for a fixed ``cfg.seed``.

    Blocks above the first see standardized activations during training and are
    stored with the scaling folded in (``sigma`` = activation spread).
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ContractError("data must be a nonempty 2-D array")
    if not dims:
        raise ContractError("dims must be nonempty")
    rng = np.random.default_rng(cfg.seed)
    sizes = [data.shape[1], *dims]
    blocks = []
    x = data
    for t in range(len(dims)):
        params = GbrbmParams.initialize(sizes[t], sizes[t + 1], rng,
                                        sigma=np.full(sizes[t], cfg.visible_sigma))
        if t == 0:
            params = train_block(x, params, cfg, rng, block_index=1, on_epoch=on_epoch)
        else:
            mean, scale = input_scaling(x)
            params = train_block((x - mean) / scale, params, cfg, rng,
                                 block_index=t + 1, on_epoch=on_epoch)
            params = fold_scaling(params, mean, scale)
        blocks.append(params)
        x = hidden_conditional(x, params)
    return LayerStack(tuple(blocks))


def propagate_up(v: np.ndarray, stack: LayerStack, through: int | None = None) -> np.ndarray:
    """Mean-field activations of level ``through`` (1-based; default: top)."""
    if through is None:
        through = len(stack)
    if not 1 <= through <= len(stack):
        raise IndexError(f"through must be in [1, {len(stack)}], got {through}")
    x = np.asarray(v, dtype=float)
    for params in stack.blocks[:through]:
        x = hidden_conditional(x, params)
    return x


def propagate_down(h: np.ndarray, stack: LayerStack) -> np.ndarray:
    """Top-level activations back to the input space through the visible means."""
    x = np.asarray(h, dtype=float)
    for params in reversed(stack.blocks):
        x = visible_mean(x, params)
    return x


def stack_reconstruction_error(data: np.ndarray, stack: LayerStack) -> float:
    """Mean summed squared error of an up-then-down deterministic pass."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    rec = propagate_down(propagate_up(data, stack), stack)
    return float(np.mean(np.sum((rec - data) ** 2, axis=1)))
