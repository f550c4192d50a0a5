"""End-to-end training: scale, split, pre-train, unfold, fine-tune, supervise."""
from __future__ import annotations

import hashlib
import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autoencoder import (
    AutoencoderNet,
    SoftmaxHead,
    finetune_supervised,
    finetune_unsupervised,
    predict_rss,
    reconstruction_error,
    unfold,
)
from .datasets import (
    LabeledDataset,
    RssBins,
    StandardizationStats,
    accuracy,
    split,
    standardize,
)
from .gradients import LearningRateState
from .pretrain import PAPER_HIDDEN_SIZES, PretrainConfig, pretrain_stack, random_stack

logger = logging.getLogger(__name__)

SWEEP_HIDDEN_SIZES = (64, 56, 48, 32, 16, 12, 8)


@dataclass
class RunConfig:
    """Experiment constants. Keys match the flat ``key = value`` config file."""

    hidden_sizes: list[int] = field(default_factory=lambda: list(PAPER_HIDDEN_SIZES))
    bins: int = 32
    pretrain_epochs: int = 250
    train_epochs: int = 500
    learning_rate: float = 0.001
    epsilon: float = 0.1
    cd_steps: int = 1
    minibatch: int = 32
    tolerance_db: float = 5.0
    n_train: int = 710
    enhanced_gradient: bool = True
    adaptive_lr: bool = True
    # 0 runs every configured pre-training epoch; > 0 enables the early stop
    patience: int = 0
    pretrain: bool = True
    seed: int = 0

    def __post_init__(self):
        self.hidden_sizes = [int(s) for s in self.hidden_sizes]
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError("hidden_sizes must be a nonempty list of positive integers")
        for name in ("bins", "pretrain_epochs", "cd_steps", "minibatch", "n_train"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if self.train_epochs < 0 or self.learning_rate < 0 or self.tolerance_db < 0:
            raise ValueError("train_epochs, learning_rate and tolerance_db must be >= 0")

    def to_text(self) -> str:
        return format_flat_config(self)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return parse_flat_config(cls, text)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(
            epochs=self.pretrain_epochs,
            cd_steps=self.cd_steps,
            minibatch_size=self.minibatch,
            lr_state=LearningRateState(self.learning_rate or 1e-12, self.epsilon),
            use_enhanced_gradient=self.enhanced_gradient,
            adaptive_lr=self.adaptive_lr,
            seed=self.seed,
            patience=self.patience,
        )


def format_flat_config(obj) -> str:
    """Inverse of :func:`parse_flat_config`; floats use ``repr`` so values round-trip."""
    lines = []
    for f in fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, list):
            text = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def parse_flat_config(cls, text: str):
    """Build dataclass ``cls`` from ``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        kwargs[key] = _parse_value(types[key], value, lineno)
    return cls(**kwargs)


def _parse_value(type_name, value: str, lineno: int):
    name = type_name if isinstance(type_name, str) else getattr(type_name, "__name__", "")
    try:
        if name.startswith("list"):
            return [int(v) for v in value.split(",") if v.strip()]
        if name == "bool":
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if name == "int":
            return int(value)
        if name == "float":
            return float(value)
    except ValueError:
        raise ValueError(f"config line {lineno}: bad value {value!r}") from None
    raise ValueError(f"config line {lineno}: unsupported type {name}")


class StageError(RuntimeError):
    """A training stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


@contextmanager
def _stage(name: str):
    try:
        yield
    except (ArithmeticError, ValueError) as exc:
        raise StageError(name, exc) from exc


@dataclass
class TrainedModel:
    net: AutoencoderNet
    head: SoftmaxHead
    scaler: StandardizationStats
    config: RunConfig

    def predict(self, features: np.ndarray) -> np.ndarray:
        """RSS in dBm per raw feature row.

        Rows are evaluated one at a time so a row's prediction never depends on
        which other rows share the call (BLAS rounding differs by batch shape).
        """
        Z = self.scaler.apply(np.atleast_2d(features))
        return np.array([predict_rss(z[None, :], self.net, self.head)[0] for z in Z])


@dataclass
class TrainResult:
    model: TrainedModel
    metrics: list[tuple[str, int, float]]
    report: dict


def _stage_seeds(seed: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1)[0]) for s in ss.spawn(5)]


def train(dataset: LabeledDataset, cfg: RunConfig) -> TrainResult:
    """Run every training stage on ``dataset`` and score the held-out split."""
    s_split, s_pre, s_ae, s_head, s_sup = _stage_seeds(cfg.seed)
    with _stage("split"):
        train_set, test_set = split(dataset, cfg.n_train, s_split)
        X_train, scaler = standardize(train_set.features)
    metrics: list[tuple[str, int, float]] = []

    pcfg = cfg.pretrain_config()
    pcfg.seed = s_pre
    with _stage("pretrain"):
        if cfg.pretrain and cfg.learning_rate > 0:
            stack = pretrain_stack(
                X_train, cfg.hidden_sizes, pcfg,
                on_epoch=lambda blk, ep, err: metrics.append((f"pretrain_block{blk}", ep, err)),
            )
        else:
            stack = random_stack(cfg.hidden_sizes, np.random.default_rng(s_pre), X_train.shape[1])
    net = unfold(stack)
    initial_mse = reconstruction_error(X_train, net)

    with _stage("finetune"):
        net = finetune_unsupervised(
            net, X_train, cfg.train_epochs, cfg.learning_rate, cfg.minibatch, s_ae,
            on_epoch=lambda ep, err: metrics.append(("finetune", ep, err)),
        )
    with _stage("quantize"):
        bins = RssBins(float(train_set.rss.min()), float(train_set.rss.max()), cfg.bins)
        labels = bins.assign(train_set.rss)
    head = SoftmaxHead.initialize(net.code_dim, bins.centers, np.random.default_rng(s_head))
    with _stage("supervised"):
        net, head = finetune_supervised(
            net, head, X_train, labels, cfg.train_epochs, cfg.learning_rate, cfg.minibatch, s_sup,
            on_epoch=lambda ep, err: metrics.append(("supervised", ep, err)),
        )
    model = TrainedModel(net, head, scaler, cfg)
    report = {
        "layer_dims": net.layer_dims,
        "initial_reconstruction_mse": initial_mse,
        "final_reconstruction_mse": reconstruction_error(X_train, net),
        "train": score(model, train_set),
        "test": score(model, test_set),
        "mean_baseline_test_accuracy": accuracy(
            np.full(len(test_set), train_set.rss.mean()), test_set.rss, cfg.tolerance_db),
    }
    return TrainResult(model, metrics, report)


def score(model: TrainedModel, data: LabeledDataset) -> dict:
    pred = model.predict(data.features)
    resid = pred - data.rss
    return {
        "rows": len(data),
        "accuracy": accuracy(pred, data.rss, model.config.tolerance_db),
        "mse_db2": float(np.mean(resid**2)),
        "mean_abs_db": float(np.mean(np.abs(resid))),
    }


def sweep_sizes(blocks: int, base=SWEEP_HIDDEN_SIZES) -> list[int]:
    if not 1 <= blocks <= len(base):
        raise ValueError(f"block count must be in [1, {len(base)}]")
    return list(base[:blocks])


def config_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)
