"""Parameter updates for GBRBM blocks.

Plain CD gradients, data/model covariances, hidden-unit bit-flip transforms,
the flip-invariant enhanced gradient and adaptive learning-rate selection.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .rbm import ContractError, GbrbmParams, GradientTriple, SufficientStats, free_energy

__all__ = [
    "FlipMask",
    "GradientTriple",
    "LearningRateState",
    "TrainingDivergenceError",
    "adaptive_lr_select",
    "apply_update",
    "cd_gradient",
    "covariance",
    "enhanced_gradient",
    "flip_transform",
    "lr_scores",
]


class TrainingDivergenceError(FloatingPointError):
    """Raised when an update produces non-finite parameters."""


@dataclass(frozen=True)
class FlipMask:
    """Units to relabel as ``1 - x``. Visible flips must stay zero for Gaussian visibles."""

    hidden: np.ndarray
    visible: np.ndarray | None = None

    def __post_init__(self):
        g = np.asarray(self.hidden, dtype=float)
        if not np.all((g == 0) | (g == 1)):
            raise ContractError("flip mask entries must be 0 or 1")
        object.__setattr__(self, "hidden", g)
        if self.visible is not None:
            f = np.asarray(self.visible, dtype=float)
            if np.any(f != 0):
                raise ContractError("visible units are Gaussian; visible flips are not defined")
            object.__setattr__(self, "visible", f)


@dataclass(frozen=True)
class LearningRateState:
    """Current rate, multiplicative step ``epsilon`` and an upper bound on the rate.

    The bound keeps the importance-sampled selection from running away when the
    sample support (a minibatch of reconstructions) underestimates partition growth.
    """

    eta: float
    epsilon: float = 0.1
    max_eta: float = 0.1

    def __post_init__(self):
        if not self.eta > 0:
            raise ContractError(f"learning rate must be positive, got {self.eta}")
        if not 0 <= self.epsilon < 1:
            raise ContractError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if not self.max_eta > 0:
            raise ContractError(f"max_eta must be positive, got {self.max_eta}")

    def candidates(self) -> np.ndarray:
        """Candidate rates in fixed order, largest first, clipped at ``max_eta``."""
        e = self.epsilon
        etas = self.eta * np.array([(1 + e) ** 2, 1 + e, 1.0, 1 - e, (1 - e) ** 2])
        return np.minimum(etas, self.max_eta)


def _check_stats(stats: SufficientStats, n_v: int, n_h: int) -> None:
    if stats.data_vh.shape != (n_v, n_h) or stats.model_vh.shape != (n_v, n_h):
        raise ContractError(f"stats shape {stats.data_vh.shape} does not match ({n_v}, {n_h})")


def cd_gradient(stats: SufficientStats, params: GbrbmParams) -> GradientTriple:
    _check_stats(stats, params.n_visible, params.n_hidden)
    s2 = params.sigma2
    return GradientTriple(
        dW=(stats.data_vh - stats.model_vh) / s2[:, None],
        db=(stats.data_v - stats.model_v) / s2,
        dc=stats.data_h - stats.model_h,
    )


def covariance(stats: SufficientStats, side: str) -> np.ndarray:
    """``<v h^T> - <v><h>^T`` under the data (``"data"``) or model (``"model"``) side."""
    if side == "data":
        return stats.data_vh - np.outer(stats.data_v, stats.data_h)
    if side == "model":
        return stats.model_vh - np.outer(stats.model_v, stats.model_h)
    raise ValueError(f"side must be 'data' or 'model', got {side!r}")


def flip_transform(params: GbrbmParams, mask: FlipMask) -> GbrbmParams:
    """Re-express the model with the masked hidden units relabelled ``h -> 1 - h``.

    The energy of every configuration shifts by one mask-dependent constant, and
    applying the same mask twice restores the original parameters.
    """
    g = mask.hidden
    if g.shape != (params.n_hidden,):
        raise ContractError(f"mask length {g.size} != n_hidden {params.n_hidden}")
    signs = 1.0 - 2.0 * g
    return params.replace(
        weights=params.weights * signs,
        visible_bias=params.visible_bias + params.weights @ g,
        hidden_bias=params.hidden_bias * signs,
    )


def flip_stats(stats: SufficientStats, mask: FlipMask) -> SufficientStats:
    """Statistics of the relabelled hidden units ``g + (1 - 2g) h``."""
    g = mask.hidden
    s = 1.0 - 2.0 * g
    return SufficientStats(
        data_vh=np.outer(stats.data_v, g) + stats.data_vh * s,
        model_vh=np.outer(stats.model_v, g) + stats.model_vh * s,
        data_v=stats.data_v,
        model_v=stats.model_v,
        data_h=g + s * stats.data_h,
        model_h=g + s * stats.model_h,
        batch_size=stats.batch_size,
        model_visible=stats.model_visible,
    )


def enhanced_gradient(stats: SufficientStats, plain: GradientTriple,
                      sigma: np.ndarray | None = None) -> GradientTriple:
    """Covariance-based gradient that is invariant to hidden bit flips.

    Visible statistics enter as ``v / sigma**2`` (the quantity coupled to the
    weights); ``sigma=None`` means unit variances.
    """
    n_v, n_h = plain.dW.shape
    _check_stats(stats, n_v, n_h)
    inv_s2 = np.ones(n_v) if sigma is None else 1.0 / np.asarray(sigma, dtype=float) ** 2
    dW = (covariance(stats, "data") - covariance(stats, "model")) * inv_s2[:, None]
    h_dm = 0.5 * (stats.data_h + stats.model_h)
    x_dm = 0.5 * (stats.data_v + stats.model_v) * inv_s2
    return GradientTriple(
        dW=dW,
        db=plain.db - dW @ h_dm,
        dc=plain.dc - dW.T @ x_dm,
    )


def apply_update(params: GbrbmParams, grad: GradientTriple, eta: float) -> GbrbmParams:
    if not eta > 0:
        raise ContractError(f"learning rate must be positive, got {eta}")
    with np.errstate(over="ignore", invalid="ignore"):
        W = params.weights + eta * grad.dW
        b = params.visible_bias + eta * grad.db
        c = params.hidden_bias + eta * grad.dc
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
        raise TrainingDivergenceError(f"non-finite parameters after update with eta={eta:g}")
    return params.replace(weights=W, visible_bias=b, hidden_bias=c)


def _shifted(params: GbrbmParams, grad: GradientTriple, eta: float) -> GbrbmParams | None:
    W = params.weights + eta * grad.dW
    b = params.visible_bias + eta * grad.db
    c = params.hidden_bias + eta * grad.dc
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
        return None
    return params.replace(weights=W, visible_bias=b, hidden_bias=c)


def lr_scores(params: GbrbmParams, grad: GradientTriple, batch: np.ndarray,
              model_samples: np.ndarray, etas: np.ndarray) -> np.ndarray:
    """Importance-sampled batch log-likelihood (up to a shared constant) per candidate rate.

    ``log Z(theta_c) - log Z(theta)`` is estimated from ``model_samples`` drawn
    under ``theta``; the common ``log Z(theta)`` cancels across candidates.
    """
    batch = np.atleast_2d(batch)
    model_samples = np.atleast_2d(model_samples)
    if model_samples.shape[0] == 0:
        raise ContractError("adaptive learning rate needs at least one model sample")
    n = batch.shape[0]
    f_base = free_energy(model_samples, params)
    scores = np.full(len(etas), -np.inf)
    with np.errstate(over="ignore", invalid="ignore"):
        for i, eta in enumerate(etas):
            cand = _shifted(params, grad, float(eta))
            if cand is None:
                continue
            log_ratio = logsumexp(f_base - free_energy(model_samples, cand)) - np.log(len(f_base))
            s = -np.sum(free_energy(batch, cand)) - n * log_ratio
            if np.isfinite(s):
                scores[i] = s
    return scores


def adaptive_lr_select(params: GbrbmParams, grad: GradientTriple, batch: np.ndarray,
                       model_samples: np.ndarray, lr: LearningRateState):
    """Pick the candidate rate with the best estimated likelihood.

    Returns ``(eta, new_state)`` where ``new_state.eta == eta``. Ties resolve to
    the first candidate in :meth:`LearningRateState.candidates` order.
    """
    etas = lr.candidates()
    scores = lr_scores(params, grad, batch, model_samples, etas)
    if np.all(np.isneginf(scores)):
        eta = float(etas[-1])
    else:
        eta = float(etas[int(np.argmax(scores))])
    return eta, LearningRateState(eta=eta, epsilon=lr.epsilon, max_eta=lr.max_eta)
