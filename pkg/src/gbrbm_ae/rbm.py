"""Gaussian-Bernoulli RBM: energy, conditionals, Gibbs sampling and exact oracles.

Coupling convention: the visible term enters the interaction as ``v_i / sigma_i**2``
so that ``p(v | h)`` is Gaussian with mean ``b + W h`` and variance ``sigma**2``,
and ``p(h_j = 1 | v) = sigmoid(c_j + sum_i W_ij v_i / sigma_i**2)``.

Small models (``n_h <= MAX_ENUM_HIDDEN``) admit exact likelihoods: for a fixed
hidden configuration the visible integral is Gaussian, so the partition function
is a finite sum over ``2**n_h`` closed-form terms.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

MAX_ENUM_HIDDEN = 20
INIT_WEIGHT_STD = 0.01

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class ContractError(ValueError):
    """Raised when array shapes or values violate an operation's contract."""


class EnumerationBoundError(ValueError):
    """Raised when exact enumeration is requested for too many hidden units."""


@dataclass(frozen=True)
class GbrbmParams:
    """Parameters of one GBRBM block.

    ``weights`` is ``(n_v, n_h)``; ``sigma`` is fixed during training.
    """

    weights: np.ndarray
    visible_bias: np.ndarray
    hidden_bias: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.visible_bias, dtype=float)
        c = np.asarray(self.hidden_bias, dtype=float)
        s = np.asarray(self.sigma, dtype=float)
        if W.ndim != 2 or b.ndim != 1 or c.ndim != 1 or s.ndim != 1:
            raise ContractError("weights must be 2-D and biases/sigma 1-D")
        if W.shape != (b.size, c.size) or s.size != b.size:
            raise ContractError(
                f"inconsistent shapes: W{W.shape}, b({b.size},), c({c.size},), sigma({s.size},)"
            )
        if np.any(s <= 0):
            raise ContractError("sigma entries must be positive")
        for name, arr in (("weights", W), ("visible_bias", b), ("hidden_bias", c), ("sigma", s)):
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"{name} contains non-finite entries")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "visible_bias", b)
        object.__setattr__(self, "hidden_bias", c)
        object.__setattr__(self, "sigma", s)

    @property
    def n_visible(self) -> int:
        return self.weights.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.weights.shape[1]

    @property
    def sigma2(self) -> np.ndarray:
        return self.sigma**2

    def replace(self, **changes) -> "GbrbmParams":
        fields = dict(
            weights=self.weights,
            visible_bias=self.visible_bias,
            hidden_bias=self.hidden_bias,
            sigma=self.sigma,
        )
        fields.update(changes)
        return GbrbmParams(**fields)

    @classmethod
    def initialize(cls, n_visible: int, n_hidden: int, rng: np.random.Generator,
                   sigma: np.ndarray | None = None) -> "GbrbmParams":
        """Small Gaussian weights (std 0.01), zero biases, unit sigma by default."""
        if sigma is None:
            sigma = np.ones(n_visible)
        return cls(
            weights=rng.normal(0.0, INIT_WEIGHT_STD, size=(n_visible, n_hidden)),
            visible_bias=np.zeros(n_visible),
            hidden_bias=np.zeros(n_hidden),
            sigma=sigma,
        )


@dataclass(frozen=True)
class SampleState:
    visible: np.ndarray
    hidden: np.ndarray


@dataclass(frozen=True)
class GradientTriple:
    dW: np.ndarray
    db: np.ndarray
    dc: np.ndarray

    def __post_init__(self):
        for name in ("dW", "db", "dc"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.dW)) and np.all(np.isfinite(self.db))
                    and np.all(np.isfinite(self.dc)))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.dW.ravel(), self.db, self.dc])


@dataclass(frozen=True)
class SufficientStats:
    """Data-side and model-side expectations of v, h and v h^T over a batch.

    ``model_visible`` keeps the visible samples behind the model side (Gibbs
    reconstructions) so they can serve as importance-sampling support.
    """

    data_vh: np.ndarray
    model_vh: np.ndarray
    data_v: np.ndarray
    model_v: np.ndarray
    data_h: np.ndarray
    model_h: np.ndarray
    batch_size: int
    model_visible: np.ndarray | None = field(default=None, repr=False)


def _check_visible(v: np.ndarray, params: GbrbmParams) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != params.n_visible:
        raise ContractError(f"visible dimension {v.shape[-1]} != {params.n_visible}")
    return v


def _check_hidden(h: np.ndarray, params: GbrbmParams, binary: bool = True) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != params.n_hidden:
        raise ContractError(f"hidden dimension {h.shape[-1]} != {params.n_hidden}")
    if binary and not np.all((h == 0.0) | (h == 1.0)):
        raise ContractError("hidden state must be binary")
    return h


def hidden_input(v: np.ndarray, params: GbrbmParams) -> np.ndarray:
    """Hidden pre-activations ``c + (v / sigma**2) @ W``."""
    v = _check_visible(v, params)
    return params.hidden_bias + (v / params.sigma2) @ params.weights


def energy(state: SampleState, params: GbrbmParams) -> float | np.ndarray:
    """E(v, h). Works on single states or row-stacked batches."""
    v = _check_visible(state.visible, params)
    h = _check_hidden(state.hidden, params)
    quad = np.sum((v - params.visible_bias) ** 2 / (2.0 * params.sigma2), axis=-1)
    coupling = np.sum(((v / params.sigma2) @ params.weights) * h, axis=-1)
    return quad - coupling - h @ params.hidden_bias


def free_energy(v: np.ndarray, params: GbrbmParams) -> float | np.ndarray:
    """F(v) = -log sum_h exp(-E(v, h))."""
    v = _check_visible(v, params)
    quad = np.sum((v - params.visible_bias) ** 2 / (2.0 * params.sigma2), axis=-1)
    return quad - np.sum(np.logaddexp(0.0, hidden_input(v, params)), axis=-1)


def hidden_conditional(v: np.ndarray, params: GbrbmParams) -> np.ndarray:
    return expit(hidden_input(v, params))


def visible_conditional(h: np.ndarray, params: GbrbmParams) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of the Gaussian ``p(v | h)``."""
    h = _check_hidden(h, params)
    mean = params.visible_bias + h @ params.weights.T
    return mean, np.broadcast_to(params.sigma2, mean.shape).copy()


def visible_mean(h: np.ndarray, params: GbrbmParams) -> np.ndarray:
    """``b + W h`` for real-valued (mean-field) hidden activations."""
    h = _check_hidden(h, params, binary=False)
    return params.visible_bias + h @ params.weights.T


def gibbs_step(v: np.ndarray, params: GbrbmParams, rng: np.random.Generator):
    """One block-Gibbs sweep v -> h -> v'.

    Returns ``(h_sample, v_next, h_prob)``.
    """
    h_prob = hidden_conditional(v, params)
    h_sample = (rng.random(h_prob.shape) < h_prob).astype(float)
    mean, _ = visible_conditional(h_sample, params)
    v_next = mean + params.sigma * rng.standard_normal(mean.shape)
    return h_sample, v_next, h_prob


def stats_from_samples(data: np.ndarray, model_visible: np.ndarray,
                       params: GbrbmParams) -> SufficientStats:
    """Batch expectations with mean-field hidden activations on both sides."""
    data = np.atleast_2d(_check_visible(data, params))
    model_visible = np.atleast_2d(_check_visible(model_visible, params))
    if data.shape[0] == 0:
        raise ContractError("empty batch")
    ph_d = hidden_conditional(data, params)
    ph_m = hidden_conditional(model_visible, params)
    n = data.shape[0]
    m = model_visible.shape[0]
    return SufficientStats(
        data_vh=data.T @ ph_d / n,
        model_vh=model_visible.T @ ph_m / m,
        data_v=data.mean(axis=0),
        model_v=model_visible.mean(axis=0),
        data_h=ph_d.mean(axis=0),
        model_h=ph_m.mean(axis=0),
        batch_size=n,
        model_visible=model_visible,
    )


def gibbs_chain(batch: np.ndarray, params: GbrbmParams, k: int,
                rng: np.random.Generator) -> np.ndarray:
    """Run ``k`` Gibbs sweeps starting at ``batch``; return the final visibles."""
    v = np.atleast_2d(np.asarray(batch, dtype=float))
    for _ in range(k):
        _, v, _ = gibbs_step(v, params, rng)
    return v


def cd_stats(batch: np.ndarray, params: GbrbmParams, k: int,
             rng: np.random.Generator) -> SufficientStats:
    """CD-k statistics: data side from ``batch``, model side from its k-step reconstruction."""
    if k < 1:
        raise ContractError("k must be >= 1")
    batch = np.atleast_2d(_check_visible(batch, params))
    if batch.shape[0] == 0:
        raise ContractError("empty batch")
    return stats_from_samples(batch, gibbs_chain(batch, params, k, rng), params)


# --------------------------------------------------------------------------- #
# exact enumeration oracles
# --------------------------------------------------------------------------- #
def _check_enumerable(params: GbrbmParams) -> None:
    if params.n_hidden > MAX_ENUM_HIDDEN:
        raise EnumerationBoundError(
            f"exact enumeration needs n_h <= {MAX_ENUM_HIDDEN}, got {params.n_hidden}"
        )


def hidden_configurations(n_hidden: int) -> np.ndarray:
    """All ``2**n_hidden`` binary vectors as rows."""
    if n_hidden == 0:
        return np.zeros((1, 0))
    return np.array(list(itertools.product((0.0, 1.0), repeat=n_hidden)))


def _hidden_log_weights(params: GbrbmParams, H: np.ndarray):
    # log of int exp(-E(v, h)) dv for each configuration h, and the conditional means
    means = params.visible_bias + H @ params.weights.T
    b = params.visible_bias
    logw = (np.sum((means**2 - b**2) / (2.0 * params.sigma2), axis=1)
            + H @ params.hidden_bias
            + np.sum(_LOG_SQRT_2PI + np.log(params.sigma)))
    return logw, means


def log_partition(params: GbrbmParams) -> float:
    _check_enumerable(params)
    logw, _ = _hidden_log_weights(params, hidden_configurations(params.n_hidden))
    return float(logsumexp(logw))


def exact_log_likelihood(data: np.ndarray, params: GbrbmParams) -> float:
    """Mean log-density of the rows of ``data`` under the model."""
    _check_enumerable(params)
    data = np.atleast_2d(_check_visible(data, params))
    return float(np.mean(-free_energy(data, params)) - log_partition(params))


def exact_model_moments(params: GbrbmParams):
    """Exact ``(<v h^T>_m, <v>_m, <h>_m)`` by enumeration."""
    _check_enumerable(params)
    H = hidden_configurations(params.n_hidden)
    logw, means = _hidden_log_weights(params, H)
    p = np.exp(logw - logsumexp(logw))
    return (means * p[:, None]).T @ H, p @ means, p @ H


def exact_stats(data: np.ndarray, params: GbrbmParams) -> SufficientStats:
    """Sufficient statistics with the model side computed exactly."""
    data = np.atleast_2d(_check_visible(data, params))
    if data.shape[0] == 0:
        raise ContractError("empty batch")
    ph = hidden_conditional(data, params)
    n = data.shape[0]
    model_vh, model_v, model_h = exact_model_moments(params)
    return SufficientStats(
        data_vh=data.T @ ph / n,
        model_vh=model_vh,
        data_v=data.mean(axis=0),
        model_v=model_v,
        data_h=ph.mean(axis=0),
        model_h=model_h,
        batch_size=n,
    )


def exact_gradient(data: np.ndarray, params: GbrbmParams) -> GradientTriple:
    """Gradient of ``exact_log_likelihood`` w.r.t. (W, b, c)."""
    st = exact_stats(data, params)
    s2 = params.sigma2
    return GradientTriple(
        dW=(st.data_vh - st.model_vh) / s2[:, None],
        db=(st.data_v - st.model_v) / s2,
        dc=st.data_h - st.model_h,
    )


def sample_exact(params: GbrbmParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Independent draws of v from the model (ancestral: h from its marginal, then v | h)."""
    _check_enumerable(params)
    H = hidden_configurations(params.n_hidden)
    logw, means = _hidden_log_weights(params, H)
    p = np.exp(logw - logsumexp(logw))
    idx = rng.choice(len(H), size=n, p=p / p.sum())
    return means[idx] + params.sigma * rng.standard_normal((n, params.n_visible))
