"""Forward noising process and the epsilon-prediction training loss.

The same functions serve pixel-space and latent-space diffusion; nothing here
knows which space a tensor lives in.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, ParameterError
from .numerics import gaussian


@dataclass
class NoisySample:
    x_t: np.ndarray
    t: np.ndarray
    eps: np.ndarray
    class_label: Optional[np.ndarray] = None


def _per_sample(coef, x):
    """Broadcast a per-batch-element coefficient over the trailing axes of ``x``."""
    coef = np.asarray(coef, dtype=np.float64)
    if coef.ndim == 0:
        return coef
    return coef.reshape((-1,) + (1,) * (x.ndim - 1))


def forward_marginal(x0, t, s, rng, class_label=None):
    """Sample ``x_t ~ q(x_t | x_0)`` in closed form; ``t`` may be per-element."""
    x0 = np.asarray(x0, dtype=np.float64)
    if not np.all(np.isfinite(x0)):
        raise ParameterError("x0 has non-finite entries")
    t = s.check_t(t, allow_zero=True)
    ab = s.alpha_bar[t]
    eps = gaussian(rng, x0.shape)
    x_t = _per_sample(np.sqrt(ab), x0) * x0 + _per_sample(np.sqrt(1.0 - ab), x0) * eps
    return NoisySample(x_t, t, eps, class_label)


def forward_step(x_prev, t, s, rng):
    """One application of ``q(x_t | x_{t-1}) = N(sqrt(1 - beta_t) x_{t-1}, beta_t I)``."""
    x_prev = np.asarray(x_prev, dtype=np.float64)
    t = s.check_t(t)
    b = s.beta[t]
    z = gaussian(rng, x_prev.shape)
    return _per_sample(np.sqrt(1.0 - b), x_prev) * x_prev + _per_sample(np.sqrt(b), x_prev) * z


def posterior_mean(x_t, eps_hat, t, s):
    """Deterministic part of the ancestral step: ``(x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t)``."""
    if np.shape(x_t) != np.shape(eps_hat):
        raise ContractError(f"shape mismatch: x_t {np.shape(x_t)} vs eps_hat {np.shape(eps_hat)}")
    t = s.check_t(t)
    coef = (1.0 - s.alpha[t]) / np.sqrt(1.0 - s.alpha_bar[t])
    return (x_t - _per_sample(coef, x_t) * eps_hat) / _per_sample(np.sqrt(s.alpha[t]), x_t)


def simple_loss(d, x0, labels, s, rng):
    """Mean squared error between injected and predicted noise, with gradients.

    ``d`` must expose ``forward(x_t, t, c) -> (eps_hat, tape)`` and
    ``backward(tape, d_eps_hat) -> dict``. Timesteps are uniform on 1..T, one
    per batch element; gradients are averaged over the batch.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape[0] == 0:
        raise ParameterError("empty batch")
    B = x0.shape[0]
    t = rng.integers(1, s.T + 1, size=B)
    sample = forward_marginal(x0, t, s, rng, labels)
    eps_hat, tape = d.forward(sample.x_t, t, labels)
    if eps_hat.shape != x0.shape:
        raise ContractError(f"denoiser output {eps_hat.shape} does not match input {x0.shape}")
    diff = eps_hat - sample.eps
    loss = float(np.mean(diff * diff))
    grads = d.backward(tape, 2.0 * diff / diff.size)
    return loss, grads
