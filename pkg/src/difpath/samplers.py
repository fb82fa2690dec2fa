"""Reverse-process samplers: DDPM ancestral, DDIM, epsilon scaling, and CFG.

``sample`` draws all randomness from counter offsets of per-step streams:
sample ``i`` always reads its noise from the same positions, so results do
not depend on how the batch is split into chunks.
"""
from dataclasses import asdict, dataclass
import logging
from typing import Optional

import numpy as np

from .diffusion import posterior_mean
from .errors import ContractError, ParameterError, SizeError
from .numerics import gaussian, gaussian_words
from .schedule import subsequence

log = logging.getLogger(__name__)

KINDS = ("ddpm", "ddim", "eps")
VARIANCES = ("posterior", "beta")


@dataclass
class SamplerConfig:
    kind: str = "ddpm"
    n_steps: int = 1000
    eta: float = 0.0
    guidance_w: float = 0.0
    eps_scale_s: float = 1.014
    eps_scale_k: Optional[float] = None
    eps_scale_b: Optional[float] = None
    target_size: tuple = (32, 32)
    clip_x0: bool = True
    reverse_variance: str = "posterior"

    def __post_init__(self):
        self.kind = self.kind.lower()
        self.reverse_variance = self.reverse_variance.lower()
        self.target_size = tuple(int(v) for v in np.atleast_1d(self.target_size))
        if len(self.target_size) == 1:
            self.target_size = self.target_size * 2
        if self.kind not in KINDS:
            raise ParameterError(f"sampler kind must be one of {KINDS}, got {self.kind!r}")
        if self.reverse_variance not in VARIANCES:
            raise ParameterError(f"reverse_variance must be one of {VARIANCES}")
        if int(self.n_steps) < 1:
            raise ParameterError("n_steps must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError("eta must lie in [0, 1]")
        if self.guidance_w < 0:
            raise ParameterError("guidance_w must be >= 0")
        if self.eps_scale_s <= 0:
            raise ParameterError("eps_scale_s must be > 0")
        if (self.eps_scale_k is None) != (self.eps_scale_b is None):
            raise ParameterError("eps_scale_k and eps_scale_b must be given together")
        if any(v < 8 for v in self.target_size):
            raise SizeError(f"target_size extents must be >= 8, got {self.target_size}")

    def eps_lambda(self, t):
        if self.eps_scale_k is not None:
            return self.eps_scale_k * t + self.eps_scale_b
        return self.eps_scale_s

    def to_dict(self):
        d = asdict(self)
        d["target_size"] = list(self.target_size)
        return d


def cfg_combine(eps_cond, eps_uncond, w):
    """``(1 + w) * eps_cond - w * eps_uncond``."""
    if np.shape(eps_cond) != np.shape(eps_uncond):
        raise ContractError(f"shape mismatch {np.shape(eps_cond)} vs {np.shape(eps_uncond)}")
    return (1.0 + w) * eps_cond - w * eps_uncond


def _draw(rng, z, shape):
    return gaussian(rng, shape) if z is None else z


def ddpm_step(x_t, eps_hat, t, s, rng=None, reverse_variance="posterior", sigma=None, z=None):
    """Ancestral step ``mu(x_t, eps_hat) + sigma_t z``; no noise at t == 1.

    ``sigma`` overrides the schedule-derived standard deviation.
    """
    mean = posterior_mean(x_t, eps_hat, t, s)
    if t <= 1:
        return mean
    if sigma is None:
        var = s.posterior_var[t] if reverse_variance == "posterior" else s.beta[t]
        sigma = np.sqrt(var)
    if sigma == 0.0:
        return mean
    return mean + sigma * _draw(rng, z, np.shape(x_t))


def ddim_sigma(s, t, t_prev, eta):
    """``eta * sqrt((1 - abar_prev) / (1 - abar_t) * beta_t)``.

    ``abar_prev`` is taken at the previous timestep actually visited, so the
    consecutive-step case is exactly ``eta * sqrt(posterior_var[t])`` and the
    final step into ``t_prev == 0`` carries no noise.
    """
    ab_t, ab_p = s.alpha_bar[t], s.alpha_bar[t_prev]
    return eta * np.sqrt((1.0 - ab_p) / (1.0 - ab_t) * s.beta[t])


def predict_x0(x_t, eps_hat, t, s):
    ab = s.alpha_bar[t]
    return (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def ddim_step(x_t, eps_hat, t, t_prev, s, eta=0.0, rng=None, clip_x0=False, z=None,
              events=None):
    if not 0 <= t_prev < t:
        raise ParameterError(f"need 0 <= t_prev < t, got t={t}, t_prev={t_prev}")
    if not 0.0 <= eta <= 1.0:
        raise ParameterError("eta must lie in [0, 1]")
    if np.shape(x_t) != np.shape(eps_hat):
        raise ContractError("x_t and eps_hat shapes differ")
    ab_p = s.alpha_bar[t_prev]
    x0 = predict_x0(x_t, eps_hat, t, s)
    if clip_x0:
        clipped = np.clip(x0, -1.0, 1.0)
        # keep the direction term consistent with the clipped estimate; without this
        # an off-distribution eps_hat feeds back through x_t and the chain diverges
        ab_t = s.alpha_bar[t]
        eps_hat = np.where(clipped != x0,
                           (x_t - np.sqrt(ab_t) * clipped) / np.sqrt(1.0 - ab_t), eps_hat)
        x0 = clipped
    sigma = ddim_sigma(s, t, t_prev, eta)
    dir_var = 1.0 - ab_p - sigma * sigma
    if dir_var < 0.0:
        sigma = np.sqrt(1.0 - ab_p)
        dir_var = 0.0
        msg = f"ddim sigma clamped at t={t}, t_prev={t_prev}"
        log.warning(msg)
        if events is not None:
            events.append(msg)
    out = np.sqrt(ab_p) * x0 + np.sqrt(dir_var) * eps_hat
    if sigma > 0.0:
        out = out + sigma * _draw(rng, z, np.shape(x_t))
    return out


def eps_scale_step(x_t, eps_hat, t, s, lam, rng=None, reverse_variance="posterior", z=None):
    """DDPM step on ``eps_hat / lam``."""
    if not lam > 0:
        raise ParameterError(f"epsilon scale must be > 0, got {lam}")
    return ddpm_step(x_t, eps_hat / lam, t, s, rng, reverse_variance, z=z)


def _timesteps(cfg, s):
    if cfg.kind == "ddim":
        seq = subsequence(s, min(int(cfg.n_steps), s.T))
        prev = np.concatenate([[0], seq[:-1]])
        return list(zip(seq[::-1].tolist(), prev[::-1].tolist()))
    if cfg.n_steps > s.T:
        raise ParameterError(f"n_steps {cfg.n_steps} exceeds T={s.T}")
    return [(t, t - 1) for t in range(s.T, 0, -1)]


def _noise(stream, start, count, size, shape):
    """Rows ``start .. start+count`` of a stream laid out as fixed-size per-sample blocks."""
    block = gaussian_words(size)
    z = gaussian(stream.at(start * block), (count, block))[:, :size]
    return z.reshape((count,) + shape)


def sample(d, s, cfg, class_label=None, n=1, rng=None, sample_shape=None, batch_size=64,
           trace=None, events=None):
    """Generate ``n`` samples by iterating the configured reverse step from pure noise.

    ``sample_shape`` is the per-sample shape; by default
    ``(*cfg.target_size, d.channels)``. When ``cfg.guidance_w > 0`` and a class
    is given, the denoiser runs twice per step and the two predictions are
    combined with ``cfg_combine``. ``trace`` (a list) receives one
    ``(op, t, t_prev)`` entry per step of the first chunk.
    """
    if sample_shape is None:
        sample_shape = tuple(cfg.target_size) + (d.channels,)
    sample_shape = tuple(int(v) for v in sample_shape)
    n = int(n)
    if n < 0:
        raise ParameterError("n must be >= 0")
    if n == 0:
        return np.zeros((0,) + sample_shape)
    if not getattr(d, "size_agnostic", False):
        trained = tuple(getattr(d, "train_shape", sample_shape))
        if trained != sample_shape:
            raise SizeError(f"denoiser is not size-agnostic: trained on {trained}, asked for {sample_shape}")
    size = int(np.prod(sample_shape))
    steps = _timesteps(cfg, s)
    guided = cfg.guidance_w > 0 and class_label is not None
    init_stream = rng.child(0)
    out = np.empty((n,) + sample_shape)
    # odd per-sample sizes would split Box-Muller pairs across chunks
    batch_size = max(2, batch_size - batch_size % 2)

    for start in range(0, n, batch_size):
        count = min(batch_size, n - start)
        c = None if class_label is None else np.broadcast_to(np.asarray(class_label), (count,))
        x = _noise(init_stream, start, count, size, sample_shape)
        for k, (t, t_prev) in enumerate(steps):
            tt = np.full(count, t, dtype=np.int64)
            eps = d.predict(x, tt, c)
            if guided:
                eps = cfg_combine(eps, d.predict(x, tt, None), cfg.guidance_w)
            step_rng = rng.child(k + 1)
            needs_noise = _needs_noise(cfg, s, t, t_prev)
            z = _noise(step_rng, start, count, size, sample_shape) if needs_noise else None
            if cfg.kind == "ddpm":
                x = ddpm_step(x, eps, t, s, reverse_variance=cfg.reverse_variance, z=z)
                op = "ddpm_step"
            elif cfg.kind == "eps":
                x = eps_scale_step(x, eps, t, s, cfg.eps_lambda(t),
                                   reverse_variance=cfg.reverse_variance, z=z)
                op = "eps_scale_step"
            else:
                x = ddim_step(x, eps, t, t_prev, s, cfg.eta, clip_x0=cfg.clip_x0, z=z,
                              events=events)
                op = "ddim_step"
            if trace is not None and start == 0:
                trace.append((op, t, t_prev))
        out[start:start + count] = x
    return out


def _needs_noise(cfg, s, t, t_prev):
    if cfg.kind == "ddim":
        return ddim_sigma(s, t, t_prev, cfg.eta) > 0.0
    if t <= 1:
        return False
    var = s.posterior_var[t] if cfg.reverse_variance == "posterior" else s.beta[t]
    return var > 0.0
